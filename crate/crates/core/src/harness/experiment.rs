use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exec::Execution;
use crate::models::{save_policy, PolicyModel, RewardModel, INIT_STD};
use crate::numerics::Prng;
use crate::trainers::{train_dpo, train_reference_mle, train_reward_model, TrainConfig};
use crate::world::{
    apply_shift, build_dataset, teacher_policy, write_world_sidecar, PreferenceDataset, ResponseSource, ShiftSpec,
    World, WorldSpec,
};

use super::report::{aggregate, emit_report, finding, EvalReport, Method, ReportFormat, Row};
use super::{pairwise_counts, HarnessError, RewardFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sizes {
    pub train_pairs: usize,
    pub eval_pairs: usize,
    /// Teacher samples the reference policy is fitted to.
    pub reference_samples: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self {
            train_pairs: 2000,
            eval_pairs: 500,
            reference_samples: 3000,
        }
    }
}

/// A named evaluation world: the training world moved by `shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalWorld {
    pub name: String,
    /// In-distribution. Only allowed for unshifted worlds.
    pub id: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<ShiftSpec>,
}

impl EvalWorld {
    fn is_unshifted(&self) -> bool {
        self.shift.as_ref().is_none_or(|s| s.strength == 0.0)
    }
}

/// A response generator built before the run: the teacher with the given
/// seed, improved by DPO on pairs from the training world's prompts.
/// Eval worlds reach it as `generators/<name>.ckpt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub name: String,
    pub teacher_seed: u64,
    #[serde(default = "default_teacher_std")]
    pub init_std: f64,
    pub pairs: usize,
    #[serde(default = "TrainConfig::dpo")]
    pub dpo: TrainConfig,
}

fn default_teacher_std() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub lr: Vec<f64>,
    pub epochs: Vec<usize>,
    /// DPO only; the DPO config's beta when empty.
    #[serde(default)]
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_train_world")]
    pub train_world: String,
    /// Training world. Its `seed` fixes every dataset of the run.
    #[serde(default)]
    pub world: WorldSpec,
    #[serde(default)]
    pub generators: Vec<GeneratorSpec>,
    pub eval_worlds: Vec<EvalWorld>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Training seeds: model init and batch order.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sizes: Sizes,
    #[serde(default = "default_reference")]
    pub reference: TrainConfig,
    #[serde(default = "TrainConfig::reward_model")]
    pub exrm: TrainConfig,
    #[serde(default = "TrainConfig::dpo")]
    pub dpo: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

fn default_train_world() -> String {
    "train".into()
}

fn default_methods() -> Vec<Method> {
    vec![Method::Exrm, Method::Dporm]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_reference() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::InvalidConfig(msg.into())
}

/// Names become directory and file names.
fn check_name(what: &str, name: &str) -> Result<(), HarnessError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(invalid(format!("{what} name {name:?} must be non-empty ASCII letters, digits, '_', '-' or '.'")))
    }
}

fn check_unique<'a>(what: &str, names: impl Iterator<Item = &'a str>) -> Result<(), HarnessError> {
    let mut seen = BTreeSet::new();
    for n in names {
        check_name(what, n)?;
        if !seen.insert(n) {
            return Err(invalid(format!("duplicate {what} name {n:?}")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        check_name("experiment", &self.name)?;
        check_name("train world", &self.train_world)?;
        self.world.validate()?;
        if self.eval_worlds.is_empty() {
            return Err(invalid("at least one eval world is required"));
        }
        check_unique("eval world", self.eval_worlds.iter().map(|w| w.name.as_str()))?;
        if !self.eval_worlds.iter().any(|w| w.id) {
            return Err(invalid("at least one eval world must be marked id"));
        }
        for w in &self.eval_worlds {
            if w.id && !w.is_unshifted() {
                return Err(invalid(format!("eval world {:?} is marked id but is shifted", w.name)));
            }
            if w.name == self.train_world && !w.is_unshifted() {
                return Err(invalid(format!("eval world {:?} shares the train world's name but is shifted", w.name)));
            }
            if let Some(s) = &w.shift {
                apply_shift(&self.world, s)?;
            }
        }
        check_unique("generator", self.generators.iter().map(|g| g.name.as_str()))?;
        for g in &self.generators {
            if g.pairs == 0 {
                return Err(invalid(format!("generator {:?} needs at least one pair", g.name)));
            }
            g.dpo.validate_dpo()?;
        }
        if self.methods.is_empty() {
            return Err(invalid("no methods to train"));
        }
        if self.methods.iter().collect::<BTreeSet<_>>().len() != self.methods.len() {
            return Err(invalid("methods listed twice"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed is required"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(invalid("seeds must be distinct"));
        }
        let s = &self.sizes;
        if s.train_pairs == 0 || s.eval_pairs == 0 || s.reference_samples == 0 {
            return Err(invalid("sizes must be at least 1"));
        }
        self.reference.validate()?;
        self.exrm.validate()?;
        self.dpo.validate_dpo()?;
        for (what, c) in [("reference", &self.reference), ("exrm", &self.exrm), ("dpo", &self.dpo)] {
            if c.checkpoint.is_some() {
                return Err(invalid(format!("{what}.checkpoint is set by the run; remove it")));
            }
        }
        if let Some(g) = &self.sweep {
            if g.lr.is_empty() || g.epochs.is_empty() {
                return Err(invalid("sweep grid needs at least one lr and one epoch count"));
            }
        }
        Ok(())
    }

    fn id_world(&self) -> usize {
        self.eval_worlds.iter().position(|w| w.id).expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub format: ReportFormat,
    /// Where the world seed came from (`config`, `cli`, `env`), for the
    /// provenance string.
    pub seed_source: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            format: ReportFormat::Both,
            seed_source: "config".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub report: EvalReport,
    pub failures: Vec<Failure>,
}

struct Prepared {
    train: PreferenceDataset,
    corpus: Vec<(Vec<usize>, Vec<usize>)>,
    evals: Vec<PreferenceDataset>,
    oracle: BTreeMap<String, f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Stream layout under the world seed: 0 training pairs, 1 evaluation
/// pairs (shared by every eval world), 2 reference corpus, 3 generators.
fn prepare(config: &ExperimentConfig, dir: &Path) -> Result<Prepared, HarnessError> {
    let root = Prng::new(config.world.seed);
    for (i, g) in config.generators.iter().enumerate() {
        let spec = WorldSpec {
            responses: ResponseSource::Teacher {
                seed: g.teacher_seed,
                init_std: g.init_std,
                temperature: 1.0,
            },
            ..config.world.clone()
        };
        let world = World::new(spec.clone())?;
        let teacher = teacher_policy(&spec.responses, &spec.arch)?.expect("teacher source");
        let pairs = build_dataset(&world, g.pairs, &root.stream(3).stream(i as u64))?;
        let trained = train_dpo(&g.dpo, &pairs, &teacher)?;
        std::fs::create_dir_all(dir.join("generators"))?;
        save_policy(&trained.model, g.dpo.seed, dir.join("generators").join(format!("{}.ckpt", g.name)))?;
        log::info!("generator {} trained on {} pairs", g.name, g.pairs);
    }

    let worlds_dir = dir.join("worlds");
    let datasets_dir = dir.join("datasets");
    std::fs::create_dir_all(&datasets_dir)?;

    let train_world = World::with_base_dir(config.world.clone(), dir)?;
    std::fs::create_dir_all(worlds_dir.join(&config.train_world))?;
    write_world_sidecar(worlds_dir.join(&config.train_world), &config.world, config.world.seed)?;
    let train = build_dataset(&train_world, config.sizes.train_pairs, &root.stream(0))?;
    train.write_jsonl(datasets_dir.join("train.jsonl"))?;

    let corpus_rng = root.stream(2);
    let corpus = (0..config.sizes.reference_samples)
        .map(|i| -> Result<_, HarnessError> {
            let mut r = corpus_rng.stream(i as u64);
            let x = train_world.sample_prompt(&mut r);
            let y = train_world.sample_response(&x, &mut r)?;
            Ok((x, y))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut lines = Vec::new();
    for (x, y) in &corpus {
        serde_json::to_writer(&mut lines, &serde_json::json!({ "prompt": x, "response": y }))?;
        lines.push(b'\n');
    }
    std::fs::write(datasets_dir.join("reference_corpus.jsonl"), lines)?;

    let mut evals = Vec::new();
    let mut oracle = BTreeMap::new();
    for w in &config.eval_worlds {
        let spec = match &w.shift {
            Some(s) => apply_shift(&config.world, s)?,
            None => config.world.clone(),
        };
        let world = World::with_base_dir(spec.clone(), dir)?;
        std::fs::create_dir_all(worlds_dir.join(&w.name))?;
        write_world_sidecar(worlds_dir.join(&w.name), &spec, spec.seed)?;
        let set = build_dataset(&world, config.sizes.eval_pairs, &root.stream(1))?;
        set.write_jsonl(datasets_dir.join(format!("eval_{}.jsonl", w.name)))?;
        let acc = pairwise_counts(Execution::auto(), &RewardFunction::oracle(&world), &set)?.value();
        oracle.insert(w.name.clone(), acc);
        evals.push(set);
    }
    Ok(Prepared {
        train,
        corpus,
        evals,
        oracle,
    })
}

fn seeded(config: &TrainConfig, seed: u64, checkpoint: Option<PathBuf>) -> TrainConfig {
    TrainConfig {
        seed,
        checkpoint,
        ..config.clone()
    }
}

fn train_reference(
    config: &ExperimentConfig,
    corpus: &[(Vec<usize>, Vec<usize>)],
    seed: u64,
    ckpt_dir: Option<&Path>,
    trace_dir: Option<&Path>,
) -> Result<PolicyModel, HarnessError> {
    let init = PolicyModel::init(config.world.arch.clone(), INIT_STD, &mut Prng::new(seed).stream(0))?;
    let cfg = seeded(&config.reference, seed, ckpt_dir.map(|d| d.join("reference.ckpt")));
    let t = train_reference_mle(&cfg, corpus, init)?;
    if let Some(d) = trace_dir {
        t.trace.write_csv(d.join("reference.csv"))?;
    }
    Ok(t.model)
}

/// Trains `method` against `reference` and returns it as a reward function.
fn train_method(
    method: Method,
    cfg: &TrainConfig,
    train: &PreferenceDataset,
    reference: &PolicyModel,
    trace_path: Option<PathBuf>,
) -> Result<RewardFunction, HarnessError> {
    let (rf, trace) = match method {
        Method::Exrm => {
            let t = train_reward_model(cfg, train, RewardModel::from_policy_backbone(reference))?;
            (RewardFunction::Explicit(t.model), t.trace)
        }
        Method::Dporm => {
            let t = train_dpo(cfg, train, reference)?;
            (RewardFunction::implicit(t.model, reference.clone(), cfg.beta)?, t.trace)
        }
    };
    if let Some(p) = trace_path {
        trace.write_csv(p)?;
    }
    Ok(rf)
}

fn method_config(config: &ExperimentConfig, method: Method) -> &TrainConfig {
    match method {
        Method::Exrm => &config.exrm,
        Method::Dporm => &config.dpo,
    }
}

fn run_seed(config: &ExperimentConfig, data: &Prepared, dir: &Path, seed: u64) -> (Vec<Row>, Vec<Failure>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let fail = |stage: &str, e: HarnessError| Failure {
        seed: Some(seed),
        stage: stage.into(),
        error: e.to_string(),
    };
    let ckpt_dir = dir.join("checkpoints").join(format!("seed_{seed}"));
    let trace_dir = dir.join("traces").join(format!("seed_{seed}"));
    if let Err(e) = std::fs::create_dir_all(&ckpt_dir).and_then(|_| std::fs::create_dir_all(&trace_dir)) {
        failures.push(fail("setup", e.into()));
        return (rows, failures);
    }
    let reference = match train_reference(config, &data.corpus, seed, Some(&ckpt_dir), Some(&trace_dir)) {
        Ok(r) => r,
        Err(e) => {
            failures.push(fail("reference", e));
            return (rows, failures);
        }
    };
    for &method in &config.methods {
        let ckpt = ckpt_dir.join(format!("{}.ckpt", method.name()));
        let cfg = seeded(method_config(config, method), seed, Some(ckpt));
        let trace = trace_dir.join(format!("{}.csv", method.name()));
        let rf = match train_method(method, &cfg, &data.train, &reference, Some(trace)) {
            Ok(rf) => rf,
            Err(e) => {
                failures.push(fail(method.name(), e));
                continue;
            }
        };
        for (w, set) in config.eval_worlds.iter().zip(&data.evals) {
            match pairwise_counts(Execution::auto(), &rf, set) {
                Ok(acc) => rows.push(Row {
                    method,
                    train_world: config.train_world.clone(),
                    eval_world: w.name.clone(),
                    id_flag: w.id,
                    seed,
                    accuracy: acc.value(),
                }),
                Err(e) => failures.push(fail(&format!("eval {} on {}", method.name(), w.name), e)),
            }
        }
        log::info!("seed {seed}: {} done", method.name());
    }
    (rows, failures)
}

fn provenance(config_sha: &str, config: &ExperimentConfig, options: &RunOptions) -> String {
    format!(
        "preflab {} config {} world-seed {} ({}) seeds {:?}",
        env!("CARGO_PKG_VERSION"),
        &config_sha[..12],
        config.world.seed,
        options.seed_source,
        config.seeds
    )
}

/// Writes `config.json` and returns its SHA-256.
fn write_config(config: &ExperimentConfig, dir: &Path) -> Result<String, HarnessError> {
    let mut bytes = serde_json::to_vec_pretty(config)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("config.json"), &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Full protocol: prepare worlds and datasets, then per seed train the
/// reference, each method, and evaluate every method on every eval world.
/// Seeds run in parallel. A failing stage is recorded in `failures.json`
/// (always written) and the remaining stages still run; the report covers
/// what succeeded.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, options: &RunOptions) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let config_sha = write_config(config, out_dir)?;

    let data = match prepare(config, out_dir) {
        Ok(d) => d,
        Err(e) => {
            let failure = Failure {
                seed: None,
                stage: "prepare".into(),
                error: e.to_string(),
            };
            write_json(&out_dir.join("failures.json"), &[failure])?;
            return Err(e);
        }
    };

    let per_seed = Execution::auto().map(config.seeds.len(), |k| run_seed(config, &data, out_dir, config.seeds[k]));
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_seed {
        rows.extend(r);
        failures.extend(f);
    }
    write_json(&out_dir.join("failures.json"), &failures)?;
    for f in &failures {
        log::error!("seed {:?} stage {}: {}", f.seed, f.stage, f.error);
    }

    let aggregates = aggregate(&rows)?;
    let report = EvalReport {
        name: config.name.clone(),
        provenance: provenance(&config_sha, config, options),
        config_sha256: config_sha,
        seeds: config.seeds.clone(),
        finding: finding(&aggregates),
        rows,
        aggregates,
        oracle_accuracy: data.oracle,
    };
    emit_report(&report, out_dir, options.format)?;
    Ok(RunSummary {
        dir: out_dir.to_path_buf(),
        report,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub epochs: usize,
    /// DPO only.
    pub beta: Option<f64>,
    pub lr: f64,
    /// Accuracy on the first ID eval world.
    pub val_accuracy: f64,
    pub best: bool,
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("method,epoch,beta,lr,val_acc_pct,best\n");
    for r in rows {
        let beta = r.beta.map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method.name(),
            r.epochs,
            beta,
            r.lr,
            100.0 * r.val_accuracy,
            r.best
        );
    }
    out
}

fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("| Method | Epoch | Beta | LR | Val Acc (%) |\n|---|---|---|---|---|\n");
    for r in rows {
        let beta = r.beta.map(|b| b.to_string()).unwrap_or_else(|| "-".into());
        let acc = format!("{:.1}", 100.0 * r.val_accuracy);
        let acc = if r.best { format!("**{acc}**") } else { acc };
        let _ = writeln!(out, "| {} | {} | {} | {:e} | {} |", r.method.name().to_uppercase(), r.epochs, beta, r.lr, acc);
    }
    out
}

/// Marks the best row per method: highest accuracy, then smallest lr,
/// then fewest epochs, then smallest beta.
fn flag_best(rows: &mut [SweepRow]) {
    let methods: BTreeSet<Method> = rows.iter().map(|r| r.method).collect();
    for m in methods {
        let best = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.method == m)
            .min_by(|(_, a), (_, b)| {
                b.val_accuracy
                    .total_cmp(&a.val_accuracy)
                    .then(a.lr.total_cmp(&b.lr))
                    .then(a.epochs.cmp(&b.epochs))
                    .then(a.beta.unwrap_or(0.0).total_cmp(&b.beta.unwrap_or(0.0)))
            })
            .map(|(i, _)| i);
        if let Some(i) = best {
            rows[i].best = true;
        }
    }
}

/// Grid search on the first seed: one training run per grid point and
/// method, scored on the first ID eval world. Writes `sweep.csv` and
/// `sweep.md` next to the prepared worlds and datasets.
pub fn sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<SweepRow>, HarnessError> {
    config.validate()?;
    let grid = config
        .sweep
        .as_ref()
        .ok_or_else(|| invalid("config has no sweep grid"))?;
    std::fs::create_dir_all(out_dir)?;
    write_config(config, out_dir)?;
    let data = prepare(config, out_dir)?;
    let seed = config.seeds[0];
    let reference = train_reference(config, &data.corpus, seed, None, None)?;
    let val = &data.evals[config.id_world()];

    let mut points = Vec::new();
    for &method in &config.methods {
        let betas = match method {
            Method::Exrm => vec![None],
            Method::Dporm if grid.beta.is_empty() => vec![Some(config.dpo.beta)],
            Method::Dporm => grid.beta.iter().map(|b| Some(*b)).collect(),
        };
        for &epochs in &grid.epochs {
            for beta in &betas {
                for &lr in &grid.lr {
                    points.push((method, epochs, *beta, lr));
                }
            }
        }
    }
    let mut rows = Vec::with_capacity(points.len());
    for (method, epochs, beta, lr) in points {
        let base = method_config(config, method);
        let cfg = TrainConfig {
            lr,
            epochs,
            beta: beta.unwrap_or(base.beta),
            ..seeded(base, seed, None)
        };
        let rf = train_method(method, &cfg, &data.train, &reference, None)?;
        let acc = pairwise_counts(Execution::auto(), &rf, val)?.value();
        log::info!("sweep {} epochs {epochs} beta {beta:?} lr {lr}: {acc:.4}", method.name());
        rows.push(SweepRow {
            method,
            epochs,
            beta,
            lr,
            val_accuracy: acc,
            best: false,
        });
    }
    flag_best(&mut rows);
    std::fs::write(out_dir.join("sweep.csv"), sweep_csv(&rows))?;
    std::fs::write(out_dir.join("sweep.md"), sweep_table(&rows))?;
    Ok(rows)
}
