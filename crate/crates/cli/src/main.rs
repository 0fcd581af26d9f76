//! `preflab`: one binary for every pipeline stage.
//!
//! Exit codes: 0 success, 1 invalid invocation or input (bad flags, missing
//! or malformed config, unreadable inputs), 2 failure while running.
//! Diagnostics go to stderr; only `eval` prints its result to stdout, and
//! files are written only under `--out`.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use preflab::alignment::{iterate_dpo, IterativeConfig};
use preflab::exec;
use preflab::harness::{
    emit_report, pairwise_counts, rows_from_csv, run_experiment, sweep, EvalReport, ExperimentConfig, ReportFormat,
    RewardFunction, RunOptions, Scorer,
};
use preflab::models::{load_policy, load_reward, PolicyModel, RewardModel, INIT_STD};
use preflab::numerics::Prng;
use preflab::trainers::{train_dpo, train_reference_mle, train_reward_model, TrainConfig, Trained};
use preflab::world::{
    build_dataset, read_world_sidecar, teacher_policy, write_world_sidecar, PreferenceDataset, PromptSource, World,
    WorldSpec,
};

const SEED_ENV: &str = "PREFLAB_SEED";

#[derive(Parser)]
#[command(name = "preflab", version, about = "Explicit vs DPO implicit reward models on synthetic preference worlds")]
struct Cli {
    /// -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed; `PREFLAB_SEED` is used when neither is set.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainInputs {
    /// Preference pairs (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Reference policy checkpoint.
    #[arg(long)]
    reference: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Both => ReportFormat::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labeled preference dataset from a world (config: WorldSpec).
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
    },
    /// Fit the reference policy to teacher samples.
    TrainRef {
        #[command(flatten)]
        common: Common,
    },
    /// Train an explicit reward model (config: TrainConfig).
    TrainRm {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: TrainInputs,
    },
    /// Train a DPO policy (config: TrainConfig).
    TrainDpo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: TrainInputs,
    },
    /// Pairwise accuracy of one reward function; prints one line.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Explicit reward model checkpoint.
        #[arg(long, conflicts_with_all = ["policy", "world"])]
        rm: Option<PathBuf>,
        /// DPO policy checkpoint (implicit reward; needs --reference and --beta).
        #[arg(long, requires_all = ["reference", "beta"], conflicts_with = "world")]
        policy: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        /// World (spec or world.json) whose true reward is scored.
        #[arg(long)]
        world: Option<PathBuf>,
    },
    /// Iterative DPO with an annotator.
    Iterate {
        #[command(flatten)]
        common: Common,
    },
    /// Hyperparameter grid on the first seed (config: experiment with a sweep grid).
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Full multi-seed experiment and report.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Re-aggregate a rows.csv into a report.
    Report {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "report")]
        name: String,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
}

enum CliError {
    Validation(String),
    Runtime(String),
}

fn invalid(e: impl Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Where the effective seed came from.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum SeedSource {
    Cli,
    Config,
    Env,
    Default,
}

/// Reads `path` (`fallback()` when absent) and decides the seed: the
/// flag, else the config's own value at `pointer`, else `PREFLAB_SEED`.
/// `apply` writes an override into the parsed config.
fn load_config<T: DeserializeOwned>(
    path: Option<&Path>,
    fallback: impl FnOnce() -> T,
    pointer: &str,
    cli_seed: Option<u64>,
    apply: impl FnOnce(&mut T, u64),
) -> Result<(T, SeedSource), CliError> {
    let (mut config, in_config) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("cannot read config {}: {e}", p.display())))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", p.display())))?;
            let in_config = value.pointer(pointer).is_some();
            let config: T = serde_json::from_value(value).map_err(|e| invalid(format!("config {}: {e}", p.display())))?;
            (config, in_config)
        }
        None => (fallback(), false),
    };
    let (seed, source) = match (cli_seed, in_config, std::env::var(SEED_ENV)) {
        (Some(s), _, _) => (Some(s), SeedSource::Cli),
        (None, true, _) => (None, SeedSource::Config),
        (None, false, Ok(v)) => {
            let s = v.trim().parse().map_err(|e| invalid(format!("{SEED_ENV}={v:?}: {e}")))?;
            (Some(s), SeedSource::Env)
        }
        (None, false, Err(_)) => (None, SeedSource::Default),
    };
    if let Some(s) = seed {
        apply(&mut config, s);
    }
    Ok((config, source))
}

fn require_config(common: &Common) -> Result<&Path, CliError> {
    common
        .config
        .as_deref()
        .ok_or_else(|| invalid("this subcommand needs --config"))
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    seed_source: SeedSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a Path>,
}

fn write_provenance(out: &Path, command: &str, seed: u64, source: SeedSource, config: Option<&Path>) -> Result<(), CliError> {
    let p = Provenance {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        seed_source: source,
        config,
    };
    let mut bytes = serde_json::to_vec_pretty(&p).map_err(runtime)?;
    bytes.push(b'\n');
    std::fs::write(out.join("run.json"), bytes).map_err(runtime)
}

fn create_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))
}

fn no_checkpoint(config: &TrainConfig) -> Result<(), CliError> {
    if config.checkpoint.is_some() {
        return Err(invalid("checkpoint is written under --out; remove it from the config"));
    }
    Ok(())
}

fn read_data(path: &Path) -> Result<PreferenceDataset, CliError> {
    PreferenceDataset::read_jsonl(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_policy(path: &Path) -> Result<PolicyModel, CliError> {
    load_policy(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// A world from either a bare spec or a `world.json` sidecar.
fn read_world(path: &Path) -> Result<World, CliError> {
    let spec = match read_world_sidecar(path) {
        Ok((spec, _)) => spec,
        Err(_) => {
            let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<WorldSpec>(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
    };
    World::new(spec).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn save_trace<M>(trained: &Trained<M>, path: PathBuf) -> Result<(), CliError> {
    trained.trace.write_csv(path).map_err(runtime)
}

fn gen(common: &Common, pairs: usize) -> Result<(), CliError> {
    let (spec, source) = load_config(common.config.as_deref(), WorldSpec::default, "/seed", common.seed, |w, s| w.seed = s)?;
    if pairs == 0 {
        return Err(invalid("--pairs must be at least 1"));
    }
    let world = World::new(spec.clone()).map_err(invalid)?;
    create_out(&common.out)?;
    // same stream as an experiment's training set
    let data = build_dataset(&world, pairs, &Prng::new(spec.seed).stream(0)).map_err(runtime)?;
    data.write_jsonl(common.out.join("pairs.jsonl")).map_err(runtime)?;
    write_world_sidecar(&common.out, &spec, spec.seed).map_err(runtime)?;
    write_provenance(&common.out, "gen", spec.seed, source, common.config.as_deref())?;
    log::info!("wrote {pairs} pairs to {}", common.out.display());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceFile {
    #[serde(default)]
    world: WorldSpec,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default = "default_reference_train")]
    train: TrainConfig,
}

impl Default for ReferenceFile {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            samples: default_samples(),
            train: default_reference_train(),
        }
    }
}

fn default_samples() -> usize {
    3000
}

fn default_reference_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    }
}

fn train_ref(common: &Common) -> Result<(), CliError> {
    let (file, source) =
        load_config(common.config.as_deref(), ReferenceFile::default, "/train/seed", common.seed, |f, s| f.train.seed = s)?;
    file.train.validate().map_err(invalid)?;
    no_checkpoint(&file.train)?;
    if file.samples == 0 {
        return Err(invalid("samples must be at least 1"));
    }
    let world = World::new(file.world.clone()).map_err(invalid)?;
    create_out(&common.out)?;
    // corpus and init streams match an experiment's reference stage
    let rng = Prng::new(file.world.seed).stream(2);
    let corpus = (0..file.samples)
        .map(|i| {
            let mut r = rng.stream(i as u64);
            let x = world.sample_prompt(&mut r);
            world.sample_response(&x, &mut r).map(|y| (x, y))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let init = PolicyModel::init(file.world.arch.clone(), INIT_STD, &mut Prng::new(file.train.seed).stream(0))
        .map_err(runtime)?;
    let config = TrainConfig {
        checkpoint: Some(common.out.join("reference.ckpt")),
        ..file.train.clone()
    };
    let t = train_reference_mle(&config, &corpus, init).map_err(runtime)?;
    save_trace(&t, common.out.join("reference_trace.csv"))?;
    write_provenance(&common.out, "train-ref", file.train.seed, source, common.config.as_deref())
}

fn train_pairs(common: &Common, inputs: &TrainInputs, dpo: bool) -> Result<(), CliError> {
    let fallback = if dpo { TrainConfig::dpo } else { TrainConfig::reward_model };
    let (config, source) = load_config(common.config.as_deref(), fallback, "/seed", common.seed, |c, s| c.seed = s)?;
    if dpo {
        config.validate_dpo().map_err(invalid)?;
    } else {
        config.validate().map_err(invalid)?;
    }
    no_checkpoint(&config)?;
    let data = read_data(&inputs.data)?;
    let reference = read_policy(&inputs.reference)?;
    create_out(&common.out)?;
    let name = if dpo { "dpo" } else { "exrm" };
    let config = TrainConfig {
        checkpoint: Some(common.out.join(format!("{name}.ckpt"))),
        ..config
    };
    if dpo {
        let t = train_dpo(&config, &data, &reference).map_err(runtime)?;
        save_trace(&t, common.out.join("dpo_trace.csv"))?;
    } else {
        let t = train_reward_model(&config, &data, RewardModel::from_policy_backbone(&reference)).map_err(runtime)?;
        save_trace(&t, common.out.join("exrm_trace.csv"))?;
    }
    let command = if dpo { "train-dpo" } else { "train-rm" };
    write_provenance(&common.out, command, config.seed, source, common.config.as_deref())
}

fn eval(
    data: &Path,
    rm: Option<&Path>,
    policy: Option<&Path>,
    reference: Option<&Path>,
    beta: Option<f64>,
    world: Option<&Path>,
) -> Result<(), CliError> {
    let set = read_data(data)?;
    let rf = match (rm, policy, world) {
        (Some(p), None, None) => {
            RewardFunction::Explicit(load_reward(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?)
        }
        (None, Some(p), None) => {
            let reference = read_policy(reference.expect("clap requires --reference"))?;
            RewardFunction::implicit(read_policy(p)?, reference, beta.expect("clap requires --beta")).map_err(invalid)?
        }
        (None, None, Some(w)) => RewardFunction::oracle(&read_world(w)?),
        _ => return Err(invalid("give exactly one of --rm, --policy or --world")),
    };
    let acc = pairwise_counts(exec::Execution::auto(), &rf as &dyn Scorer, &set).map_err(runtime)?;
    println!(
        "accuracy {} ({}, {} pairs, {} ties)",
        acc.value(),
        rf.label(),
        acc.total,
        acc.ties
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum AnnotatorSpec {
    Oracle,
    Exrm { checkpoint: PathBuf },
    Dporm { policy: PathBuf, reference: PathBuf, beta: f64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IterateFile {
    /// Supplies the true reward for quality checks and the oracle
    /// annotator; its teacher is the default reference.
    #[serde(default)]
    world: WorldSpec,
    /// Prompt distribution of the iteration set; the world's when absent.
    #[serde(default)]
    prompts: Option<PromptSource>,
    #[serde(default = "default_n_prompts")]
    n_prompts: usize,
    /// Starting policy; the reference when absent.
    #[serde(default)]
    policy: Option<PathBuf>,
    /// Reference checkpoint; the world's teacher when absent.
    #[serde(default)]
    reference: Option<PathBuf>,
    annotator: AnnotatorSpec,
    #[serde(default)]
    iterative: IterativeConfig,
}

fn default_n_prompts() -> usize {
    200
}

fn iterate(common: &Common) -> Result<(), CliError> {
    let path = require_config(common)?;
    let (file, source) =
        load_config::<IterateFile>(Some(path), || unreachable!(), "/iterative/seed", common.seed, |f, s| f.iterative.seed = s)?;
    file.iterative.validate().map_err(invalid)?;
    if file.n_prompts == 0 {
        return Err(invalid("n_prompts must be at least 1"));
    }
    let world = World::new(file.world.clone()).map_err(invalid)?;
    let reference = match &file.reference {
        Some(p) => read_policy(p)?,
        None => teacher_policy(&file.world.responses, &file.world.arch)
            .map_err(invalid)?
            .ok_or_else(|| invalid("no reference given and the world's responses are not a teacher"))?,
    };
    let initial = match &file.policy {
        Some(p) => read_policy(p)?,
        None => reference.clone(),
    };
    let annotator = match &file.annotator {
        AnnotatorSpec::Oracle => RewardFunction::oracle(&world),
        AnnotatorSpec::Exrm { checkpoint } => RewardFunction::Explicit(
            load_reward(checkpoint).map_err(|e| invalid(format!("{}: {e}", checkpoint.display())))?,
        ),
        AnnotatorSpec::Dporm {
            policy,
            reference,
            beta,
        } => RewardFunction::implicit(read_policy(policy)?, read_policy(reference)?, *beta).map_err(invalid)?,
    };
    let prompt_world = match &file.prompts {
        Some(p) => World::new(WorldSpec {
            prompts: p.clone(),
            ..file.world.clone()
        })
        .map_err(invalid)?,
        None => world.clone(),
    };
    let rng = Prng::new(file.world.seed).stream(4);
    let prompts: Vec<Vec<usize>> = (0..file.n_prompts)
        .map(|i| prompt_world.sample_prompt(&mut rng.stream(i as u64)))
        .collect();
    create_out(&common.out)?;
    let outcome = iterate_dpo(
        &file.iterative,
        &prompts,
        initial,
        &reference,
        &annotator,
        Some(&world),
        Some(&common.out),
    )
    .map_err(runtime)?;
    for r in &outcome.manifest.records {
        match r.true_reward {
            Some(q) => log::info!("iteration {}: {} pairs, true reward {:.4} ± {:.4}", r.iteration, r.pairs, q.mean, q.se),
            None => log::info!("iteration {}: {} pairs", r.iteration, r.pairs),
        }
    }
    write_provenance(&common.out, "iterate", file.iterative.seed, source, Some(path))
}

fn load_experiment(common: &Common) -> Result<(ExperimentConfig, SeedSource), CliError> {
    let path = require_config(common)?;
    let (config, source) =
        load_config::<ExperimentConfig>(Some(path), || unreachable!(), "/world/seed", common.seed, |c, s| c.world.seed = s)?;
    config.validate().map_err(invalid)?;
    Ok((config, source))
}

fn seed_label(source: SeedSource) -> String {
    serde_json::to_value(source)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn experiment(common: &Common, format: Format) -> Result<(), CliError> {
    let (config, source) = load_experiment(common)?;
    let options = RunOptions {
        format: format.into(),
        seed_source: seed_label(source),
    };
    let summary = run_experiment(&config, &common.out, &options).map_err(runtime)?;
    eprintln!("{}", summary.report.finding);
    if !summary.failures.is_empty() {
        return Err(runtime(format!(
            "{} stage(s) failed; see {}",
            summary.failures.len(),
            common.out.join("failures.json").display()
        )));
    }
    Ok(())
}

fn run_sweep(common: &Common) -> Result<(), CliError> {
    let (config, source) = load_experiment(common)?;
    if config.sweep.is_none() {
        return Err(invalid("config has no sweep grid"));
    }
    let rows = sweep(&config, &common.out).map_err(runtime)?;
    for r in rows.iter().filter(|r| r.best) {
        eprintln!(
            "best {}: lr {} epochs {} beta {:?} -> {:.4}",
            r.method.name(),
            r.lr,
            r.epochs,
            r.beta,
            r.val_accuracy
        );
    }
    write_provenance(&common.out, "sweep", config.world.seed, source, common.config.as_deref())
}

fn report(rows: &Path, out: &Path, name: &str, format: Format) -> Result<(), CliError> {
    let bytes = std::fs::read(rows).map_err(|e| invalid(format!("cannot read {}: {e}", rows.display())))?;
    let rows_vec = rows_from_csv(&bytes).map_err(|e| invalid(format!("{}: {e}", rows.display())))?;
    let provenance = format!("preflab {} re-aggregated from {}", env!("CARGO_PKG_VERSION"), rows.display());
    let report = EvalReport::from_rows(name, &provenance, "", rows_vec).map_err(invalid)?;
    create_out(out)?;
    emit_report(&report, out, format.into()).map_err(runtime)?;
    eprintln!("{}", report.finding);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(invalid("--jobs must be at least 1"));
        }
        exec::set_jobs(j);
    }
    match &cli.command {
        Command::Gen { common, pairs } => gen(common, *pairs),
        Command::TrainRef { common } => train_ref(common),
        Command::TrainRm { common, inputs } => train_pairs(common, inputs, false),
        Command::TrainDpo { common, inputs } => train_pairs(common, inputs, true),
        Command::Eval {
            data,
            rm,
            policy,
            reference,
            beta,
            world,
        } => eval(data, rm.as_deref(), policy.as_deref(), reference.as_deref(), *beta, world.as_deref()),
        Command::Iterate { common } => iterate(common),
        Command::Sweep { common } => run_sweep(common),
        Command::Experiment { common, format } => experiment(common, *format),
        Command::Report {
            rows,
            out,
            name,
            format,
        } => report(rows, out, name, *format),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
