use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::numerics::Prng;

use super::{World, WorldError, WorldSpec};

/// Resampling budget per record before giving up on a degenerate world.
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairMeta {
    pub r_chosen: f64,
    pub r_rejected: f64,
    /// Bradley-Terry probability that `chosen` beats `rejected`.
    pub p_bt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub prompt: Vec<usize>,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<PairMeta>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
}

impl PreferenceDataset {
    pub fn new(pairs: Vec<PreferencePair>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.pairs {
            serde_json::to_writer(&mut out, p).expect("pairs always serialize");
            out.push(b'\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), WorldError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_jsonl())?;
        w.flush()?;
        Ok(())
    }

    /// Blank lines are skipped; line numbers in errors are 1-based.
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let reader = BufReader::new(File::open(path)?);
        let mut pairs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let pair = serde_json::from_str(&line).map_err(|source| WorldError::Record { line: i + 1, source })?;
            pairs.push(pair);
        }
        Ok(Self { pairs })
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    seed: u64,
    world: WorldSpec,
}

/// Writes `world.json` (`{"seed", "world"}`) into `dir`.
pub fn write_world_sidecar(dir: impl AsRef<Path>, spec: &WorldSpec, seed: u64) -> Result<(), WorldError> {
    let mut bytes = serde_json::to_vec_pretty(&Sidecar {
        seed,
        world: spec.clone(),
    })?;
    bytes.push(b'\n');
    std::fs::write(dir.as_ref().join("world.json"), bytes)?;
    Ok(())
}

pub fn read_world_sidecar(path: impl AsRef<Path>) -> Result<(WorldSpec, u64), WorldError> {
    let s: Sidecar = serde_json::from_slice(&std::fs::read(path)?)?;
    Ok((s.world, s.seed))
}

/// `n_pairs` labeled pairs. Record `i` draws only from `rng.stream(i)`,
/// so the result does not depend on the execution mode.
///
/// Candidates with identical responses are redrawn (prompt included); under
/// deterministic labeling so are candidates with equal true reward, which
/// keeps the labels free of ties.
pub fn build_dataset(world: &World, n_pairs: usize, rng: &Prng) -> Result<PreferenceDataset, WorldError> {
    build_dataset_with(Execution::auto(), world, n_pairs, rng)
}

pub fn build_dataset_with(
    exec: Execution,
    world: &World,
    n_pairs: usize,
    rng: &Prng,
) -> Result<PreferenceDataset, WorldError> {
    if n_pairs == 0 {
        return Err(WorldError::InvalidSpec("n_pairs must be at least 1".into()));
    }
    let pairs = exec.try_map(n_pairs, |i| draw_record(world, &mut rng.stream(i as u64)))?;
    Ok(PreferenceDataset { pairs })
}

fn draw_record(world: &World, rng: &mut Prng) -> Result<PreferencePair, WorldError> {
    let strict = world.spec().labeling == super::Labeling::DeterministicArgmax;
    for _ in 0..MAX_ATTEMPTS {
        let x = world.sample_prompt(rng);
        let y1 = world.sample_response(&x, rng)?;
        let y2 = world.sample_response(&x, rng)?;
        if y1 == y2 {
            continue;
        }
        let labeled = world.bt_label(&x, &y1, &y2, rng)?;
        if strict && labeled.tie {
            continue;
        }
        return Ok(labeled.pair);
    }
    Err(WorldError::Degenerate {
        attempts: MAX_ATTEMPTS,
        reason: if strict {
            "responses identical or tied in true reward"
        } else {
            "responses identical"
        },
    })
}
