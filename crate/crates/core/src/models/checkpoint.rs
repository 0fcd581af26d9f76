//! Binary checkpoint format.
//!
//! ```text
//! b"PREFLAB1"                      8 bytes magic
//! header_len: u32 little-endian
//! header: UTF-8 JSON, header_len bytes
//! payload: f64 little-endian, tensors concatenated in header order
//! ```
//!
//! The header records the model kind, the architecture, tensor names and
//! shapes, a dtype tag, the training seed and the producer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

use super::{ModelArch, ModelError, ParamSet, PolicyModel, RewardModel};

pub const MAGIC: &[u8; 8] = b"PREFLAB1";
pub const DTYPE_TAG: &str = "f64-le";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error on checkpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("truncated payload: header declares {expected} bytes, file holds {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("shape mismatch for {name}: {detail}")]
    ShapeMismatch { name: String, detail: String },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    KindMismatch { expected: ModelKind, found: ModelKind },
    #[error("checkpoint architecture {found:?} differs from expected {expected:?}")]
    ArchMismatch { expected: Box<ModelArch>, found: Box<ModelArch> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Policy,
    Reward,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Policy => "policy",
            ModelKind::Reward => "reward",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Producer {
    pub name: String,
    pub version: String,
}

impl Default for Producer {
    fn default() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kind: ModelKind,
    pub arch: ModelArch,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    pub seed: u64,
    pub producer: Producer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, arch: ModelArch, params: ParamSet, seed: u64) -> Self {
        let tensors = params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        Self {
            header: Header {
                kind,
                arch,
                dtype: DTYPE_TAG.to_string(),
                tensors,
                seed,
                producer: Producer::default(),
            },
            params,
        }
    }

    pub fn from_policy(model: &PolicyModel, seed: u64) -> Self {
        Self::new(ModelKind::Policy, model.arch().clone(), model.params().clone(), seed)
    }

    pub fn from_reward(model: &RewardModel, seed: u64) -> Self {
        Self::new(ModelKind::Reward, model.arch().clone(), model.params().clone(), seed)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let payload_len = self.params.num_scalars() * 8;
        let mut out = Vec::with_capacity(8 + 4 + header.len() + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 12 {
            return Err(CheckpointError::Header("missing header length".into()));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() < header_len {
            return Err(CheckpointError::Header(format!(
                "header length {header_len} exceeds file size"
            )));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        if header.dtype != DTYPE_TAG {
            return Err(CheckpointError::Header(format!("unsupported dtype {}", header.dtype)));
        }
        let payload = &body[header_len..];
        let expected: usize = header
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>() * 8)
            .sum();
        if payload.len() != expected {
            return Err(CheckpointError::TruncatedPayload {
                expected,
                actual: payload.len(),
            });
        }
        let mut names = Vec::with_capacity(header.tensors.len());
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut offset = 0;
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let data = payload[offset..offset + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += n * 8;
            names.push(entry.name.clone());
            tensors.push(Tensor::new(entry.shape.clone(), data).expect("declared shape"));
        }
        Ok(Self {
            header,
            params: ParamSet::new(names, tensors),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<(), CheckpointError> {
        if self.header.kind != kind {
            return Err(CheckpointError::KindMismatch {
                expected: kind,
                found: self.header.kind,
            });
        }
        Ok(())
    }

    pub fn into_policy(self) -> Result<PolicyModel, CheckpointError> {
        self.expect_kind(ModelKind::Policy)?;
        PolicyModel::from_params(self.header.arch, self.params).map_err(layout_error)
    }

    pub fn into_reward(self) -> Result<RewardModel, CheckpointError> {
        self.expect_kind(ModelKind::Reward)?;
        RewardModel::from_params(self.header.arch, self.params).map_err(layout_error)
    }

    /// Fails unless the stored architecture equals `arch`.
    pub fn expect_arch(self, arch: &ModelArch) -> Result<Self, CheckpointError> {
        if &self.header.arch != arch {
            return Err(CheckpointError::ArchMismatch {
                expected: Box::new(arch.clone()),
                found: Box::new(self.header.arch),
            });
        }
        Ok(self)
    }
}

fn layout_error(e: ModelError) -> CheckpointError {
    match e {
        ModelError::LayoutMismatch(detail) => CheckpointError::ShapeMismatch {
            name: "parameters".into(),
            detail,
        },
        other => CheckpointError::Header(other.to_string()),
    }
}

pub fn save_policy(model: &PolicyModel, seed: u64, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    Checkpoint::from_policy(model, seed).save(path)
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyModel, CheckpointError> {
    Checkpoint::load(path)?.into_policy()
}

pub fn save_reward(model: &RewardModel, seed: u64, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    Checkpoint::from_reward(model, seed).save(path)
}

pub fn load_reward(path: impl AsRef<Path>) -> Result<RewardModel, CheckpointError> {
    Checkpoint::load(path)?.into_reward()
}
