//! Binary checkpoint: magic, format version, a length-prefixed JSON header, then every
//! parameter array followed by every momentum buffer as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkConfig;
use crate::nn::{Gradients, Param, ParamKind, ParameterSet};

use super::optim::OptimizerState;
use super::trainer::StepRecord;
use super::TrainConfig;

const MAGIC: &[u8; 8] = b"GRABCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub params: ParameterSet,
    /// Momentum buffers and completed-iteration count; the per-step sampling streams are
    /// derived from `(train.seed, iteration)`, so nothing else is needed to resume.
    pub optimizer: OptimizerState,
    pub total_iterations: u64,
    pub history: Vec<StepRecord>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
}

#[derive(Serialize, Deserialize)]
struct Header {
    params_version: String,
    network: NetworkConfig,
    train: TrainConfig,
    iteration: u64,
    total_iterations: u64,
    history: Vec<StepRecord>,
    params: Vec<ParamEntry>,
}

impl Checkpoint {
    pub fn iteration(&self) -> u64 {
        self.optimizer.iteration
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            params_version: self.params.version.clone(),
            network: self.network.clone(),
            train: self.train.clone(),
            iteration: self.optimizer.iteration,
            total_iterations: self.total_iterations,
            history: self.history.clone(),
            params: self
                .params
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    kind: p.kind,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let floats = 2 * self.params.scalar_count();
        let mut out = Vec::with_capacity(20 + json.len() + 4 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.iter() {
            p.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        for v in self.optimizer.velocity.iter() {
            v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let malformed = |reason: &str| Error::Malformed {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(malformed("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::SchemaVersion {
                path: path.to_path_buf(),
                expected: CHECKPOINT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + len).ok_or_else(|| malformed("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| malformed(&e.to_string()))?;

        let mut floats = bytes[20 + len..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let total: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if bytes.len() - 20 - len != 8 * total {
            return Err(malformed("array section length does not match the header"));
        }
        let mut params = ParameterSet::new();
        params.version = header.params_version;
        for e in header.params {
            let n = e.shape.iter().product();
            params.push(Param {
                name: e.name,
                shape: e.shape,
                kind: e.kind,
                data: floats.by_ref().take(n).collect(),
            });
        }
        let velocity = params.iter().map(|p| floats.by_ref().take(p.len()).collect()).collect();
        Ok(Checkpoint {
            network: header.network,
            train: header.train,
            params,
            optimizer: OptimizerState {
                velocity: Gradients::from_vecs(velocity),
                iteration: header.iteration,
            },
            total_iterations: header.total_iterations,
            history: header.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // Write-then-rename so an interrupted save never leaves a torn checkpoint.
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}
