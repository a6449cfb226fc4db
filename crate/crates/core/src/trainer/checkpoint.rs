//! Binary checkpoints.
//!
//! Layout: magic `SRFTCKPT`, `u64` header length, JSON header, raw little-endian
//! `f64` body, then the 32-byte SHA-256 of everything before it. The header
//! indexes the body: each tensor records its name, shape and element offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{OptimizerKind, TrainConfig};
use super::optim::Optimizer;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRFTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HASH_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Named parameter values in the model's visiting order.
    pub params: Vec<(String, Tensor)>,
    pub optimizer_kind: OptimizerKind,
    pub optimizer_step: u64,
    pub optimizer_first: Vec<Vec<f64>>,
    pub optimizer_second: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    optimizer: OptimizerHeader,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    kind: OptimizerKind,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Element (not byte) offset into the body.
    offset: usize,
}

impl Checkpoint {
    pub fn capture(model: &Model, train_config: &TrainConfig, optimizer: &Optimizer, epoch: usize) -> Self {
        Checkpoint {
            model_config: model.config,
            train_config: train_config.clone(),
            epoch,
            params: model
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, t.detached()))
                .collect(),
            optimizer_kind: optimizer.kind,
            optimizer_step: optimizer.step,
            optimizer_first: optimizer.first.clone(),
            optimizer_second: optimizer.second.clone(),
        }
    }

    /// Rebuilds the model. Names and shapes must match the architecture exactly.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.model_config, 0)?;
        let mut idx = 0;
        let mut err = None;
        model.visit_params_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.params.get(idx) {
                Some((n, saved)) if *n == name && saved.shape() == t.shape() => {
                    t.data_mut().copy_from_slice(saved.data());
                }
                other => {
                    err = Some(Error::invalid(
                        "checkpoint",
                        format!(
                            "parameter {idx} is {:?} but the model expects {name:?} {:?}",
                            other.map(|(n, s)| (n, s.shape())),
                            t.shape()
                        ),
                    ));
                }
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != self.params.len() {
            return Err(Error::invalid(
                "checkpoint",
                format!("{} saved parameters, model has {idx}", self.params.len()),
            ));
        }
        Ok(model)
    }

    pub fn optimizer(&self, model: &Model) -> Result<Optimizer> {
        if self.optimizer_kind != self.train_config.optimizer {
            return Err(Error::invalid(
                "checkpoint",
                "optimizer state does not match the configured optimizer",
            ));
        }
        Optimizer::restore(
            &self.train_config,
            model,
            self.optimizer_step,
            self.optimizer_first.clone(),
            self.optimizer_second.clone(),
        )
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut body: Vec<f64> = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, data: &[f64]| {
            tensors.push(TensorEntry {
                name,
                shape,
                offset: body.len(),
            });
            body.extend_from_slice(data);
        };
        for (name, t) in &self.params {
            push(format!("param/{name}"), t.shape().to_vec(), t.data());
        }
        for (i, buf) in self.optimizer_first.iter().enumerate() {
            push(format!("opt/first/{i}"), vec![buf.len()], buf);
        }
        for (i, buf) in self.optimizer_second.iter().enumerate() {
            push(format!("opt/second/{i}"), vec![buf.len()], buf);
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            model_config: self.model_config,
            train_config: self.train_config.clone(),
            epoch: self.epoch,
            optimizer: OptimizerHeader {
                kind: self.optimizer_kind,
                step: self.optimizer_step,
            },
            tensors,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * body.len() + HASH_LEN);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &body {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let hash = Sha256::digest(&out);
        out.extend_from_slice(&hash);
        Ok(out)
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 16 + HASH_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let (content, hash) = bytes.split_at(bytes.len() - HASH_LEN);
        if Sha256::digest(content).as_slice() != hash {
            return Err(bad("content hash mismatch, file is corrupt".into()));
        }
        let header_len = u64::from_le_bytes(content[8..16].try_into().expect("8 bytes")) as usize;
        let body_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= content.len())
            .ok_or_else(|| bad("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&content[16..body_start])?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {}", header.version)));
        }
        let raw = &content[body_start..];
        if raw.len() % 8 != 0 {
            return Err(bad("body is not a whole number of f64 values".into()));
        }
        let body: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut params = Vec::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let data = body
                .get(entry.offset..entry.offset + n)
                .ok_or_else(|| bad(format!("tensor {} runs past the body", entry.name)))?
                .to_vec();
            if let Some(name) = entry.name.strip_prefix("param/") {
                params.push((name.to_string(), Tensor::new(entry.shape, data)?));
            } else if entry.name.starts_with("opt/first/") {
                first.push(data);
            } else if entry.name.starts_with("opt/second/") {
                second.push(data);
            } else {
                return Err(bad(format!("unknown tensor {}", entry.name)));
            }
        }
        Ok(Checkpoint {
            model_config: header.model_config,
            train_config: header.train_config,
            epoch: header.epoch,
            params,
            optimizer_kind: header.optimizer.kind,
            optimizer_step: header.optimizer.step,
            optimizer_first: first,
            optimizer_second: second,
        })
    }

    /// Hex SHA-256 over the encoded checkpoint.
    pub fn content_hash(&self) -> Result<String> {
        let bytes = self.encode()?;
        Ok(hex::encode(&bytes[bytes.len() - HASH_LEN..]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(path, &bytes)
    }
}
