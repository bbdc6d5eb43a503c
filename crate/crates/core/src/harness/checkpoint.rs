//! Binary checkpoint: magic, little-endian u64 metadata length, JSON
//! metadata, then every parameter as little-endian f64 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{OptimizerConfig, TrainConfig};
use super::optim::ParamGroup;
use crate::error::{Error, Result};
use crate::model::{Micap, ModelConfig};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8] = b"MICAP-CKPT-1";
const MAGIC_FAMILY: &[u8] = b"MICAP-CKPT-";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub name: String,
    #[serde(flatten)]
    pub config: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub step: u64,
    pub params: Vec<ParamEntry>,
    pub vocab: Vocabulary,
    pub optimizer: OptimizerInfo,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Micap,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, model: Micap, step: u64, vocab: Vocabulary) -> Self {
        let params = model
            .params
            .iter()
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                group: ParamGroup::of(name),
            })
            .collect();
        let meta = CheckpointMeta {
            optimizer: OptimizerInfo {
                name: "AdamW".into(),
                config: config.optimizer,
            },
            config,
            model: model.config,
            step,
            params,
            vocab,
        };
        Self { meta, model }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta =
            serde_json::to_vec(&self.meta).map_err(|e| Error::json("checkpoint metadata", e))?;
        let mut out =
            Vec::with_capacity(MAGIC.len() + 8 + meta.len() + 8 * self.model.params.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (_, _, t) in self.model.params.iter() {
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.starts_with(MAGIC) {
            if bytes.starts_with(MAGIC_FAMILY) {
                let found = bytes[..MAGIC.len().min(bytes.len())].to_vec();
                return Err(Error::VersionMismatch {
                    expected: String::from_utf8_lossy(MAGIC).into_owned(),
                    found: String::from_utf8_lossy(&found).into_owned(),
                });
            }
            return Err(Error::NotCheckpoint);
        }
        let rest = &bytes[MAGIC.len()..];
        if rest.len() < 8 {
            return Err(Error::PayloadLengthMismatch {
                expected: 8,
                found: rest.len() as u64,
            });
        }
        let meta_len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
        let rest = &rest[8..];
        if rest.len() < meta_len {
            return Err(Error::PayloadLengthMismatch {
                expected: meta_len as u64,
                found: rest.len() as u64,
            });
        }
        let meta: CheckpointMeta = serde_json::from_slice(&rest[..meta_len])
            .map_err(|e| Error::json("checkpoint metadata", e))?;
        let payload = &rest[meta_len..];
        let numel: usize = meta
            .params
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum();
        if payload.len() != 8 * numel {
            return Err(Error::PayloadLengthMismatch {
                expected: 8 * numel as u64,
                found: payload.len() as u64,
            });
        }
        let mut model = Micap::new(meta.model, 0)?;
        if model.params.len() != meta.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "model has {} tensors, checkpoint lists {}",
                model.params.len(),
                meta.params.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for entry in &meta.params {
            let id = model
                .params
                .id(&entry.name)
                .ok_or_else(|| Error::ShapeMismatch(format!("unknown parameter {}", entry.name)))?;
            let t = model.params.get_mut(id);
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: checkpoint {:?}, model {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                )));
            }
            for x in t.data_mut() {
                *x = values.next().expect("payload length checked");
            }
        }
        let order_matches = model
            .params
            .iter()
            .zip(&meta.params)
            .all(|((_, name, _), e)| name == e.name);
        if !order_matches {
            return Err(Error::ShapeMismatch(
                "parameter order differs from the model".into(),
            ));
        }
        Ok(Self { meta, model })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
