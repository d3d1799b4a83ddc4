//! SFCK checkpoint files.
//!
//! Layout, all little-endian: magic `SFCK`, `u32` version, `u64` model
//! fingerprint, `u32`-prefixed JSON metadata, `u32` array count, then per
//! array a `u32`-prefixed UTF-8 name, `u32` rank, `u64` extents and binary32
//! data, and finally a `u64` FNV-1a checksum of everything before it.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use super::{TrainConfig, TrainError};
use crate::datapipe::fnv1a64;
use crate::models::{Model, ModelConfig, ParamStore};
use crate::tensorgrad::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where training stands; everything needed to continue bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Optimizer steps taken.
    pub step: usize,
    /// Completed epochs.
    pub epoch: usize,
    /// Sample order of the current epoch and how many batches of it are done.
    pub order: Vec<usize>,
    pub cursor: usize,
    pub rng: ChaCha8Rng,
    pub best_val: Option<f64>,
    /// Sample-weighted Huber sum and sample count of the current epoch.
    pub epoch_loss: f64,
    pub epoch_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub progress: Progress,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model, TrainError> {
        Ok(Model::from_params(self.meta.model.clone(), self.params.clone())?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.meta.model.fingerprint().to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let mut arrays: Vec<(String, &Tensor<f32>)> = self.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
        for (i, name) in self.params.names().iter().enumerate() {
            arrays.push((format!("adam.m.{name}"), &self.adam.m[i]));
        }
        for (i, name) in self.params.names().iter().enumerate() {
            arrays.push((format!("adam.v.{name}"), &self.adam.v[i]));
        }
        out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for (name, t) in arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    /// Parses and validates a checkpoint. When `expect` is given, a
    /// checkpoint written for a different model configuration is refused.
    pub fn decode(bytes: &[u8], expect: Option<&ModelConfig>) -> Result<Self, TrainError> {
        let bad = |m: &str| TrainError::Checkpoint(m.to_string());
        if bytes.len() < 28 {
            return Err(bad("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a64(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("not an SFCK checkpoint"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!("unsupported version {version}")));
        }
        let fingerprint = r.u64()?;
        if let Some(cfg) = expect {
            if cfg.fingerprint() != fingerprint {
                return Err(TrainError::Checkpoint(format!(
                    "checkpoint was written for model {fingerprint:016x}, current config is {:016x} ({})",
                    cfg.fingerprint(),
                    cfg.model_id()
                )));
            }
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| TrainError::Checkpoint(format!("metadata: {e}")))?;
        if meta.model.fingerprint() != fingerprint {
            return Err(bad("header fingerprint disagrees with metadata"));
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?).map_err(|_| bad("array name is not UTF-8"))?.to_string();
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(bad("array rank too large"));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or_else(|| bad("array too large"))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| bad("array too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            arrays.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        if count % 3 != 0 {
            return Err(bad("array count is not params + two moments"));
        }
        let n = count / 3;
        let mut it = arrays.into_iter();
        let params: Vec<(String, Tensor<f32>)> = it.by_ref().take(n).collect();
        let mut moments = |prefix: &str| -> Result<Vec<Tensor<f32>>, TrainError> {
            params
                .iter()
                .map(|(pname, p)| {
                    let (name, t) = it.next().expect("count checked");
                    if name != format!("{prefix}.{pname}") || t.shape() != p.shape() {
                        return Err(TrainError::Checkpoint(format!("array {name} does not match parameter {pname}")));
                    }
                    Ok(t)
                })
                .collect()
        };
        let m = moments("adam.m")?;
        let v = moments("adam.v")?;
        let params = ParamStore::new(params);
        Model::from_params(meta.model.clone(), params.clone())?;
        let t = meta.progress.step as u64;
        Ok(Checkpoint { meta, params, adam: AdamState { m, v, t } })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode()).map_err(|e| TrainError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: &Path, expect: Option<&ModelConfig>) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
        Self::decode(&bytes, expect).map_err(|e| match e {
            TrainError::Checkpoint(m) => TrainError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| TrainError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
