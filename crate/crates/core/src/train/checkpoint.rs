//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "FERCNN01"
//! version    u32 LE    1
//! meta_len   u32 LE    length of the JSON block
//! meta       UTF-8 JSON {config, run, optimizer, rng}
//! count      u32 LE    number of tensors
//! per tensor:
//!   name_len u16 LE, name (UTF-8)
//!   rank     u8, rank x u32 LE extents
//!   payload  product(extents) x f32 LE, row-major
//! ```
//!
//! Tensors are the parameter slots in model order, then the batch-norm
//! running statistics, then Adam moments (`adam.m.<slot>`, `adam.v.<slot>`)
//! when the optimizer is Adam and has taken a step.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig};
use crate::optim::{Adam, Moments, Optimizer, OptimizerKind, Sgd};
use crate::tensor::{Rng, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FERCNN01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Run bookkeeping stored next to the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    /// Number of completed epochs.
    pub epoch: usize,
    /// The configuration that produced the checkpoint, when known.
    pub train: Option<TrainConfig>,
    pub diverged_at: Option<usize>,
}

/// Scalar optimizer state; Adam moment tensors travel with the other tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub decay: f64,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    run: RunMeta,
    optimizer: OptimizerState,
    rng: Rng,
}

/// Everything needed to evaluate or resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub run: RunMeta,
    pub optimizer: OptimizerState,
    pub rng: Rng,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn capture(model: &Model<f32>, optimizer: &Optimizer<f32>, rng: &Rng, run: RunMeta) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> = model
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        tensors.extend(model.buffers().into_iter().map(|(n, t)| (n, t.clone())));
        let optimizer = match optimizer {
            Optimizer::Sgd(s) => OptimizerState {
                kind: OptimizerKind::Sgd,
                lr: s.base_lr,
                decay: s.decay,
                step_count: s.step_count,
                beta1: 0.0,
                beta2: 0.0,
                epsilon: 0.0,
            },
            Optimizer::Adam(a) => {
                for m in a.moments() {
                    tensors.push((format!("adam.m.{}", m.name), m.first.clone()));
                    tensors.push((format!("adam.v.{}", m.name), m.second.clone()));
                }
                OptimizerState {
                    kind: OptimizerKind::Adam,
                    lr: a.lr,
                    decay: 0.0,
                    step_count: a.step_count,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    epsilon: a.epsilon,
                }
            }
        };
        Self {
            config: model.config().clone(),
            run,
            optimizer,
            rng: rng.clone(),
            tensors,
        }
    }

    /// Rebuilds the model with every parameter and running statistic taken
    /// from the checkpoint.
    pub fn model(&self) -> Result<Model<f32>> {
        // initial weights are overwritten, so the init stream is irrelevant
        let mut model = Model::build(&self.config, &mut Rng::seed(0))?;
        let mut by_name: HashMap<&str, &Tensor<f32>> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut take = |name: &str, dst: &mut Tensor<f32>| -> Result<()> {
            let src = by_name
                .remove(name)
                .ok_or_else(|| Error::MalformedCheckpoint(format!("missing tensor `{name}`")))?;
            if src.shape() != dst.shape() {
                return Err(Error::TensorShapeMismatch {
                    name: name.to_owned(),
                    found: src.shape().to_vec(),
                    expected: dst.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
            Ok(())
        };
        for slot in model.params_mut() {
            take(&slot.name.clone(), &mut slot.value)?;
        }
        for (name, buf) in model.buffers_mut() {
            take(&name, buf)?;
        }
        Ok(model)
    }

    /// Rebuilds the optimizer, including Adam moments.
    pub fn optimizer(&self) -> Result<Optimizer<f32>> {
        let s = &self.optimizer;
        Ok(match s.kind {
            OptimizerKind::Sgd => {
                let mut sgd = Sgd::new(s.lr, s.decay)?;
                sgd.step_count = s.step_count;
                Optimizer::Sgd(sgd)
            }
            OptimizerKind::Adam => {
                let mut adam = Adam::new(s.lr)?;
                adam.beta1 = s.beta1;
                adam.beta2 = s.beta2;
                adam.epsilon = s.epsilon;
                adam.step_count = s.step_count;
                let mut moments = Vec::new();
                for (name, first) in &self.tensors {
                    let Some(slot) = name.strip_prefix("adam.m.") else {
                        continue;
                    };
                    let v_name = format!("adam.v.{slot}");
                    let second = self
                        .tensors
                        .iter()
                        .find(|(n, _)| *n == v_name)
                        .map(|(_, t)| t.clone())
                        .ok_or_else(|| Error::MalformedCheckpoint(format!("missing `{v_name}`")))?;
                    moments.push(Moments {
                        name: slot.to_owned(),
                        first: first.clone(),
                        second,
                    });
                }
                adam.set_moments(moments);
                Optimizer::Adam(adam)
            }
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            run: self.run.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng.clone(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::MalformedCheckpoint(format!("metadata: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&len_u32(json.len(), "metadata")?.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&len_u32(self.tensors.len(), "tensor count")?.to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::MalformedCheckpoint(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.rank())
                .map_err(|_| Error::MalformedCheckpoint(format!("rank of `{name}` exceeds 255")))?;
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&len_u32(d, "extent")?.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses and validates a checkpoint: magic, version, complete tensors,
    /// no trailing bytes, and parameter shapes that match the embedded
    /// model configuration.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = r.u32("metadata length")? as usize;
        let header: Header = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::MalformedCheckpoint(format!("metadata: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let what = format!("tensor {i}");
            let name_len = usize::from(r.u16(&what)?);
            let name = std::str::from_utf8(r.take(name_len, &what)?)
                .map_err(|_| Error::MalformedCheckpoint(format!("{what}: name is not UTF-8")))?
                .to_owned();
            let what = format!("tensor `{name}`");
            let rank = usize::from(r.take(1, &what)?[0]);
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32(&what)? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::MalformedCheckpoint(format!("{what}: size overflows")))?;
            let data = r
                .take(len, &what)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = Tensor::from_vec(&shape, data)
                .map_err(|e| Error::MalformedCheckpoint(format!("{what}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::MalformedCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let ckpt = Self {
            config: header.config,
            run: header.run,
            optimizer: header.optimizer,
            rng: header.rng,
            tensors,
        };
        ckpt.config
            .validate()
            .map_err(|e| Error::MalformedCheckpoint(format!("embedded model config: {e}")))?;
        ckpt.model()?;
        Ok(ckpt)
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::MalformedCheckpoint(format!("{what} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(what.to_owned()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
