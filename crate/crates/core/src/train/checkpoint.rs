//! Checkpoint files.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! "MOCC"  u16 version  u32 tensor-count
//! per tensor: u16 name-len, name, u8 rank, u32 dims[rank], u8 value-width (4|8), values
//! u32 config-len, config text (key=value lines)
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Tensors cover parameters, batch-norm running statistics and Adam moments;
//! the config text holds the training config plus step counters, so a loaded
//! trainer resumes exactly where the saved one stopped.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::model::Model;
use crate::params::Parameterized;
use crate::tensor::{Precision, Real, Tensor};
use crate::train::adam::AdamState;
use crate::train::config::{parse_pairs, TrainingConfig};
use crate::train::trainer::{EpochAccumulator, Trainer};

pub const MAGIC: [u8; 4] = *b"MOCC";
pub const FORMAT_VERSION: u16 = 1;

struct Block {
    name: String,
    shape: Vec<usize>,
    precision: Precision,
    values: Vec<u8>,
}

fn tensor_block<T: Real>(name: String, t: &Tensor<T>) -> Block {
    let mut values = Vec::with_capacity(t.len() * T::PRECISION.byte_width());
    for &v in t.data() {
        v.write_le(&mut values);
    }
    Block {
        name,
        shape: t.shape().to_vec(),
        precision: T::PRECISION,
        values,
    }
}

fn real(v: f64) -> String {
    format!("{v:?}")
}

fn adam_blocks<T: Real>(group: &str, names: &[String], s: &AdamState<T>, out: &mut Vec<Block>) {
    for (name, m) in names.iter().zip(&s.m) {
        out.push(tensor_block(format!("adam.{group}.m.{name}"), m));
    }
    for (name, v) in names.iter().zip(&s.v) {
        out.push(tensor_block(format!("adam.{group}.v.{name}"), v));
    }
}

fn group_names<T: Real>(model: &Model<T>) -> (Vec<String>, Option<Vec<String>>) {
    match model {
        Model::Moc(m) => (m.experts.as_slice().param_names(), Some(m.gate.param_names())),
        other => (other.param_names(), None),
    }
}

fn state_pairs<T: Real>(t: &Trainer<T>) -> Vec<(String, String)> {
    let tracked: String = t
        .model
        .norms()
        .iter()
        .map(|b| if b.is_tracked() { '1' } else { '0' })
        .collect();
    let acc = &t.acc;
    vec![
        ("state.step".into(), t.step.to_string()),
        ("state.adam.expert.step".into(), t.expert_opt.step.to_string()),
        (
            "state.adam.gate.step".into(),
            t.gate_opt.as_ref().map_or(String::new(), |g| g.step.to_string()),
        ),
        ("state.bn.tracked".into(), tracked),
        ("state.acc.samples".into(), acc.samples.to_string()),
        ("state.acc.expert".into(), real(acc.expert)),
        ("state.acc.mse".into(), real(acc.mse)),
        ("state.acc.penalty".into(), real(acc.penalty)),
        (
            "state.acc.gate_sum".into(),
            acc.gate_sum
                .as_ref()
                .map(|v| v.iter().map(|x| real(*x)).collect::<Vec<_>>().join(","))
                .unwrap_or_else(|| "none".into()),
        ),
    ]
}

/// Serializes the full trainer state.
pub fn checkpoint_bytes<T: Real>(trainer: &Trainer<T>) -> Vec<u8> {
    let mut blocks = Vec::new();
    trainer
        .model
        .visit_params("", &mut |n, t| blocks.push(tensor_block(format!("param.{n}"), t)));
    trainer
        .model
        .visit_buffers("", &mut |n, t| blocks.push(tensor_block(format!("buffer.{n}"), t)));
    let (expert_names, gate_names) = group_names(&trainer.model);
    adam_blocks("expert", &expert_names, &trainer.expert_opt, &mut blocks);
    if let (Some(names), Some(state)) = (gate_names, &trainer.gate_opt) {
        adam_blocks("gate", &names, state, &mut blocks);
    }

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in &blocks {
        out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.push(b.shape.len() as u8);
        for &d in &b.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(b.precision.byte_width() as u8);
        out.extend_from_slice(&b.values);
    }
    let mut text = trainer.config.to_text();
    for (k, v) in state_pairs(trainer) {
        text.push_str(&format!("{k}={v}\n"));
    }
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_checkpoint<T: Real>(trainer: &Trainer<T>, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(trainer)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// A checkpoint parsed and checksum-verified, not yet bound to a model.
pub struct RawCheckpoint {
    blocks: Vec<Block>,
    config: BTreeMap<String, String>,
}

impl RawCheckpoint {
    pub fn parse(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let count = r.u32("tensor count")?;
        let mut blocks = Vec::new();
        for _ in 0..count {
            let len = r.u16("tensor name")? as usize;
            let name = String::from_utf8(r.take(len, "tensor name")?.to_vec())
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
            let rank = r.u8("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensor shape")? as usize);
            }
            let precision = match r.u8("tensor precision")? {
                4 => Precision::Standard,
                8 => Precision::High,
                w => return Err(CheckpointError::Malformed(format!("tensor {name}: value width {w}"))),
            };
            let bytes = shape
                .iter()
                .try_fold(precision.byte_width(), |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name}: shape {shape:?} overflows")))?;
            let values = r.take(bytes, "tensor values")?.to_vec();
            blocks.push(Block {
                name,
                shape,
                precision,
                values,
            });
        }
        let len = r.u32("config block")? as usize;
        let text = std::str::from_utf8(r.take(len, "config block")?)
            .map_err(|_| CheckpointError::Malformed("config block is not UTF-8".into()))?;
        let config = parse_pairs(text, "checkpoint config").map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let body = r.pos;
        let stored = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} bytes after the checksum",
                bytes.len() - r.pos
            )));
        }
        let computed = crc32fast::hash(&bytes[..body]);
        if stored != computed {
            return Err(CheckpointError::ChecksumMismatch { stored, computed });
        }
        Ok(RawCheckpoint { blocks, config })
    }

    /// The training config stored in the file.
    pub fn config(&self) -> Result<TrainingConfig> {
        TrainingConfig::from_pairs(
            self.config
                .iter()
                .filter(|(k, _)| !k.starts_with("state."))
                .map(|(k, v)| (k.as_str(), v.as_str())),
        )
    }

    fn state(&self, key: &str) -> Result<&str, CheckpointError> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing {key}")))
    }

    fn state_num<N: std::str::FromStr>(&self, key: &str) -> Result<N, CheckpointError> {
        self.state(key)?
            .parse()
            .map_err(|_| CheckpointError::Malformed(format!("bad value for {key}")))
    }

    /// Rebuilds the trainer in precision `T`.
    pub fn into_trainer<T: Real>(mut self) -> Result<Trainer<T>> {
        let config = self.config()?;
        if config.precision != T::PRECISION {
            return Err(CheckpointError::PrecisionMismatch {
                found: config.precision.name(),
                requested: T::PRECISION.name(),
            }
            .into());
        }
        let mut trainer = Trainer::<T>::new(config)?;
        let mut blocks: BTreeMap<String, Block> = std::mem::take(&mut self.blocks)
            .into_iter()
            .map(|b| (b.name.clone(), b))
            .collect();
        let mut err: Option<CheckpointError> = None;
        let mut fill = |name: String, t: &mut Tensor<T>| {
            if err.is_some() {
                return;
            }
            let Some(b) = blocks.remove(&name) else {
                err = Some(CheckpointError::ShapeMismatch {
                    name,
                    detail: "missing from file".into(),
                });
                return;
            };
            if b.shape != t.shape() {
                err = Some(CheckpointError::ShapeMismatch {
                    name,
                    detail: format!("file has {:?}, config implies {:?}", b.shape, t.shape()),
                });
                return;
            }
            if b.precision != T::PRECISION {
                err = Some(CheckpointError::PrecisionMismatch {
                    found: b.precision.name(),
                    requested: T::PRECISION.name(),
                });
                return;
            }
            let w = T::PRECISION.byte_width();
            for (dst, chunk) in t.data_mut().iter_mut().zip(b.values.chunks_exact(w)) {
                *dst = T::read_le(chunk);
            }
        };
        trainer
            .model
            .visit_params_mut("", &mut |n, t| fill(format!("param.{n}"), t));
        trainer
            .model
            .visit_buffers_mut("", &mut |n, t| fill(format!("buffer.{n}"), t));
        let (expert_names, gate_names) = group_names(&trainer.model);
        for (name, t) in expert_names.iter().zip(trainer.expert_opt.m.iter_mut()) {
            fill(format!("adam.expert.m.{name}"), t);
        }
        for (name, t) in expert_names.iter().zip(trainer.expert_opt.v.iter_mut()) {
            fill(format!("adam.expert.v.{name}"), t);
        }
        if let (Some(names), Some(state)) = (gate_names, trainer.gate_opt.as_mut()) {
            for (name, t) in names.iter().zip(state.m.iter_mut()) {
                fill(format!("adam.gate.m.{name}"), t);
            }
            for (name, t) in names.iter().zip(state.v.iter_mut()) {
                fill(format!("adam.gate.v.{name}"), t);
            }
        }
        if let Some(e) = err {
            return Err(e.into());
        }
        if let Some(extra) = blocks.keys().next() {
            return Err(CheckpointError::ShapeMismatch {
                name: extra.clone(),
                detail: "not part of the configured model".into(),
            }
            .into());
        }

        trainer.step = self.state_num("state.step")?;
        trainer.expert_opt.step = self.state_num("state.adam.expert.step")?;
        if let Some(g) = trainer.gate_opt.as_mut() {
            g.step = self.state_num("state.adam.gate.step")?;
        }
        let tracked = self.state("state.bn.tracked")?;
        let mut norms = trainer.model.norms_mut();
        if tracked.len() != norms.len() || !tracked.chars().all(|c| c == '0' || c == '1') {
            return Err(CheckpointError::Malformed("bad state.bn.tracked".into()).into());
        }
        for (b, c) in norms.iter_mut().zip(tracked.chars()) {
            b.tracked = c == '1';
        }
        let gate_sum = match self.state("state.acc.gate_sum")? {
            "none" => None,
            "" => Some(Vec::new()),
            s => Some(
                s.split(',')
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| CheckpointError::Malformed("bad state.acc.gate_sum".into()))?,
            ),
        };
        trainer.acc = EpochAccumulator {
            samples: self.state_num("state.acc.samples")?,
            expert: self.state_num("state.acc.expert")?,
            mse: self.state_num("state.acc.mse")?,
            penalty: self.state_num("state.acc.penalty")?,
            gate_sum,
        };
        Ok(trainer)
    }
}

pub fn read_checkpoint(path: &Path) -> Result<RawCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(RawCheckpoint::parse(&bytes)?)
}

/// Loads a trainer (model, optimizer state and schedule position) in precision `T`.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Trainer<T>> {
    read_checkpoint(path)?.into_trainer()
}
