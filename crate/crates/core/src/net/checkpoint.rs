//! `JDCM` checkpoint files.
//!
//! ```text
//! "JDCM" | version u16 | header length u32 | header JSON
//! | records until EOF: name length u16 | name | dtype u8 | rank u8
//! |                    extents u32 x rank | little-endian values
//! ```
//!
//! dtype 0 is f32, 1 is f64. The JSON header carries the architecture,
//! quality, metric and training stage, plus any caller-specific fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ArchConfig, Metric, Quality};
use super::model::CodecModel;
use crate::tensor::{DType, Real, Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"JDCM";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("bad record {name}: {detail}")]
    Record { name: String, detail: String },
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

/// Fields every model checkpoint header carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub arch: ArchConfig,
    pub quality: Quality,
    pub metric: Metric,
    /// `init`, `pretrain` or `finetune`.
    pub stage: String,
}

/// A parsed checkpoint: JSON header plus named records kept in double
/// precision (f32 values survive the round trip exactly).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub records: Vec<(String, DType, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn new(header: serde_json::Value) -> Self {
        Checkpoint { header, records: Vec::new() }
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.records.push((name.into(), T::DTYPE, t.cast()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.records.iter().find(|(n, _, _)| n == name).map(|(_, _, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("JSON values serialise");
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, dtype, t) in &self.records {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(*dtype as u8);
            out.push(4);
            for e in t.shape().0 {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in t.data() {
                match dtype {
                    DType::F32 => (v as f32).write_le(&mut out),
                    DType::F64 => v.write_le(&mut out),
                }
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, CheckpointError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], CheckpointError> {
            let end = pos.checked_add(n).filter(|&e| e <= data.len()).ok_or(CheckpointError::Truncated)?;
            let s = &data[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let hlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let header: serde_json::Value =
            serde_json::from_slice(take(hlen)?).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut records = Vec::new();
        loop {
            let name_len = match take(2) {
                Ok(b) => u16::from_le_bytes(b.try_into().unwrap()) as usize,
                Err(_) => break,
            };
            let name = String::from_utf8(take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Header("record name is not UTF-8".into()))?;
            let bad = |detail: String| CheckpointError::Record { name: name.clone(), detail };
            let tag = take(1)?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| bad(format!("unknown dtype {tag}")))?;
            let rank = take(1)?[0] as usize;
            if rank > 4 {
                return Err(bad(format!("rank {rank} > 4")));
            }
            let mut extents = [1usize; 4];
            for i in 0..rank {
                extents[4 - rank + i] = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            }
            let shape = Shape(extents);
            let n = shape.numel();
            let raw = take(n.checked_mul(dtype.size()).ok_or(CheckpointError::Truncated)?)?;
            let values: Vec<f64> = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            };
            let t = Tensor::from_vec(shape, values).map_err(|e| bad(e.to_string()))?;
            records.push((name, dtype, t));
        }
        if pos != data.len() {
            return Err(CheckpointError::Truncated);
        }
        Ok(Checkpoint { header, records })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let data = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&data)
    }

    pub fn model_header(&self) -> Result<ModelHeader, CheckpointError> {
        serde_json::from_value(self.header.clone()).map_err(|e| CheckpointError::Header(e.to_string()))
    }
}

impl<T: Real> CodecModel<T> {
    pub fn header(&self, stage: &str) -> ModelHeader {
        ModelHeader { arch: self.arch, quality: self.quality, metric: self.metric, stage: stage.to_string() }
    }

    /// Checkpoint holding this model's parameters under `header`.
    pub fn to_checkpoint(&self, header: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(header);
        for (_, name, t) in self.params.iter() {
            ck.push(name, t);
        }
        ck
    }

    pub fn save(&self, path: &Path, stage: &str) -> Result<(), CheckpointError> {
        let header = serde_json::to_value(self.header(stage)).expect("header serialises");
        self.to_checkpoint(header).save(path)
    }

    /// Rebuilds a model from a checkpoint; every parameter must be present
    /// with its expected shape.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let h = ck.model_header()?;
        let mut model = CodecModel::<T>::new(h.arch, h.quality, h.metric, 0).map_err(CheckpointError::Header)?;
        model.load_params(ck)?;
        Ok(model)
    }

    pub fn load_params(&mut self, ck: &Checkpoint) -> Result<(), CheckpointError> {
        let names: Vec<String> = self.params.iter().map(|(_, n, _)| n.to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            let src = ck.get(name).ok_or_else(|| CheckpointError::Mismatch(format!("missing parameter {name}")))?;
            let dst = &mut self.params.tensors_mut()[i];
            if src.shape() != dst.shape() {
                return Err(CheckpointError::Mismatch(format!(
                    "parameter {name}: checkpoint {} vs model {}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.cast();
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
