//! Checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "MNCK" | version u32 | metadata: len u32 + UTF-8 | tensor count u64
//! per tensor: name len u32 + UTF-8 | rank u32 | dims u32 × rank | f32 × numel
//! optimizer flag u8; when 1: lr f64 | momentum f64 | weight_decay f64 | count u64
//!     per velocity: name len u32 + UTF-8 | len u64 | f32 × len
//! CRC32 of every preceding byte (u32)
//! ```

use std::path::Path;

use thiserror::Error;

use crate::binio::{Reader, Truncated, Writer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid UTF-8 in checkpoint string")]
    Utf8,
    #[error("checkpoint is missing tensor `{0}`")]
    Missing(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<Truncated> for CheckpointError {
    fn from(_: Truncated) -> Self {
        CheckpointError::Truncated
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSection {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocities: Vec<(String, Vec<f32>)>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    /// Free-form JSON describing what produced the tensors.
    pub metadata: String,
    pub tensors: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerSection>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&self.metadata);
        w.u64(self.tensors.len() as u64);
        for t in &self.tensors {
            w.str(&t.name);
            w.u32(t.shape.len() as u32);
            for &d in &t.shape {
                w.u32(d as u32);
            }
            for &v in &t.data {
                w.f32(v);
            }
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                w.f64(opt.lr);
                w.f64(opt.momentum);
                w.f64(opt.weight_decay);
                w.u64(opt.velocities.len() as u64);
                for (name, v) in &opt.velocities {
                    w.str(name);
                    w.u64(v.len() as u64);
                    for &x in v {
                        w.f32(x);
                    }
                }
            }
        }
        w.crc_trailer(0);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 {
            return Err(if bytes.starts_with(CHECKPOINT_MAGIC) || bytes.len() < 4 {
                CheckpointError::Truncated
            } else {
                CheckpointError::BadMagic
            });
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let body = &bytes[..bytes.len() - 4];
        let mut r = Reader::new(body);
        r.take(4)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let metadata = utf8(r.str()?)?;
        let count = r.u64()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = utf8(r.str()?)?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(CheckpointError::Truncated)?;
            let data = r.f32s(numel)?;
            tensors.push(NamedTensor { name, shape, data });
        }
        let optimizer = match r.u8()? {
            0 => None,
            _ => {
                let lr = r.f64()?;
                let momentum = r.f64()?;
                let weight_decay = r.f64()?;
                let n = r.u64()?;
                let mut velocities = Vec::new();
                for _ in 0..n {
                    let name = utf8(r.str()?)?;
                    let len = r.u64()? as usize;
                    velocities.push((name, r.f32s(len)?));
                }
                Some(OptimizerSection {
                    lr,
                    momentum,
                    weight_decay,
                    velocities,
                })
            }
        };
        if r.remaining() != 0 {
            return Err(CheckpointError::TrailingBytes(r.remaining()));
        }
        Ok(Self {
            metadata,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn utf8(b: &[u8]) -> Result<String, CheckpointError> {
    String::from_utf8(b.to_vec()).map_err(|_| CheckpointError::Utf8)
}
