//! The `.mnet` dataset cache.
//!
//! Layout (little-endian):
//!
//! ```text
//! "MNET" | version u32 | record count u64 | face budget F u32 | category count u32
//! per record: label u32 | pad u32 (pre-fill face count)
//!             centers F×3 f32 | corners F×9 f32 | normals F×3 f32 | neighbours F×3 u64
//! CRC32 of the record bytes (u32)
//! ```
//!
//! Source paths are not stored; they live in the dataset manifest in record
//! order and can be reattached with [`Cache::attach_paths`].

use std::path::Path;

use thiserror::Error;

use crate::binio::{Reader, Truncated, Writer};
use crate::preprocess::FaceSet;

pub const CACHE_MAGIC: &[u8; 4] = b"MNET";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("not a dataset cache (bad magic)")]
    BadMagic,
    #[error("unsupported cache version {0}")]
    Version(u32),
    #[error("cache truncated")]
    Truncated,
    #[error("cache checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("cache has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("record {index}: {msg}")]
    Record { index: usize, msg: String },
    #[error("{0} paths supplied for {1} records")]
    PathCount(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<Truncated> for CacheError {
    fn from(_: Truncated) -> Self {
        CacheError::Truncated
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub face_set: FaceSet,
    pub label: usize,
    pub source_path: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cache {
    pub face_budget: usize,
    pub num_categories: usize,
    pub records: Vec<DatasetRecord>,
}

impl Cache {
    pub fn new(face_budget: usize, num_categories: usize, records: Vec<DatasetRecord>) -> Result<Self, CacheError> {
        let cache = Self {
            face_budget,
            num_categories,
            records,
        };
        cache.validate()?;
        Ok(cache)
    }

    fn validate(&self) -> Result<(), CacheError> {
        for (index, r) in self.records.iter().enumerate() {
            if r.face_set.len() != self.face_budget {
                return Err(CacheError::Record {
                    index,
                    msg: format!("has {} faces, budget is {}", r.face_set.len(), self.face_budget),
                });
            }
            if r.label >= self.num_categories {
                return Err(CacheError::Record {
                    index,
                    msg: format!("label {} >= category count {}", r.label, self.num_categories),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sets `source_path` of record `i` to `paths[i]`.
    pub fn attach_paths(&mut self, paths: &[String]) -> Result<(), CacheError> {
        if paths.len() != self.records.len() {
            return Err(CacheError::PathCount(paths.len(), self.records.len()));
        }
        for (r, p) in self.records.iter_mut().zip(paths) {
            r.source_path = p.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CacheError> {
        self.validate()?;
        let f = self.face_budget;
        let mut w = Writer::new();
        w.bytes(CACHE_MAGIC);
        w.u32(CACHE_VERSION);
        w.u64(self.records.len() as u64);
        w.u32(f as u32);
        w.u32(self.num_categories as u32);
        w.buf.reserve(self.records.len() * (8 + f * 84) + 4);
        for r in &self.records {
            let fs = &r.face_set;
            w.u32(r.label as u32);
            w.u32(fs.original_faces() as u32);
            fs.centers().iter().flatten().for_each(|&v| w.f32(v));
            fs.corners().iter().flatten().for_each(|&v| w.f32(v));
            fs.normals().iter().flatten().for_each(|&v| w.f32(v));
            fs.neighbors().iter().flatten().for_each(|&v| w.u64(v as u64));
        }
        w.crc_trailer(HEADER_LEN);
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CacheError> {
        let mut r = Reader::new(bytes);
        if r.take(4).map_err(|_| CacheError::BadMagic)? != CACHE_MAGIC {
            return Err(CacheError::BadMagic);
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(CacheError::Version(version));
        }
        let count = r.u64()? as usize;
        let f = r.u32()? as usize;
        let num_categories = r.u32()? as usize;
        let record_len = 8 + f * 84;
        let payload_len = count.checked_mul(record_len).ok_or(CacheError::Truncated)?;
        if r.remaining() < payload_len + 4 {
            return Err(CacheError::Truncated);
        }
        if r.remaining() > payload_len + 4 {
            return Err(CacheError::TrailingBytes(r.remaining() - payload_len - 4));
        }
        let computed = crc32fast::hash(&bytes[HEADER_LEN..HEADER_LEN + payload_len]);
        let stored = u32::from_le_bytes(bytes[HEADER_LEN + payload_len..].try_into().expect("4 bytes"));
        if stored != computed {
            return Err(CacheError::Checksum { stored, computed });
        }

        let mut records = Vec::with_capacity(count);
        for index in 0..count {
            let label = r.u32()? as usize;
            let original = r.u32()? as usize;
            let centers = chunk::<3>(r.f32s(3 * f)?);
            let corners = chunk::<9>(r.f32s(9 * f)?);
            let normals = chunk::<3>(r.f32s(3 * f)?);
            let mut neighbors = Vec::with_capacity(f);
            for _ in 0..f {
                neighbors.push([r.u64()? as usize, r.u64()? as usize, r.u64()? as usize]);
            }
            let face_set = FaceSet::from_parts(centers, corners, normals, neighbors, original).map_err(|e| {
                CacheError::Record {
                    index,
                    msg: e.to_string(),
                }
            })?;
            records.push(DatasetRecord {
                face_set,
                label,
                source_path: String::new(),
            });
        }
        Self::new(f, num_categories, records)
    }
}

fn chunk<const N: usize>(flat: Vec<f32>) -> Vec<[f32; N]> {
    flat.chunks_exact(N)
        .map(|c| c.try_into().expect("exact chunk"))
        .collect()
}

pub fn write_cache(cache: &Cache, path: impl AsRef<Path>) -> Result<(), CacheError> {
    std::fs::write(path, cache.to_bytes()?)?;
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Cache, CacheError> {
    Cache::from_bytes(&std::fs::read(path)?)
}
