//! Dataset manifest: category → label map plus per-split file lists. File
//! lists are in the same order as the records of the matching `.mnet` cache.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("label indices must be 0..{0} with no gaps or repeats")]
    Labels(usize),
    #[error("entry `{path}` has label {label} but there are {categories} categories")]
    EntryLabel {
        path: String,
        label: usize,
        categories: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub categories: BTreeMap<String, usize>,
    pub face_budget: usize,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl Manifest {
    /// Assigns labels to `names` in sorted order.
    pub fn with_categories<S: AsRef<str>>(names: &[S], face_budget: usize) -> Self {
        let mut sorted: Vec<&str> = names.iter().map(|s| s.as_ref()).collect();
        sorted.sort_unstable();
        sorted.dedup();
        Self {
            categories: sorted.iter().enumerate().map(|(i, n)| (n.to_string(), i)).collect(),
            face_budget,
            train: Vec::new(),
            test: Vec::new(),
        }
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    /// Category names indexed by label.
    pub fn category_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.categories.len()];
        for (n, &i) in &self.categories {
            if i < names.len() {
                names[i] = n.clone();
            }
        }
        names
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let c = self.categories.len();
        let mut seen = vec![false; c];
        for &i in self.categories.values() {
            if i >= c || std::mem::replace(&mut seen[i], true) {
                return Err(ManifestError::Labels(c));
            }
        }
        for e in self.train.iter().chain(&self.test) {
            if e.label >= c {
                return Err(ManifestError::EntryLabel {
                    path: e.path.clone(),
                    label: e.label,
                    categories: c,
                });
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        self.validate()?;
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn paths(entries: &[ManifestEntry]) -> Vec<String> {
        entries.iter().map(|e| e.path.clone()).collect()
    }
}
