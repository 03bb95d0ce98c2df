use serde::{Deserialize, Serialize};

use super::{predict, TrainError};
use crate::mesh_io::DatasetRecord;
use crate::model::MeshNet;
use crate::tensor::{Checkpoint, CheckpointError, NamedTensor};

/// Global features of a dataset, stored in the checkpoint container as an
/// `embeddings` tensor `[n, dim]` plus labels and paths in the metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
    pub paths: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    labels: Vec<usize>,
    paths: Vec<String>,
}

const KIND: &str = "embeddings";

impl Embeddings {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// The `k` rows closest to `query` under L2, ascending, ties by index.
    /// `exclude` drops one row (the query itself when it is in the set).
    pub fn nearest(&self, query: &[f32], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut d: Vec<(usize, f64)> = (0..self.len())
            .filter(|&i| Some(i) != exclude)
            .map(|i| {
                let s: f64 = self
                    .row(i)
                    .iter()
                    .zip(query)
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum();
                (i, s.sqrt())
            })
            .collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        d.truncate(k);
        d
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = Meta {
            kind: KIND.into(),
            labels: self.labels.clone(),
            paths: self.paths.clone(),
        };
        Checkpoint {
            metadata: serde_json::to_string(&meta).expect("plain data serializes"),
            tensors: vec![NamedTensor {
                name: KIND.into(),
                shape: vec![self.len(), self.dim],
                data: self.data.clone(),
            }],
            optimizer: None,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let meta: Meta = serde_json::from_str(&ck.metadata).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        if meta.kind != KIND {
            return Err(CheckpointError::Metadata(format!(
                "expected kind `{KIND}`, found `{}`",
                meta.kind
            )));
        }
        let t = ck.tensor(KIND).ok_or_else(|| CheckpointError::Missing(KIND.into()))?;
        let n = meta.labels.len();
        if t.shape.len() != 2 || t.shape[0] != n || meta.paths.len() != n {
            return Err(CheckpointError::Metadata(format!(
                "embedding shape {:?} does not match {n} labels and {} paths",
                t.shape,
                meta.paths.len()
            )));
        }
        Ok(Self {
            dim: t.shape[1],
            data: t.data.clone(),
            labels: meta.labels,
            paths: meta.paths,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CheckpointError> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CheckpointError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Eval-mode global features for every record, in record order.
pub fn embed(net: &MeshNet<f32>, records: &[DatasetRecord], batch_size: usize) -> Result<Embeddings, TrainError> {
    let pred = predict(net, records, batch_size)?;
    Ok(Embeddings {
        dim: pred.dim,
        data: pred.embeddings,
        labels: records.iter().map(|r| r.label).collect(),
        paths: records.iter().map(|r| r.source_path.clone()).collect(),
    })
}
