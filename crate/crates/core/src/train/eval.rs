use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::retrieval::retrieval_map;
use super::TrainError;
use crate::mesh_io::DatasetRecord;
use crate::model::{FaceBatch, MeshNet, Pass};

/// Eval-mode network outputs for a list of records, in record order.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub num_classes: usize,
    pub dim: usize,
    /// `[n, num_classes]`
    pub logits: Vec<f32>,
    /// `[n, dim]` global features.
    pub embeddings: Vec<f32>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.logits.len() / self.num_classes.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Arg-max class per record (lowest index on ties).
    pub fn predicted(&self) -> Vec<usize> {
        self.logits
            .chunks(self.num_classes)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Mean softmax cross-entropy against `labels`.
    pub fn mean_loss(&self, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (row, &y) in self.logits.chunks(self.num_classes).zip(labels) {
            let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
            total += lse - row[y] as f64;
        }
        total / labels.len().max(1) as f64
    }
}

/// Runs the network in eval mode over `records`, batches in parallel.
pub fn predict(net: &MeshNet<f32>, records: &[DatasetRecord], batch_size: usize) -> Result<Predictions, TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let chunks: Vec<&[DatasetRecord]> = records.chunks(batch_size.max(1)).collect();
    let parts = chunks
        .par_iter()
        .map(|chunk| {
            let sets: Vec<_> = chunk.iter().map(|r| &r.face_set).collect();
            let batch = FaceBatch::new(&sets)?;
            let mut p = Pass::eval();
            let out = net.forward(&mut p, &batch)?;
            Ok((
                p.graph.value(out.logits).data().to_vec(),
                p.graph.value(out.global).data().to_vec(),
            ))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mut pred = Predictions {
        num_classes: net.config().num_classes,
        dim: net.config().fusion_width,
        logits: Vec::new(),
        embeddings: Vec::new(),
    };
    for (l, e) in parts {
        pred.logits.extend(l);
        pred.embeddings.extend(e);
    }
    Ok(pred)
}

/// Records whose pre-fill face count falls in `[lo, hi)` (the last group
/// also takes counts equal to the budget).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceGroup {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    pub proportion: f64,
    pub accuracy: Option<f64>,
}

pub const FACE_GROUP_WIDTH: usize = 200;

/// Partitions face counts into groups of width 200 up to `budget`.
pub fn face_groups(face_counts: &[usize], correct: &[bool], budget: usize) -> Vec<FaceGroup> {
    let groups = budget.max(1).div_ceil(FACE_GROUP_WIDTH).max(1);
    let mut count = vec![0usize; groups];
    let mut right = vec![0usize; groups];
    for (&c, &ok) in face_counts.iter().zip(correct) {
        let g = (c / FACE_GROUP_WIDTH).min(groups - 1);
        count[g] += 1;
        right[g] += ok as usize;
    }
    let n = face_counts.len().max(1) as f64;
    (0..groups)
        .map(|g| FaceGroup {
            lo: g * FACE_GROUP_WIDTH,
            hi: ((g + 1) * FACE_GROUP_WIDTH).min(budget.max(1)),
            count: count[g],
            proportion: count[g] as f64 / n,
            accuracy: (count[g] > 0).then(|| right[g] as f64 / count[g] as f64),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub loss: f64,
    pub overall_accuracy: f64,
    /// `None` for classes without test samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `None` when no class has two or more samples.
    pub map: Option<f64>,
    pub face_count_groups: Vec<FaceGroup>,
}

impl EvalReport {
    pub fn from_predictions(pred: &Predictions, records: &[DatasetRecord]) -> Result<Self, TrainError> {
        if records.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
        let predicted = pred.predicted();
        let correct: Vec<bool> = predicted.iter().zip(&labels).map(|(p, y)| p == y).collect();
        let c = pred.num_classes;
        let mut per = vec![(0usize, 0usize); c];
        for (&y, &ok) in labels.iter().zip(&correct) {
            per[y].0 += ok as usize;
            per[y].1 += 1;
        }
        let map = if records.len() >= 2 {
            retrieval_map(&pred.embeddings, pred.dim, &labels).ok()
        } else {
            None
        };
        let budget = records.iter().map(|r| r.face_set.len()).max().unwrap_or(0);
        let counts: Vec<usize> = records.iter().map(|r| r.face_set.original_faces()).collect();
        Ok(Self {
            samples: records.len(),
            loss: pred.mean_loss(&labels),
            overall_accuracy: correct.iter().filter(|&&b| b).count() as f64 / records.len() as f64,
            per_class_accuracy: per.iter().map(|&(r, t)| (t > 0).then(|| r as f64 / t as f64)).collect(),
            map,
            face_count_groups: face_groups(&counts, &correct, budget),
        })
    }

    /// Human-readable table; `names` label the per-class rows.
    pub fn table(&self, names: &[String]) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "samples   {}", self.samples);
        let _ = writeln!(s, "loss      {:.4}", self.loss);
        let _ = writeln!(s, "accuracy  {:.2}%", 100.0 * self.overall_accuracy);
        match self.map {
            Some(m) => {
                let _ = writeln!(s, "mAP       {:.2}%", 100.0 * m);
            }
            None => {
                let _ = writeln!(s, "mAP       n/a");
            }
        }
        let _ = writeln!(s, "\nfaces          share   accuracy");
        for g in self.face_count_groups.iter().rev() {
            let acc = g.accuracy.map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a));
            let _ = writeln!(s, "[{:>4}, {:>4})  {:>6.2}%  {acc}", g.lo, g.hi, 100.0 * g.proportion);
        }
        let _ = writeln!(s, "\nclass accuracy");
        for (i, a) in self.per_class_accuracy.iter().enumerate() {
            if let Some(a) = a {
                let name = names.get(i).cloned().unwrap_or_else(|| i.to_string());
                let _ = writeln!(s, "{name:<16} {:.2}%", 100.0 * a);
            }
        }
        s
    }
}

pub fn evaluate(net: &MeshNet<f32>, records: &[DatasetRecord], batch_size: usize) -> Result<EvalReport, TrainError> {
    let pred = predict(net, records, batch_size)?;
    EvalReport::from_predictions(&pred, records)
}
