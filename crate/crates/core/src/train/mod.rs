//! Training loop, evaluation metrics, retrieval and embeddings.

mod embed;
mod eval;
pub mod harness;
mod retrieval;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh_io::DatasetRecord;
use crate::model::{FaceBatch, MeshNet, ModelError, Pass};
use crate::preprocess::{jitter_face_set, PreprocessError};
use crate::tensor::{CheckpointError, Sgd, SgdConfig, TensorError};

pub use embed::{embed, Embeddings};
pub use eval::{evaluate, face_groups, predict, EvalReport, FaceGroup, Predictions, FACE_GROUP_WIDTH};
pub use retrieval::{map_from_distances, pairwise_sq_distances, retrieval_map};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("training config: {0}")]
    Config(String),
    #[error("record {index} has label {label} but the model has {classes} classes")]
    Label { index: usize, label: usize, classes: usize },
    #[error("retrieval: {0}")]
    Retrieval(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs at which the learning rate is multiplied by `lr_gamma`.
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub seed: u64,
    pub jitter_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_milestones: vec![30, 60],
            lr_gamma: 0.1,
            seed: 0,
            jitter_sigma: 0.01,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted (it freezes the weights); negative or
    /// non-finite values are not.
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size < 1 {
            return err("batch_size must be at least 1");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return err("lr must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return err("momentum must be in [0, 1) and weight_decay non-negative");
        }
        if !(self.lr_gamma > 0.0) || !(self.jitter_sigma >= 0.0) {
            return err("lr_gamma must be positive and jitter_sigma non-negative");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.lr_gamma.powi(drops as i32)
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    /// Per-epoch stream: the epoch index is mixed into the seed.
    pub fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(epoch as u64 + 1);
        r
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Per-epoch callback: train metrics and, when available, the test report.
pub type EpochHook<'a> = dyn FnMut(&EpochMetrics, Option<&EvalReport>) -> bool + 'a;

/// Optional side channels of [`train`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Evaluated after every epoch; drives best-checkpoint selection.
    pub test: Option<&'a [DatasetRecord]>,
    /// Receives one JSON object per line.
    pub log: Option<&'a mut dyn Write>,
    /// `best.mnck` and `last.mnck` are written here.
    pub checkpoint_dir: Option<PathBuf>,
    /// Called with the train metrics and, when available, the test report;
    /// returning `false` stops training after this epoch.
    pub on_epoch: Option<&'a mut EpochHook<'a>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub history: Vec<EpochMetrics>,
    pub best_test_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
}

fn check_labels(net: &MeshNet<f32>, records: &[DatasetRecord]) -> Result<(), TrainError> {
    let classes = net.config().num_classes;
    match records.iter().enumerate().find(|(_, r)| r.label >= classes) {
        Some((index, r)) => Err(TrainError::Label {
            index,
            label: r.label,
            classes,
        }),
        None => Ok(()),
    }
}

/// Splits shuffled indices into batches. With batch norm a trailing
/// single-record batch is merged into its predecessor.
fn batches(order: &[usize], size: usize, merge_singleton: bool) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if merge_singleton && out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = order.len() - 1 - out.last().map_or(0, |b| b.len());
        out.pop();
        out.push(&order[start..]);
    }
    out
}

/// SGD training with per-epoch shuffling and jitter.
pub fn train(
    net: &mut MeshNet<f32>,
    records: &[DatasetRecord],
    cfg: &TrainConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainSummary, TrainError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_labels(net, records)?;
    if let Some(test) = hooks.test {
        check_labels(net, test)?;
    }
    if let Some(dir) = &hooks.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut sgd = Sgd::new(cfg.sgd(), &net.store);
    let mut summary = TrainSummary {
        epochs_run: 0,
        history: Vec::new(),
        best_test_accuracy: None,
        best_epoch: None,
    };
    let merge = net.config().batch_norm;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.lr_at(epoch);
        sgd.set_lr(lr);
        let mut rng = cfg.epoch_rng(epoch);
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng);

        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (bi, idx) in batches(&order, cfg.batch_size, merge).into_iter().enumerate() {
            let sets = idx
                .iter()
                .map(|&i| jitter_face_set(&records[i].face_set, cfg.jitter_sigma, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let labels: Vec<usize> = idx.iter().map(|&i| records[i].label).collect();
            let batch = FaceBatch::new(&sets.iter().collect::<Vec<_>>())?;

            let blown = |e: TrainError| match e {
                TrainError::Tensor(TensorError::NonFinite { .. })
                | TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. })) => {
                    TrainError::NonFiniteLoss { epoch, batch: bi, lr }
                }
                e => e,
            };
            let mut p = Pass::train(&mut rng);
            let out = net.forward(&mut p, &batch).map_err(|e| blown(e.into()))?;
            let loss = p
                .graph
                .softmax_cross_entropy(out.logits, &labels)
                .map_err(|e| blown(e.into()))?;
            let lv = p.graph.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: bi, lr });
            }
            let c = net.config().num_classes;
            for (row, &y) in p.graph.value(out.logits).data().chunks(c).zip(&labels) {
                let best = (0..c).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                correct += (best == y) as usize;
            }
            loss_sum += lv * labels.len() as f64;

            let updates = p.take_bn_updates();
            let mut graph = p.graph;
            graph.backward(loss).map_err(|e| blown(e.into()))?;
            net.store.zero_grads();
            graph.accumulate_param_grads(&mut net.store);
            sgd.step(&mut net.store).map_err(|e| blown(e.into()))?;
            net.apply_bn_updates(&updates);
        }

        let metrics = EpochMetrics {
            epoch,
            split: "train".into(),
            loss: loss_sum / records.len() as f64,
            accuracy: correct as f64 / records.len() as f64,
            lr,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        log_line(&mut hooks, &metrics)?;
        let report = match hooks.test {
            Some(test) => {
                let t = Instant::now();
                let r = evaluate(net, test, cfg.batch_size)?;
                log_line(
                    &mut hooks,
                    &EpochMetrics {
                        epoch,
                        split: "test".into(),
                        loss: r.loss,
                        accuracy: r.overall_accuracy,
                        lr,
                        wall_ms: t.elapsed().as_millis() as u64,
                    },
                )?;
                if summary.best_test_accuracy.is_none_or(|b| r.overall_accuracy > b) {
                    summary.best_test_accuracy = Some(r.overall_accuracy);
                    summary.best_epoch = Some(epoch);
                    if let Some(dir) = &hooks.checkpoint_dir {
                        let meta =
                            serde_json::json!({"epoch": epoch, "test_accuracy": r.overall_accuracy, "train": cfg});
                        net.to_checkpoint(Some(&sgd), meta).save(dir.join("best.mnck"))?;
                    }
                }
                Some(r)
            }
            None => None,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.3}{}",
            metrics.loss,
            metrics.accuracy,
            report
                .as_ref()
                .map_or(String::new(), |r| format!(" test acc {:.3}", r.overall_accuracy))
        );
        summary.history.push(metrics.clone());
        summary.epochs_run = epoch + 1;
        let go_on = match hooks.on_epoch.as_mut() {
            Some(f) => f(&metrics, report.as_ref()),
            None => true,
        };
        if !go_on {
            break;
        }
    }
    if let Some(dir) = &hooks.checkpoint_dir {
        let meta = serde_json::json!({"epoch": summary.epochs_run, "train": cfg});
        net.to_checkpoint(Some(&sgd), meta).save(dir.join("last.mnck"))?;
    }
    Ok(summary)
}

fn log_line(hooks: &mut TrainHooks<'_>, m: &EpochMetrics) -> Result<(), TrainError> {
    if let Some(w) = hooks.log.as_mut() {
        serde_json::to_writer(&mut *w, m).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
