//! Small synthetic dataset for smoke runs and overfit checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use std::time::{Duration, Instant};

use super::{train, EpochMetrics, EvalReport, TrainConfig, TrainError, TrainHooks};
use crate::mesh_io::{DatasetRecord, TriMesh};
use crate::model::{MeshNet, ModelConfig};
use crate::preprocess::{fill_to_budget, prepare};
use crate::shapes;

pub const OVERFIT_BUDGET: usize = 96;

fn overfit_meshes() -> Vec<(TriMesh, usize, &'static str)> {
    vec![
        (shapes::subdivided_box([1.0, 1.0, 1.0], 2), 0, "box-cube"),
        (shapes::subdivided_box([1.0, 0.5, 0.8], 2), 0, "box-slab"),
        (shapes::subdivided_box([0.6, 1.0, 0.4], 2), 0, "box-bar"),
        (shapes::subdivided_box([1.0, 1.0, 0.3], 2), 0, "box-plate"),
        (shapes::icosphere(1), 1, "icosphere"),
        (shapes::uv_sphere(8, 6), 1, "uv-sphere"),
        (shapes::torus(8, 5, 1.0, 0.4), 1, "torus-thick"),
        (shapes::torus(10, 4, 1.0, 0.25), 1, "torus-thin"),
    ]
}

/// Eight meshes in two classes (boxes and round shapes), each filled to
/// [`OVERFIT_BUDGET`] faces.
pub fn overfit_dataset(seed: u64) -> Result<Vec<DatasetRecord>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    overfit_meshes()
        .into_iter()
        .map(|(mesh, label, name)| {
            let fs = prepare(&mesh, OVERFIT_BUDGET)?;
            Ok(DatasetRecord {
                face_set: fill_to_budget(&fs, OVERFIT_BUDGET, &mut rng)?,
                label,
                source_path: format!("synthetic/{name}"),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverfitRun {
    /// Eval-mode `(loss, accuracy)` on the training set after each epoch.
    pub history: Vec<(f64, f64)>,
    /// First epoch (1-based) with accuracy 1.0 and loss below the target.
    pub converged_at: Option<usize>,
    pub elapsed: Duration,
}

/// Trains the default architecture on [`overfit_dataset`] with the default
/// optimizer until train accuracy is 1.0 and loss is below `target_loss`.
pub fn run_overfit(seed: u64, max_epochs: usize, target_loss: f64) -> Result<OverfitRun, TrainError> {
    let start = Instant::now();
    let data = overfit_dataset(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = MeshNet::<f32>::new(ModelConfig::standard(2), &mut rng)?;
    let cfg = TrainConfig {
        epochs: max_epochs,
        batch_size: data.len(),
        seed,
        ..TrainConfig::default()
    };
    // The training set doubles as the evaluation set, so every epoch is
    // re-measured in eval mode.
    let mut history = Vec::new();
    let mut converged_at = None;
    let mut stop = |m: &EpochMetrics, r: Option<&EvalReport>| {
        let r = r.expect("evaluation set supplied");
        history.push((r.loss, r.overall_accuracy));
        if r.overall_accuracy == 1.0 && r.loss < target_loss {
            converged_at = Some(m.epoch + 1);
            return false;
        }
        true
    };
    let hooks = TrainHooks {
        test: Some(&data),
        on_epoch: Some(&mut stop),
        ..TrainHooks::default()
    };
    train(&mut net, &data, &cfg, hooks)?;
    Ok(OverfitRun {
        history,
        converged_at,
        elapsed: start.elapsed(),
    })
}
