//! Mesh → face-set conversion: decimation, normalization, per-face values,
//! adjacency, and training-time augmentation.

mod augment;
mod decimate;
mod face_set;

use thiserror::Error;

use crate::mesh_io::{MeshError, TriMesh};

pub use augment::{fill_to_budget, jitter, jitter_face_set};
pub use decimate::decimate;
pub use face_set::{build_face_set, build_face_set_counted, shared_edge_neighbors, FaceSet, MIN_DOUBLE_AREA};

pub(crate) use face_set::face_geometry;

/// Face budget used throughout the classification experiments.
pub const DEFAULT_FACE_BUDGET: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("decimation target {0} is below the minimum of 4 faces")]
    TargetTooSmall(usize),
    #[error("decimation stalled at {achieved} faces (target {target})")]
    DecimationStalled { achieved: usize, target: usize },
    #[error("all vertices coincide; cannot scale to the unit sphere")]
    ZeroScale,
    #[error("every face has zero area")]
    AllFacesDegenerate,
    #[error("face set has {have} faces, more than the budget of {budget}")]
    OverBudget { have: usize, budget: usize },
    #[error("negative jitter sigma {0}")]
    NegativeSigma(f64),
    #[error("inconsistent face set: {0}")]
    Inconsistent(String),
}

/// Translates the vertex mean to the origin and scales so the farthest
/// vertex lies on the unit sphere.
pub fn normalize(mesh: &TriMesh) -> Result<TriMesh, PreprocessError> {
    let n = mesh.vertices().len() as f64;
    let mut mean = [0.0f64; 3];
    for v in mesh.vertices() {
        for d in 0..3 {
            mean[d] += v[d];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let radius = mesh
        .vertices()
        .iter()
        .map(|v| ((v[0] - mean[0]).powi(2) + (v[1] - mean[1]).powi(2) + (v[2] - mean[2]).powi(2)).sqrt())
        .fold(0.0f64, f64::max);
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(PreprocessError::ZeroScale);
    }
    Ok(mesh.map_vertices(|v| std::array::from_fn(|d| (v[d] - mean[d]) / radius))?)
}

/// The per-shape pipeline: decimate to `budget` faces, normalize, then
/// compute the face set (no fill).
pub fn prepare(mesh: &TriMesh, budget: usize) -> Result<FaceSet, PreprocessError> {
    let small = decimate(mesh, budget)?;
    let unit = normalize(&small)?;
    build_face_set(&unit)
}
