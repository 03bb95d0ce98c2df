use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{face_geometry, FaceSet, PreprocessError};
use crate::mesh_io::TriMesh;

/// Pads `fs` to exactly `budget` faces by appending copies of uniformly
/// sampled original faces. A copy keeps its source's neighbour row, so the
/// adjacency graph of the original faces is unchanged.
pub fn fill_to_budget<R: Rng + ?Sized>(fs: &FaceSet, budget: usize, rng: &mut R) -> Result<FaceSet, PreprocessError> {
    let n = fs.len();
    if n > budget {
        return Err(PreprocessError::OverBudget { have: n, budget });
    }
    let mut out = fs.clone();
    for _ in n..budget {
        let src = rng.random_range(0..n);
        out.centers.push(fs.centers[src]);
        out.corners.push(fs.corners[src]);
        out.normals.push(fs.normals[src]);
        out.neighbors.push(fs.neighbors[src]);
    }
    Ok(out)
}

fn normal(sigma: f64) -> Result<Normal<f64>, PreprocessError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(PreprocessError::NegativeSigma(sigma));
    }
    Ok(Normal::new(0.0, sigma).expect("sigma checked"))
}

/// Adds independent N(0, sigma²) noise to every vertex coordinate.
pub fn jitter<R: Rng + ?Sized>(mesh: &TriMesh, sigma: f64, rng: &mut R) -> Result<TriMesh, PreprocessError> {
    let dist = normal(sigma)?;
    if sigma == 0.0 {
        return Ok(mesh.clone());
    }
    Ok(mesh.map_vertices(|v| v.map(|c| c + dist.sample(rng)))?)
}

/// Jitter for cached face sets, where shared vertices are no longer known:
/// each face's three vertices are perturbed independently and its center,
/// corners and normal recomputed. A face that would become degenerate keeps
/// its original geometry. Neighbour indices are untouched.
pub fn jitter_face_set<R: Rng + ?Sized>(fs: &FaceSet, sigma: f64, rng: &mut R) -> Result<FaceSet, PreprocessError> {
    let dist = normal(sigma)?;
    if sigma == 0.0 {
        return Ok(fs.clone());
    }
    let mut out = fs.clone();
    for i in 0..fs.len() {
        let p = fs.face_vertices(i).map(|v| v.map(|c| c + dist.sample(rng)));
        if let Some((c, k, n)) = face_geometry(p) {
            out.centers[i] = c.map(|v| v as f32);
            out.corners[i] = k.map(|v| v as f32);
            out.normals[i] = n.map(|v| v as f32);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::build_face_set;
    use crate::shapes;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fill_preserves_prefix_and_copies() {
        let fs = build_face_set(&shapes::cube()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = fill_to_budget(&fs, 1024, &mut rng).unwrap();
        assert_eq!(out.len(), 1024);
        assert_eq!(out.original_faces(), 12);
        assert_eq!(&out.centers()[..12], fs.centers());
        assert_eq!(&out.neighbors()[..12], fs.neighbors());
        for i in 12..1024 {
            let src = (0..12)
                .find(|&j| fs.centers()[j] == out.centers()[i] && fs.normals()[j] == out.normals()[i])
                .unwrap();
            assert_eq!(out.neighbors()[i], fs.neighbors()[src]);
            assert_eq!(out.corners()[i], fs.corners()[src]);
        }
        let again = fill_to_budget(&fs, 1024, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn fill_edge_cases() {
        let fs = build_face_set(&shapes::cube()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(fill_to_budget(&fs, 12, &mut rng).unwrap(), fs);
        assert_eq!(
            fill_to_budget(&fs, 11, &mut rng),
            Err(PreprocessError::OverBudget { have: 12, budget: 11 })
        );
    }

    #[test]
    fn zero_sigma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = shapes::cube();
        assert_eq!(jitter(&m, 0.0, &mut rng).unwrap(), m);
        let fs = build_face_set(&m).unwrap();
        assert_eq!(jitter_face_set(&fs, 0.0, &mut rng).unwrap(), fs);
        assert!(jitter(&m, -1.0, &mut rng).is_err());
    }

    #[test]
    fn jitter_std_matches_sigma() {
        let n = 33_334;
        let verts: Vec<[f64; 3]> = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
        let faces = (0..n - 2).map(|i| [i, i + 1, i + 2]).collect();
        let m = TriMesh::new(verts, faces).unwrap();
        let out = jitter(&m, 0.01, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let d: Vec<f64> = m
            .vertices()
            .iter()
            .zip(out.vertices())
            .flat_map(|(a, b)| (0..3).map(move |k| b[k] - a[k]))
            .collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        let std = var.sqrt();
        assert!(d.len() >= 100_000);
        assert!((0.0095..=0.0105).contains(&std), "std {std}");
    }

    #[test]
    fn jittered_face_set_keeps_geometry_invariants() {
        let fs = build_face_set(&shapes::uv_sphere(8, 6)).unwrap();
        let out = jitter_face_set(&fs, 0.01, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        out.check_geometry(1e-5).unwrap();
        assert_eq!(out.neighbors(), fs.neighbors());
        assert_ne!(out.centers(), fs.centers());
    }
}
