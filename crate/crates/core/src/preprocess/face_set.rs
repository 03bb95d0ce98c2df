use std::collections::HashMap;

use super::PreprocessError;
use crate::mesh_io::{cross, norm, sub, TriMesh};

/// Cross-product norm below which a face counts as zero-area.
pub const MIN_DOUBLE_AREA: f64 = 1e-12;

/// Per-face network input: centroid, the three centroid-to-vertex vectors,
/// unit normal and up to three shared-edge neighbours (missing slots hold
/// the face's own index).
#[derive(Clone, Debug, PartialEq)]
pub struct FaceSet {
    pub(crate) centers: Vec<[f32; 3]>,
    pub(crate) corners: Vec<[f32; 9]>,
    pub(crate) normals: Vec<[f32; 3]>,
    pub(crate) neighbors: Vec<[usize; 3]>,
    pub(crate) original_faces: usize,
}

impl FaceSet {
    /// Assembles a face set from raw arrays, checking lengths and neighbour range.
    pub fn from_parts(
        centers: Vec<[f32; 3]>,
        corners: Vec<[f32; 9]>,
        normals: Vec<[f32; 3]>,
        neighbors: Vec<[usize; 3]>,
        original_faces: usize,
    ) -> Result<Self, PreprocessError> {
        let f = centers.len();
        if corners.len() != f || normals.len() != f || neighbors.len() != f {
            return Err(PreprocessError::Inconsistent(format!(
                "array lengths differ: {} centers, {} corners, {} normals, {} neighbours",
                f,
                corners.len(),
                normals.len(),
                neighbors.len()
            )));
        }
        if f == 0 {
            return Err(PreprocessError::Inconsistent("face set is empty".into()));
        }
        if let Some((i, n)) = neighbors.iter().enumerate().find(|(_, n)| n.iter().any(|&j| j >= f)) {
            return Err(PreprocessError::Inconsistent(format!(
                "face {i} has neighbour {n:?} outside [0, {f})"
            )));
        }
        if original_faces == 0 || original_faces > f {
            return Err(PreprocessError::Inconsistent(format!(
                "original face count {original_faces} not in [1, {f}]"
            )));
        }
        Ok(Self {
            centers,
            corners,
            normals,
            neighbors,
            original_faces,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[[f32; 3]] {
        &self.centers
    }

    pub fn corners(&self) -> &[[f32; 9]] {
        &self.corners
    }

    pub fn normals(&self) -> &[[f32; 3]] {
        &self.normals
    }

    pub fn neighbors(&self) -> &[[usize; 3]] {
        &self.neighbors
    }

    /// Face count before random fill.
    pub fn original_faces(&self) -> usize {
        self.original_faces
    }

    /// Reconstructs the three vertex positions of face `i` (center + corner).
    pub fn face_vertices(&self, i: usize) -> [[f64; 3]; 3] {
        let c = self.centers[i];
        let k = self.corners[i];
        std::array::from_fn(|v| std::array::from_fn(|d| c[d] as f64 + k[3 * v + d] as f64))
    }

    /// Checks the geometric invariants: corner vectors sum to zero and
    /// normals have unit length (both within `tol`).
    pub fn check_geometry(&self, tol: f32) -> Result<(), PreprocessError> {
        for (i, (k, n)) in self.corners.iter().zip(&self.normals).enumerate() {
            let s: [f32; 3] = std::array::from_fn(|d| k[d] + k[3 + d] + k[6 + d]);
            if s.iter().map(|v| v * v).sum::<f32>().sqrt() >= tol {
                return Err(PreprocessError::Inconsistent(format!("face {i}: corners sum to {s:?}")));
            }
            let len = n.iter().map(|v| v * v).sum::<f32>().sqrt();
            if (len - 1.0).abs() >= tol {
                return Err(PreprocessError::Inconsistent(format!("face {i}: normal length {len}")));
            }
        }
        Ok(())
    }

    /// Returns the face set with faces reordered so that new face `k` is old
    /// face `order[k]`, remapping neighbour indices accordingly.
    pub fn permuted(&self, order: &[usize]) -> Result<Self, PreprocessError> {
        let f = self.len();
        let mut inverse = vec![usize::MAX; f];
        for (new, &old) in order.iter().enumerate() {
            if old >= f || inverse[old] != usize::MAX {
                return Err(PreprocessError::Inconsistent("order is not a permutation".into()));
            }
            inverse[old] = new;
        }
        if order.len() != f {
            return Err(PreprocessError::Inconsistent("order is not a permutation".into()));
        }
        Ok(Self {
            centers: order.iter().map(|&o| self.centers[o]).collect(),
            corners: order.iter().map(|&o| self.corners[o]).collect(),
            normals: order.iter().map(|&o| self.normals[o]).collect(),
            neighbors: order.iter().map(|&o| self.neighbors[o].map(|j| inverse[j])).collect(),
            original_faces: self.original_faces,
        })
    }
}

/// Per-face geometry of a triangle in f64: (center, corners, unit normal),
/// or `None` when the face has (near) zero area.
pub(crate) fn face_geometry(p: [[f64; 3]; 3]) -> Option<([f64; 3], [f64; 9], [f64; 3])> {
    let n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
    let len = norm(n);
    if len < MIN_DOUBLE_AREA || !len.is_finite() {
        return None;
    }
    let center: [f64; 3] = std::array::from_fn(|d| (p[0][d] + p[1][d] + p[2][d]) / 3.0);
    let corners: [f64; 9] = std::array::from_fn(|k| p[k / 3][k % 3] - center[k % 3]);
    Some((center, corners, n.map(|c| c / len)))
}

/// Builds the face set of a (normalized) mesh. Zero-area faces are dropped
/// before adjacency; the number dropped is returned alongside.
pub fn build_face_set_counted(mesh: &TriMesh) -> Result<(FaceSet, usize), PreprocessError> {
    let mut centers = Vec::with_capacity(mesh.face_count());
    let mut corners = Vec::with_capacity(mesh.face_count());
    let mut normals = Vec::with_capacity(mesh.face_count());
    let mut kept = Vec::with_capacity(mesh.face_count());
    for f in 0..mesh.face_count() {
        if let Some((c, k, n)) = face_geometry(mesh.face_positions(f)) {
            centers.push(c.map(|v| v as f32));
            corners.push(k.map(|v| v as f32));
            normals.push(n.map(|v| v as f32));
            kept.push(mesh.faces()[f]);
        }
    }
    let dropped = mesh.face_count() - kept.len();
    if kept.is_empty() {
        return Err(PreprocessError::AllFacesDegenerate);
    }
    let neighbors = shared_edge_neighbors(&kept);
    let n = kept.len();
    Ok((FaceSet::from_parts(centers, corners, normals, neighbors, n)?, dropped))
}

pub fn build_face_set(mesh: &TriMesh) -> Result<FaceSet, PreprocessError> {
    let (fs, dropped) = build_face_set_counted(mesh)?;
    if dropped > 0 {
        log::warn!("dropped {dropped} zero-area faces");
    }
    Ok(fs)
}

/// Neighbour slots from shared edges. Slot `j` of face `i` corresponds to
/// its edge `(v_j, v_{j+1})`. When more than two faces share an edge, the
/// first two in face order are paired and the others self-fill.
pub fn shared_edge_neighbors(faces: &[[usize; 3]]) -> Vec<[usize; 3]> {
    let mut edges: HashMap<(usize, usize), [usize; 2]> = HashMap::with_capacity(faces.len() * 2);
    let mut counts: HashMap<(usize, usize), u8> = HashMap::with_capacity(faces.len() * 2);
    for (f, tri) in faces.iter().enumerate() {
        for j in 0..3 {
            let key = edge_key(tri[j], tri[(j + 1) % 3]);
            let c = counts.entry(key).or_insert(0);
            if *c < 2 {
                edges.entry(key).or_insert([usize::MAX; 2])[*c as usize] = f;
            }
            *c = c.saturating_add(1);
        }
    }
    faces
        .iter()
        .enumerate()
        .map(|(f, tri)| {
            std::array::from_fn(|j| {
                let pair = edges[&edge_key(tri[j], tri[(j + 1) % 3])];
                match pair {
                    [a, b] if a == f && b != usize::MAX => b,
                    [a, b] if b == f => a,
                    _ => f,
                }
            })
        })
        .collect()
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}
