//! Mesh file ingestion and the binary dataset cache.

mod cache;
mod manifest;
mod obj;
mod off;

use std::path::Path;

use thiserror::Error;

pub use cache::{read_cache, write_cache, Cache, CacheError, DatasetRecord, CACHE_MAGIC, CACHE_VERSION};
pub use manifest::{Manifest, ManifestEntry, ManifestError};
pub use obj::{parse_obj, parse_obj_counted};
pub use off::{format_off, parse_off, parse_off_counted};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("input is not valid UTF-8 text")]
    NotText,
    #[error("mesh has {vertices} vertices and {faces} faces (need at least 3 and 1)")]
    TooSmall { vertices: usize, faces: usize },
    #[error("face {face} references vertex {index} but the mesh has {vertices} vertices")]
    IndexOutOfRange { face: usize, index: usize, vertices: usize },
    #[error("face {0} repeats a vertex index")]
    DegenerateFace(usize),
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
}

impl MeshError {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        MeshError::Parse { line, msg: msg.into() }
    }
}

/// Indexed triangle mesh.
///
/// Invariants: at least 3 vertices and 1 face, every index in range, and
/// no face repeats a vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if vertices.len() < 3 || faces.is_empty() {
            return Err(MeshError::TooSmall {
                vertices: vertices.len(),
                faces: faces.len(),
            });
        }
        if let Some(i) = vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        for (f, face) in faces.iter().enumerate() {
            if let Some(&index) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(MeshError::IndexOutOfRange {
                    face: f,
                    index,
                    vertices: vertices.len(),
                });
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(MeshError::DegenerateFace(f));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_positions(&self, f: usize) -> [[f64; 3]; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    /// Sum of triangle areas.
    pub fn area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.face_positions(f);
                0.5 * norm(cross(sub(b, a), sub(c, a)))
            })
            .sum()
    }

    /// Applies `f` to every vertex position; validity is re-checked.
    pub fn map_vertices(&self, f: impl FnMut(&[f64; 3]) -> [f64; 3]) -> Result<Self, MeshError> {
        Self::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }

    /// Keeps the faces for which `keep` is true.
    pub fn retain_faces(&self, mut keep: impl FnMut(usize) -> bool) -> Result<Self, MeshError> {
        let faces = (0..self.faces.len())
            .filter(|&f| keep(f))
            .map(|f| self.faces[f])
            .collect();
        Self::new(self.vertices.clone(), faces)
    }
}

/// Reads an `.off` or `.obj` file, chosen by extension.
pub fn load_mesh(path: &Path) -> Result<TriMesh, LoadError> {
    let bytes = std::fs::read(path).map_err(|e| LoadError::Io(path.display().to_string(), e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let parsed = match ext.as_str() {
        "obj" => parse_obj(&bytes),
        _ => parse_off(&bytes),
    };
    parsed.map_err(|e| LoadError::Mesh(path.display().to_string(), e))
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Mesh(String, #[source] MeshError),
}

/// Fan-triangulates a polygon from its first vertex, dropping triangles
/// that repeat an index. Returns the number dropped.
pub(crate) fn fan_triangulate(poly: &[usize], out: &mut Vec<[usize; 3]>) -> usize {
    let mut dropped = 0;
    for k in 1..poly.len() - 1 {
        let tri = [poly[0], poly[k], poly[k + 1]];
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            dropped += 1;
        } else {
            out.push(tri);
        }
    }
    dropped
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}
