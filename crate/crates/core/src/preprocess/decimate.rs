//! Shortest-edge collapse. Edges are collapsed to their midpoint in order of
//! increasing length; equal lengths are ordered by the quadric error of the
//! midpoint.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use super::PreprocessError;
use crate::mesh_io::{cross, norm, sub, TriMesh};

type Quadric = [f64; 10];

fn plane_quadric(p: [[f64; 3]; 3]) -> Option<Quadric> {
    let n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
    let len = norm(n);
    if !(len > 0.0) {
        return None;
    }
    let [a, b, c] = n.map(|x| x / len);
    let d = -(a * p[0][0] + b * p[0][1] + c * p[0][2]);
    Some([a * a, a * b, a * c, a * d, b * b, b * c, b * d, c * c, c * d, d * d])
}

fn quadric_error(q: &Quadric, p: [f64; 3]) -> f64 {
    let [x, y, z] = p;
    q[0] * x * x
        + 2.0 * q[1] * x * y
        + 2.0 * q[2] * x * z
        + 2.0 * q[3] * x
        + q[4] * y * y
        + 2.0 * q[5] * y * z
        + 2.0 * q[6] * y
        + q[7] * z * z
        + 2.0 * q[8] * z
        + q[9]
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    len2: f64,
    err: f64,
    u: usize,
    v: usize,
    stamp_u: u32,
    stamp_v: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len2
            .total_cmp(&other.len2)
            .then(self.err.total_cmp(&other.err))
            .then(self.u.cmp(&other.u))
            .then(self.v.cmp(&other.v))
    }
}

struct Collapser {
    pos: Vec<[f64; 3]>,
    quadrics: Vec<Quadric>,
    stamps: Vec<u32>,
    vertex_alive: Vec<bool>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<Vec<usize>>,
    heap: BinaryHeap<Reverse<Candidate>>,
    live_faces: usize,
}

impl Collapser {
    fn new(mesh: &TriMesh) -> Self {
        let nv = mesh.vertices().len();
        let mut quadrics = vec![[0.0; 10]; nv];
        let mut vertex_faces = vec![Vec::new(); nv];
        for (f, tri) in mesh.faces().iter().enumerate() {
            if let Some(q) = plane_quadric(mesh.face_positions(f)) {
                for &i in tri {
                    for k in 0..10 {
                        quadrics[i][k] += q[k];
                    }
                }
            }
            for &i in tri {
                vertex_faces[i].push(f);
            }
        }
        let mut c = Self {
            pos: mesh.vertices().to_vec(),
            quadrics,
            stamps: vec![0; nv],
            vertex_alive: vec![true; nv],
            faces: mesh.faces().to_vec(),
            face_alive: vec![true; mesh.face_count()],
            vertex_faces,
            heap: BinaryHeap::new(),
            live_faces: mesh.face_count(),
        };
        let mut seen = HashSet::new();
        for tri in mesh.faces() {
            for j in 0..3 {
                let (a, b) = (tri[j].min(tri[(j + 1) % 3]), tri[j].max(tri[(j + 1) % 3]));
                if seen.insert((a, b)) {
                    c.push_edge(a, b);
                }
            }
        }
        c
    }

    fn push_edge(&mut self, u: usize, v: usize) {
        let (a, b) = (self.pos[u], self.pos[v]);
        let d = sub(a, b);
        let mid = std::array::from_fn(|k| 0.5 * (a[k] + b[k]));
        let mut q = self.quadrics[u];
        for k in 0..10 {
            q[k] += self.quadrics[v][k];
        }
        self.heap.push(Reverse(Candidate {
            len2: d[0] * d[0] + d[1] * d[1] + d[2] * d[2],
            err: quadric_error(&q, mid),
            u,
            v,
            stamp_u: self.stamps[u],
            stamp_v: self.stamps[v],
        }));
    }

    fn share_live_face(&self, u: usize, v: usize) -> bool {
        self.vertex_faces[u]
            .iter()
            .any(|&f| self.face_alive[f] && self.faces[f].contains(&v))
    }

    fn collapse(&mut self, u: usize, v: usize) {
        let (a, b) = (self.pos[u], self.pos[v]);
        self.pos[u] = std::array::from_fn(|k| 0.5 * (a[k] + b[k]));
        for k in 0..10 {
            self.quadrics[u][k] += self.quadrics[v][k];
        }
        let moved = std::mem::take(&mut self.vertex_faces[v]);
        for f in moved {
            if !self.face_alive[f] {
                continue;
            }
            if self.faces[f].contains(&u) {
                self.face_alive[f] = false;
                self.live_faces -= 1;
            } else {
                for i in self.faces[f].iter_mut() {
                    if *i == v {
                        *i = u;
                    }
                }
                self.vertex_faces[u].push(f);
            }
        }
        let alive = &self.face_alive;
        self.vertex_faces[u].retain(|&f| alive[f]);
        self.vertex_alive[v] = false;
        self.stamps[u] = self.stamps[u].wrapping_add(1);

        let mut ring: Vec<usize> = self.vertex_faces[u]
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&w| w != u)
            .collect();
        ring.sort_unstable();
        ring.dedup();
        for w in ring {
            self.push_edge(u.min(w), u.max(w));
        }
    }

    fn run(&mut self, target: usize) -> Result<(), PreprocessError> {
        while self.live_faces > target {
            let Some(Reverse(c)) = self.heap.pop() else {
                return Err(PreprocessError::DecimationStalled {
                    achieved: self.live_faces,
                    target,
                });
            };
            let valid = self.vertex_alive[c.u]
                && self.vertex_alive[c.v]
                && self.stamps[c.u] == c.stamp_u
                && self.stamps[c.v] == c.stamp_v
                && self.share_live_face(c.u, c.v);
            if valid {
                self.collapse(c.u, c.v);
            }
        }
        Ok(())
    }

    fn into_mesh(self) -> Result<TriMesh, PreprocessError> {
        let mut remap = vec![usize::MAX; self.pos.len()];
        let mut vertices = Vec::new();
        let mut faces = Vec::with_capacity(self.live_faces);
        for (f, tri) in self.faces.iter().enumerate() {
            if !self.face_alive[f] {
                continue;
            }
            faces.push(tri.map(|i| {
                if remap[i] == usize::MAX {
                    remap[i] = vertices.len();
                    vertices.push(self.pos[i]);
                }
                remap[i]
            }));
        }
        Ok(TriMesh::new(vertices, faces)?)
    }
}

/// Reduces `mesh` to at most `target_faces` faces. Meshes already within
/// budget are returned unchanged.
pub fn decimate(mesh: &TriMesh, target_faces: usize) -> Result<TriMesh, PreprocessError> {
    if target_faces < 4 {
        return Err(PreprocessError::TargetTooSmall(target_faces));
    }
    if mesh.face_count() <= target_faces {
        return Ok(mesh.clone());
    }
    let mut c = Collapser::new(mesh);
    c.run(target_faces)?;
    let achieved = c.live_faces;
    c.into_mesh().map_err(|e| match e {
        PreprocessError::Mesh(_) => PreprocessError::DecimationStalled {
            achieved,
            target: target_faces,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn within_budget_is_unchanged() {
        let cube = shapes::cube();
        assert_eq!(decimate(&cube, 1024).unwrap(), cube);
        let tet = shapes::tetrahedron();
        assert_eq!(decimate(&tet, 4).unwrap(), tet);
    }

    #[test]
    fn rejects_tiny_targets() {
        assert_eq!(decimate(&shapes::cube(), 3), Err(PreprocessError::TargetTooSmall(3)));
    }

    #[test]
    fn icosphere_area_is_preserved() {
        let sphere = shapes::icosphere(4);
        assert_eq!(sphere.face_count(), 5120);
        let out = decimate(&sphere, 1024).unwrap();
        assert!(out.face_count() <= 1024, "{}", out.face_count());
        assert!(out.face_count() > 900, "{}", out.face_count());
        let (a0, a1) = (sphere.area(), out.area());
        assert!(((a1 - a0) / a0).abs() < 0.10, "area {a0} -> {a1}");
    }

    #[test]
    fn quadric_of_plane_vanishes_on_plane() {
        let q = plane_quadric([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]).unwrap();
        assert!(quadric_error(&q, [3.0, -2.0, 1.0]).abs() < 1e-12);
        assert!((quadric_error(&q, [0.0, 0.0, 3.0]) - 4.0).abs() < 1e-12);
    }
}
