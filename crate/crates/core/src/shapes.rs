//! Procedural meshes used by tests, the overfit harness and the demo.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::mesh_io::{cross, sub, TriMesh};

fn build(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> TriMesh {
    TriMesh::new(vertices, faces).expect("procedural mesh is valid")
}

/// Flips faces of a star-shaped mesh (about the origin) so normals point outward.
fn orient_outward(vertices: &[[f64; 3]], faces: &mut [[usize; 3]]) {
    for f in faces.iter_mut() {
        let p = f.map(|i| vertices[i]);
        let n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
        let c: [f64; 3] = std::array::from_fn(|d| p[0][d] + p[1][d] + p[2][d]);
        if n[0] * c[0] + n[1] * c[1] + n[2] * c[2] < 0.0 {
            f.swap(1, 2);
        }
    }
}

pub fn tetrahedron() -> TriMesh {
    build(
        vec![[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]],
        vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
    )
}

/// Cube with corners at ±1, two triangles per side.
pub fn cube() -> TriMesh {
    subdivided_box([1.0, 1.0, 1.0], 1)
}

/// Axis-aligned box with half-extents `half`, each side split into an
/// `n`×`n` grid (12n² triangles).
pub fn subdivided_box(half: [f64; 3], n: usize) -> TriMesh {
    assert!(n >= 1);
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut vid = |g: [usize; 3]| {
        *index.entry(g).or_insert_with(|| {
            vertices.push(std::array::from_fn(|d| half[d] * (2.0 * g[d] as f64 / n as f64 - 1.0)));
            vertices.len() - 1
        })
    };
    let mut faces = Vec::with_capacity(12 * n * n);
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, n] {
            for a in 0..n {
                for b in 0..n {
                    let g = |da: usize, db: usize| {
                        let mut p = [0; 3];
                        p[axis] = side;
                        p[u] = a + da;
                        p[v] = b + db;
                        p
                    };
                    let q = [vid(g(0, 0)), vid(g(1, 0)), vid(g(1, 1)), vid(g(0, 1))];
                    faces.push([q[0], q[1], q[2]]);
                    faces.push([q[0], q[2], q[3]]);
                }
            }
        }
    }
    orient_outward(&vertices, &mut faces);
    build(vertices, faces)
}

/// Latitude/longitude sphere of radius 1 with `2·segments·(rings−1)` faces.
pub fn uv_sphere(segments: usize, rings: usize) -> TriMesh {
    assert!(segments >= 3 && rings >= 2);
    let mut vertices = vec![[0.0, 0.0, 1.0]];
    for r in 1..rings {
        let t = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let p = 2.0 * PI * s as f64 / segments as f64;
            vertices.push([t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]);
        }
    }
    vertices.push([0.0, 0.0, -1.0]);
    let south = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
        for r in 1..rings - 1 {
            faces.push([ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)]);
            faces.push([ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)]);
        }
        faces.push([ring(rings - 1, s), south, ring(rings - 1, s + 1)]);
    }
    orient_outward(&vertices, &mut faces);
    build(vertices, faces)
}

/// Unit icosphere with `20·4^subdivisions` faces.
pub fn icosphere(subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<[f64; 3]> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&v| unit(v))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vs: &mut Vec<[f64; 3]>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vs.push(unit(std::array::from_fn(|d| vs[a][d] + vs[b][d])));
                vs.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    orient_outward(&vertices, &mut faces);
    build(vertices, faces)
}

/// Torus around the z axis with `2·major·minor` faces.
pub fn torus(major: usize, minor: usize, big_r: f64, small_r: f64) -> TriMesh {
    assert!(major >= 3 && minor >= 3);
    let mut vertices = Vec::with_capacity(major * minor);
    for i in 0..major {
        let u = 2.0 * PI * i as f64 / major as f64;
        for j in 0..minor {
            let v = 2.0 * PI * j as f64 / minor as f64;
            let w = big_r + small_r * v.cos();
            vertices.push([w * u.cos(), w * u.sin(), small_r * v.sin()]);
        }
    }
    let id = |i: usize, j: usize| (i % major) * minor + j % minor;
    let mut faces = Vec::with_capacity(2 * major * minor);
    for i in 0..major {
        for j in 0..minor {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    build(vertices, faces)
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}
