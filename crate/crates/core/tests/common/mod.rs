#![allow(dead_code)]
//! Oracles and fixtures shared by the integration tests.

use meshnet::model::{FaceBatch, MeshNet, ModelConfig, Pass};
use meshnet::preprocess::{build_face_set, fill_to_budget, normalize, FaceSet};
use meshnet::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

pub fn random_face_set(r: &mut ChaCha8Rng, f: usize) -> FaceSet {
    let mut centers = Vec::new();
    let mut corners = Vec::new();
    let mut normals = Vec::new();
    let mut neighbors = Vec::new();
    for i in 0..f {
        centers.push(std::array::from_fn(|_| r.random_range(-1.0f32..1.0)));
        let a: [f32; 3] = std::array::from_fn(|_| r.random_range(-0.2f32..0.2));
        let b: [f32; 3] = std::array::from_fn(|_| r.random_range(-0.2f32..0.2));
        corners.push(std::array::from_fn(|k| match k / 3 {
            0 => a[k % 3],
            1 => b[k % 3],
            _ => -a[k % 3] - b[k % 3],
        }));
        let n = unit(std::array::from_fn(|_| r.random_range(-1.0..1.0)));
        normals.push(n.map(|v| v as f32));
        neighbors.push(std::array::from_fn(|_| {
            if r.random_bool(0.2) {
                i
            } else {
                r.random_range(0..f)
            }
        }));
    }
    FaceSet::from_parts(centers, corners, normals, neighbors, f).unwrap()
}

pub fn shape_set(m: &meshnet::mesh_io::TriMesh, budget: usize, seed: u64) -> FaceSet {
    let fs = build_face_set(&normalize(m).unwrap()).unwrap();
    fill_to_budget(&fs, budget, &mut rng(seed)).unwrap()
}

/// Small-width config with batch norm on, so running statistics matter.
pub fn small_config(classes: usize) -> ModelConfig {
    let mut c = ModelConfig::tiny(classes);
    c.batch_norm = true;
    c.dropout_p = 0.5;
    c
}

/// One training forward to move the running statistics away from (0, 1).
pub fn warm_bn(net: &mut MeshNet<f32>, batch: &FaceBatch) {
    let mut r = rng(99);
    let mut p = Pass::train(&mut r);
    net.forward(&mut p, batch).unwrap();
    let updates = p.take_bn_updates();
    assert!(!updates.is_empty());
    net.apply_bn_updates(&updates);
}

pub fn eval_logits(net: &MeshNet<f32>, batch: &FaceBatch) -> (Vec<f32>, Vec<f32>) {
    let mut p = Pass::eval();
    let out = net.forward(&mut p, batch).unwrap();
    (
        p.graph.value(out.logits).data().to_vec(),
        p.graph.value(out.global).data().to_vec(),
    )
}

/// Reference kernel correlation by direct summation.
pub fn naive_kc(normals: &[[f64; 3]], neighbors: &[[usize; 3]], kernels: &[Vec<[f64; 3]>], sigma: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, nb) in neighbors.iter().enumerate() {
        let set = [normals[i], normals[nb[0]], normals[nb[1]], normals[nb[2]]];
        for k in kernels {
            let mut acc = 0.0;
            for n in &set {
                for m in k {
                    let d2: f64 = (0..3).map(|d| (n[d] - m[d]).powi(2)).sum();
                    acc += (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
            out.push(acc / (set.len() * k.len()) as f64);
        }
    }
    out
}

pub fn fkc_config(m: usize, v: usize, sigma: f64) -> ModelConfig {
    let mut c = ModelConfig::tiny(2);
    c.fkc_kernels = m;
    c.fkc_vectors_per_kernel = v;
    c.fkc_sigma = sigma;
    c.fit_block_widths();
    c
}

pub fn run_fkc(net: &MeshNet<f64>, normals: &[[f64; 3]], neighbors: &[[usize; 3]]) -> (Vec<f64>, Vec<f64>) {
    let mut p = Pass::eval();
    let n = p
        .graph
        .input(Tensor::new(vec![normals.len(), 3], normals.iter().flatten().copied().collect()).unwrap());
    let k = net.kernel_vectors(&mut p).unwrap();
    let y = net.face_kernel_correlation(&mut p, n, neighbors, k).unwrap();
    (p.graph.value(y).data().to_vec(), p.graph.value(k).data().to_vec())
}

/// Brute-force AP: the rank of each relevant item is counted directly.
pub fn brute_force_map(emb: &[f32], dim: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    let dist = |a: usize, b: usize| -> f64 {
        (0..dim)
            .map(|k| (emb[a * dim + k] as f64 - emb[b * dim + k] as f64).powi(2))
            .sum()
    };
    let mut total = 0.0;
    let mut queries = 0;
    for q in 0..n {
        let before = |j: usize, k: usize| dist(q, k) < dist(q, j) || (dist(q, k) == dist(q, j) && k < j);
        let mut ranked: Vec<(usize, usize)> = (0..n)
            .filter(|&j| j != q && labels[j] == labels[q])
            .map(|j| (1 + (0..n).filter(|&k| k != q && k != j && before(j, k)).count(), j))
            .collect();
        if ranked.is_empty() {
            continue;
        }
        ranked.sort();
        let mut ap = 0.0;
        for (i, &(rank, _)) in ranked.iter().enumerate() {
            ap += (i + 1) as f64 / rank as f64;
        }
        total += ap / ranked.len() as f64;
        queries += 1;
    }
    total / queries as f64
}

/// Reference shared-edge neighbours: for each edge, scan every face. The
/// first two faces (in face order) holding an edge are paired; any face
/// outside that pair, or alone on the edge, fills the slot with itself.
pub fn brute_force_neighbors(faces: &[[usize; 3]]) -> Vec<[usize; 3]> {
    faces
        .iter()
        .enumerate()
        .map(|(i, tri)| {
            std::array::from_fn(|j| {
                let (u, v) = (tri[j], tri[(j + 1) % 3]);
                let holders: Vec<usize> = (0..faces.len())
                    .filter(|&k| faces[k].contains(&u) && faces[k].contains(&v))
                    .take(2)
                    .collect();
                match holders[..] {
                    [a, b] if a == i => b,
                    [a, b] if b == i => a,
                    _ => i,
                }
            })
        })
        .collect()
}

/// Random triangle soup over a small vertex pool so edges are often shared.
pub fn random_soup(r: &mut ChaCha8Rng, max_faces: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let nv = r.random_range(3..=(max_faces / 2).max(4));
    let verts = (0..nv)
        .map(|_| std::array::from_fn(|_| r.random_range(-1.0..1.0)))
        .collect();
    let nf = r.random_range(1..=max_faces);
    let faces = (0..nf)
        .map(|_| loop {
            let t: [usize; 3] = std::array::from_fn(|_| r.random_range(0..nv));
            if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                break t;
            }
        })
        .collect();
    (verts, faces)
}
