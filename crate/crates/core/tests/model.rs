mod common;

use common::*;
use meshnet::model::{param_count, param_report, Ablation, Aggregation, FaceBatch, MeshNet, ModelConfig, Pass};
use meshnet::preprocess::{build_face_set, fill_to_budget, normalize, FaceSet};
use meshnet::shapes;
use meshnet::tensor::{Checkpoint, ParamKind, Tensor};
use rand::Rng;

#[test]
fn param_count_matches_constructed_store() {
    for row in Ablation::ALL {
        for mode in Aggregation::ALL {
            let c = ModelConfig::standard(40).with_ablation(row).with_aggregation(mode);
            let net = MeshNet::<f32>::new(c.clone(), &mut rng(0)).unwrap();
            assert_eq!(param_count(&c), net.store.trainable_count(), "{row:?} {mode:?}");
            for m in param_report(&c, 1024).modules {
                assert_eq!(
                    m.params,
                    net.store.trainable_count_with_prefix(&m.name),
                    "{row:?} {mode:?} {}",
                    m.name
                );
            }
        }
    }
    let total = param_count(&ModelConfig::standard(40));
    assert!((2_000_000..=6_000_000).contains(&total), "{total}");
}

#[test]
fn initialization_follows_the_stated_distributions() {
    let net = MeshNet::<f64>::new(ModelConfig::standard(40), &mut rng(1)).unwrap();
    for (_, p) in net.store.iter() {
        if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
            assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name);
        }
        if p.name.ends_with(".weight") {
            let bound = (6.0 / p.value.shape()[0] as f64).sqrt();
            assert!(p.value.data().iter().all(|v| v.abs() <= bound), "{}", p.name);
        }
    }
    let angles = net.store.value(net.fkc_angles().unwrap()).data();
    for tp in angles.chunks(2) {
        assert!((0.0..=std::f64::consts::PI).contains(&tp[0]));
        assert!((0.0..2.0 * std::f64::consts::PI).contains(&tp[1]));
    }
}

#[test]
fn full_config_output_shapes() {
    let net = MeshNet::<f32>::new(ModelConfig::standard(40), &mut rng(2)).unwrap();
    let a = shape_set(&shapes::icosphere(1), 96, 1);
    let b = shape_set(&shapes::subdivided_box([1.0, 0.5, 0.3], 2), 96, 2);
    let batch = FaceBatch::new(&[&a, &b]).unwrap();
    let mut p = Pass::eval();
    let out = net.forward(&mut p, &batch).unwrap();
    assert_eq!(p.graph.shape(out.logits), &[2, 40]);
    assert_eq!(p.graph.shape(out.global), &[2, 1024]);
    assert_eq!(p.graph.shape(out.frc.unwrap()), &[192, 64]);
    assert_eq!(p.graph.shape(out.fkc.unwrap()), &[192, 64]);
    assert_eq!(net.config().mesh_conv[0].in2, 131);
}

#[test]
fn every_ablation_and_aggregation_runs_forward() {
    let a = random_face_set(&mut rng(3), 20);
    let batch = FaceBatch::new(&[&a, &a]).unwrap();
    let rows: Vec<ModelConfig> = Ablation::ALL
        .iter()
        .map(|&r| ModelConfig::standard(7).with_ablation(r))
        .chain(
            Aggregation::ALL
                .iter()
                .map(|&m| ModelConfig::standard(7).with_aggregation(m)),
        )
        .collect();
    for c in rows {
        let net = MeshNet::<f32>::new(c.clone(), &mut rng(4)).unwrap();
        let mut r = rng(5);
        let mut p = Pass::train(&mut r);
        let out = net.forward(&mut p, &batch).unwrap();
        assert_eq!(p.graph.shape(out.logits), &[2, 7]);
        assert!(p.graph.value(out.logits).is_finite());
    }
}

#[test]
fn face_permutation_invariance_is_exact() {
    for mode in Aggregation::ALL {
        let mut net = MeshNet::<f32>::new(small_config(3).with_aggregation(mode), &mut rng(6)).unwrap();
        let a = shape_set(&shapes::icosphere(1), 90, 3);
        let b = shape_set(&shapes::torus(6, 5, 1.0, 0.4), 90, 4);
        let batch = FaceBatch::new(&[&a, &b]).unwrap();
        warm_bn(&mut net, &batch);
        let (logits, global) = eval_logits(&net, &batch);

        let mut r = rng(7);
        let mut order: Vec<usize> = (0..90).collect();
        for i in (1..90).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        let (pa, pb) = (a.permuted(&order).unwrap(), b.permuted(&order).unwrap());
        let permuted = FaceBatch::new(&[&pa, &pb]).unwrap();
        let (logits2, global2) = eval_logits(&net, &permuted);
        assert_eq!(logits, logits2, "{mode:?}");
        assert_eq!(global, global2, "{mode:?}");
    }
}

#[test]
fn frc_is_exactly_invariant_to_cyclic_corner_order() {
    let net = MeshNet::<f32>::new(ModelConfig::standard(4), &mut rng(8)).unwrap();
    let fs = random_face_set(&mut rng(9), 24);
    let corners: Vec<f32> = fs.corners().iter().flatten().copied().collect();
    let rotated: Vec<f32> = fs
        .corners()
        .iter()
        .flat_map(|k| [k[3], k[4], k[5], k[6], k[7], k[8], k[0], k[1], k[2]])
        .collect();
    let run = |data: Vec<f32>| {
        let mut p = Pass::eval();
        let x = p.graph.input(Tensor::new(vec![24, 9], data).unwrap());
        let y = net.face_rotate_conv(&mut p, x).unwrap();
        p.graph.value(y).data().to_vec()
    };
    assert_eq!(run(corners), run(rotated));
}

#[test]
fn structural_descriptors_ignore_translation_but_spatial_does_not() {
    let net = MeshNet::<f32>::new(ModelConfig::standard(4), &mut rng(10)).unwrap();
    let mesh = shapes::torus(8, 6, 0.7, 0.25);
    let moved = mesh.map_vertices(|v| [v[0] + 0.3, v[1] - 0.2, v[2] + 0.1]).unwrap();
    let (a, b) = (build_face_set(&mesh).unwrap(), build_face_set(&moved).unwrap());
    let run = |fs: &FaceSet| {
        let batch = FaceBatch::new(&[fs]).unwrap();
        let mut p = Pass::eval();
        let out = net.forward(&mut p, &batch).unwrap();
        let c = p
            .graph
            .input(Tensor::new(vec![fs.len(), 3], batch.centers.clone()).unwrap());
        let s = net.spatial_descriptor(&mut p, c).unwrap();
        (
            p.graph.value(out.frc.unwrap()).data().to_vec(),
            p.graph.value(out.fkc.unwrap()).data().to_vec(),
            p.graph.value(s).data().to_vec(),
        )
    };
    let (frc_a, fkc_a, sp_a) = run(&a);
    let (frc_b, fkc_b, sp_b) = run(&b);
    let max_diff = |x: &[f32], y: &[f32]| x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(max_diff(&frc_a, &frc_b) <= 1e-6, "frc {}", max_diff(&frc_a, &frc_b));
    assert!(max_diff(&fkc_a, &fkc_b) <= 1e-6, "fkc {}", max_diff(&fkc_a, &fkc_b));
    assert!(max_diff(&sp_a, &sp_b) > 1e-3);
}

#[test]
fn duplicated_faces_leave_the_global_feature_unchanged() {
    let mut net = MeshNet::<f32>::new(small_config(3), &mut rng(11)).unwrap();
    let fs = build_face_set(&normalize(&shapes::icosphere(1)).unwrap()).unwrap();
    let batch = FaceBatch::new(&[&fs]).unwrap();
    warm_bn(&mut net, &batch);
    let (_, g0) = eval_logits(&net, &batch);
    for seed in 0..3 {
        let filled = fill_to_budget(&fs, 200, &mut rng(seed)).unwrap();
        let (_, g1) = eval_logits(&net, &FaceBatch::new(&[&filled]).unwrap());
        assert_eq!(g0, g1);
    }
}

#[test]
fn fkc_matches_direct_summation() {
    let mut r = rng(12);
    for _ in 0..100 {
        let (f, m, v) = (r.random_range(1..=32), r.random_range(1..=8), r.random_range(1..=4));
        let sigma = r.random_range(0.1..1.0);
        let net = MeshNet::<f64>::new(fkc_config(m, v, sigma), &mut r).unwrap();
        let normals: Vec<[f64; 3]> = (0..f)
            .map(|_| unit(std::array::from_fn(|_| r.random_range(-1.0..1.0))))
            .collect();
        let neighbors: Vec<[usize; 3]> = (0..f).map(|_| std::array::from_fn(|_| r.random_range(0..f))).collect();
        let (got, kv) = run_fkc(&net, &normals, &neighbors);
        let angles = net.store.value(net.fkc_angles().unwrap()).data();
        let kernels: Vec<Vec<[f64; 3]>> = angles
            .chunks(2 * v)
            .map(|k| {
                k.chunks(2)
                    .map(|a| [a[0].sin() * a[1].cos(), a[0].sin() * a[1].sin(), a[0].cos()])
                    .collect()
            })
            .collect();
        for (a, b) in kv.chunks(3).zip(kernels.iter().flatten()) {
            assert!((0..3).all(|d| (a[d] - b[d]).abs() < 1e-12));
            assert!(((a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt() - 1.0).abs() < 1e-6);
        }
        let want = naive_kc(&normals, &neighbors, &kernels, sigma);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6, "{g} vs {w}");
            assert!(*g > 0.0 && *g <= 1.0);
        }
    }
}

#[test]
fn fkc_hand_cases() {
    let mut net = MeshNet::<f64>::new(fkc_config(1, 1, 0.2), &mut rng(13)).unwrap();
    let id = net.fkc_angles().unwrap();
    net.store.get_mut(id).value = Tensor::new(vec![1, 1, 2], vec![std::f64::consts::FRAC_PI_2, 0.0]).unwrap();
    let (kc, kv) = run_fkc(&net, &[[0.0, 0.0, 1.0]], &[[0, 0, 0]]);
    assert!((kv[0] - 1.0).abs() < 1e-15 && kv[1].abs() < 1e-15 && kv[2].abs() < 1e-15);
    let want = (-25.0f64).exp();
    assert!(((kc[0] - want) / want).abs() < 1e-12, "{} vs {want}", kc[0]);

    // normals equal to the kernel vector give exp(0) = 1
    let (kc, _) = run_fkc(&net, &[[1.0, 0.0, 0.0]], &[[0, 0, 0]]);
    assert_eq!(kc[0], 1.0);

    // θ = 0 is the pole whatever φ is
    net.store.get_mut(id).value = Tensor::new(vec![1, 1, 2], vec![0.0, 1.234]).unwrap();
    let (_, kv) = run_fkc(&net, &[[1.0, 0.0, 0.0]], &[[0, 0, 0]]);
    assert_eq!(kv, vec![0.0, 0.0, 1.0]);
}

#[test]
fn fkc_is_monotone_in_sigma() {
    let normals = [unit([0.3, -0.2, 0.9]), unit([0.1, 0.8, -0.3])];
    let neighbors = [[1, 1, 0], [0, 0, 1]];
    let mut last: Option<Vec<f64>> = None;
    for sigma in [1.0, 0.6, 0.3, 0.1] {
        let net = MeshNet::<f64>::new(fkc_config(3, 2, sigma), &mut rng(14)).unwrap();
        let (kc, _) = run_fkc(&net, &normals, &neighbors);
        if let Some(prev) = &last {
            assert!(kc.iter().zip(prev).all(|(a, b)| a <= b));
        }
        last = Some(kc);
    }
}

fn mesh_conv_once(
    net: &MeshNet<f64>,
    spatial: &[f64],
    structural: &[f64],
    neighbors: &[[usize; 3]],
) -> (Vec<f64>, Vec<f64>) {
    let c = net.config().mesh_conv[0];
    let n = neighbors.len();
    let mut p = Pass::eval();
    let s = p.graph.input(Tensor::new(vec![n, c.in1], spatial.to_vec()).unwrap());
    let t = p.graph.input(Tensor::new(vec![n, c.in2], structural.to_vec()).unwrap());
    let (a, b) = net.mesh_conv(&mut p, 0, Some(s), Some(t), neighbors).unwrap();
    (
        p.graph.value(a).data().to_vec(),
        p.graph.value(b.unwrap()).data().to_vec(),
    )
}

#[test]
fn mesh_conv_aggregation_contracts() {
    let mut r = rng(15);
    for mode in Aggregation::ALL {
        let net = MeshNet::<f64>::new(ModelConfig::tiny(2).with_aggregation(mode), &mut r).unwrap();
        let c = net.config().mesh_conv[0];
        let n = 6;
        let spatial: Vec<f64> = (0..n * c.in1).map(|_| r.random_range(-1.0..1.0)).collect();
        let structural: Vec<f64> = (0..n * c.in2).map(|_| r.random_range(-1.0..1.0)).collect();
        let neighbors: Vec<[usize; 3]> = (0..n).map(|_| std::array::from_fn(|_| r.random_range(0..n))).collect();
        let base = mesh_conv_once(&net, &spatial, &structural, &neighbors);

        // neighbour slot order does not matter
        let shuffled: Vec<[usize; 3]> = neighbors.iter().map(|nb| [nb[2], nb[0], nb[1]]).collect();
        let other = mesh_conv_once(&net, &spatial, &structural, &shuffled);
        assert_eq!(base, other, "{mode:?}");

        // identical features everywhere: aggregation reduces to the face's own feature
        let row: Vec<f64> = structural[..c.in2].to_vec();
        let same: Vec<f64> = row.iter().cycle().take(n * c.in2).copied().collect();
        let own: Vec<[usize; 3]> = (0..n).map(|i| [i, i, i]).collect();
        let (_, with_nbrs) = mesh_conv_once(&net, &spatial, &same, &neighbors);
        let (_, isolated) = mesh_conv_once(&net, &spatial, &same, &own);
        for (a, b) in with_nbrs.iter().zip(&isolated) {
            assert!((a - b).abs() < 1e-12, "{mode:?}");
        }
    }
}

#[test]
fn zero_weights_give_zero_spatial_features_and_uniform_logits() {
    let mut net = MeshNet::<f32>::new(ModelConfig::standard(5), &mut rng(16)).unwrap();
    for p in net.store.iter_mut() {
        if p.kind == ParamKind::Trainable && (p.name.starts_with("spatial") || p.name.starts_with("classifier.2")) {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let fs = random_face_set(&mut rng(17), 10);
    let batch = FaceBatch::new(&[&fs]).unwrap();
    let mut p = Pass::eval();
    let c = p.graph.input(Tensor::new(vec![10, 3], batch.centers.clone()).unwrap());
    let s = net.spatial_descriptor(&mut p, c).unwrap();
    // beta = 0, so BN of a zero pre-activation is zero
    assert!(p.graph.value(s).data().iter().all(|&v| v == 0.0));
    let out = net.forward(&mut p, &batch).unwrap();
    let logits = p.graph.value(out.logits).data();
    assert!(logits.iter().all(|&v| v == logits[0]));
}

#[test]
fn eval_is_deterministic_and_training_is_seeded() {
    let net = MeshNet::<f32>::new(small_config(3), &mut rng(18)).unwrap();
    let (a, b) = (random_face_set(&mut rng(19), 16), random_face_set(&mut rng(22), 16));
    let batch = FaceBatch::new(&[&a, &b]).unwrap();
    assert_eq!(eval_logits(&net, &batch), eval_logits(&net, &batch));
    let train = |seed| {
        let mut r = rng(seed);
        let mut p = Pass::train(&mut r);
        let out = net.forward(&mut p, &batch).unwrap();
        p.graph.value(out.logits).data().to_vec()
    };
    assert_eq!(train(1), train(1));
    assert_ne!(train(1), train(2));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut net = MeshNet::<f32>::new(small_config(3), &mut rng(20)).unwrap();
    let fs = random_face_set(&mut rng(21), 12);
    let batch = FaceBatch::new(&[&fs]).unwrap();
    warm_bn(&mut net, &batch);
    let sgd = meshnet::tensor::Sgd::new(Default::default(), &net.store);
    let ck = net.to_checkpoint(Some(&sgd), serde_json::json!({"epoch": 3}));
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    let restored = MeshNet::<f32>::from_checkpoint(&back).unwrap();
    assert_eq!(restored.config(), net.config());
    for ((_, a), (_, b)) in net.store.iter().zip(restored.store.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
    assert_eq!(eval_logits(&net, &batch), eval_logits(&restored, &batch));
    let mut corrupt = bytes;
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 1;
    assert!(Checkpoint::from_bytes(&corrupt).is_err());
}
