//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness; exits non-zero when any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use meshnet::gradcheck::{self, GradcheckSizes};
use meshnet::mesh_io::{read_cache, write_cache, Cache, DatasetRecord};
use meshnet::model::{Ablation, Aggregation, FaceBatch, MeshNet, ModelConfig, Pass};
use meshnet::preprocess::{build_face_set, fill_to_budget, normalize, shared_edge_neighbors, FaceSet};
use meshnet::shapes;
use meshnet::tensor::{Checkpoint, Sgd, Tensor};
use meshnet::train::harness::{run_overfit, OVERFIT_BUDGET};
use meshnet::train::retrieval_map;
use meshnet_cli::RunConfig;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

const GRADIENT_TOLERANCE: f64 = 1e-4;
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let report = gradcheck::run(0, GradcheckSizes::default(), None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(report.tolerance <= GRADIENT_TOLERANCE, || {
        format!("tolerance {}", report.tolerance)
    })?;
    ensure(report.checks.len() == gradcheck::OPS.len(), || {
        format!("{} of {} ops checked", report.checks.len(), gradcheck::OPS.len())
    })?;
    ensure(report.passed(), || format!("failing: {}", report.failures().join(", ")))?;
    ensure(report.checks.iter().all(|c| c.entries > c.skipped), || {
        "an op had every probe skipped".into()
    })?;
    ensure(elapsed < GRADIENT_BUDGET, || format!("took {elapsed:?}"))?;
    let worst = report.checks.iter().map(|c| c.max_error).fold(0.0, f64::max);
    let fkc = report
        .checks
        .iter()
        .find(|c| c.op == "kernel_vectors")
        .ok_or("no kernel_vectors check")?;
    Ok(format!(
        "{} ops, max rel err {worst:.2e} < {GRADIENT_TOLERANCE:.0e}, theta/phi entries {}, {:.2} s",
        report.checks.len(),
        fkc.entries,
        elapsed.as_secs_f64()
    ))
}

fn kernel_correlation_oracle() -> Outcome {
    let mut r = rng(12);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let (f, m, v) = (r.random_range(1..=32), r.random_range(1..=8), r.random_range(1..=4));
        let sigma = r.random_range(0.1..1.0);
        let net = MeshNet::<f64>::new(fkc_config(m, v, sigma), &mut r).map_err(|e| e.to_string())?;
        let normals: Vec<[f64; 3]> = (0..f)
            .map(|_| unit(std::array::from_fn(|_| r.random_range(-1.0..1.0))))
            .collect();
        let neighbors: Vec<[usize; 3]> = (0..f).map(|_| std::array::from_fn(|_| r.random_range(0..f))).collect();
        let (got, _) = run_fkc(&net, &normals, &neighbors);
        let angles = net.store.value(net.fkc_angles().ok_or("no angles")?).data();
        let kernels: Vec<Vec<[f64; 3]>> = angles
            .chunks(2 * v)
            .map(|k| {
                k.chunks(2)
                    .map(|a| [a[0].sin() * a[1].cos(), a[0].sin() * a[1].sin(), a[0].cos()])
                    .collect()
            })
            .collect();
        let want = naive_kc(&normals, &neighbors, &kernels, sigma);
        ensure(got.len() == want.len(), || {
            format!("case {case}: length {} vs {}", got.len(), want.len())
        })?;
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("max abs diff {worst:.3e}"))?;

    // kernel along +x, normal along +z, sigma 0.2: exp(-2 / 0.08) = exp(-25)
    let mut net = MeshNet::<f64>::new(fkc_config(1, 1, 0.2), &mut rng(13)).map_err(|e| e.to_string())?;
    let id = net.fkc_angles().ok_or("no angles")?;
    net.store.get_mut(id).value =
        Tensor::new(vec![1, 1, 2], vec![std::f64::consts::FRAC_PI_2, 0.0]).map_err(|e| e.to_string())?;
    let (kc, _) = run_fkc(&net, &[[0.0, 0.0, 1.0]], &[[0, 0, 0]]);
    let exact = (-25.0f64).exp();
    let rel = ((kc[0] - exact) / exact).abs();
    ensure(rel <= 1e-12, || format!("exp(-25) case rel err {rel:.3e}"))?;
    Ok(format!(
        "100 instances max abs diff {worst:.2e}; exp(-25) rel err {rel:.1e}"
    ))
}

fn exact_invariances() -> Outcome {
    // face permutation, every aggregation mode, batch norm with warmed statistics
    for mode in Aggregation::ALL {
        let mut net =
            MeshNet::<f32>::new(small_config(3).with_aggregation(mode), &mut rng(6)).map_err(|e| e.to_string())?;
        let a = shape_set(&shapes::icosphere(1), 90, 3);
        let b = shape_set(&shapes::torus(6, 5, 1.0, 0.4), 90, 4);
        let batch = FaceBatch::new(&[&a, &b]).map_err(|e| e.to_string())?;
        warm_bn(&mut net, &batch);
        let before = eval_logits(&net, &batch);
        let mut r = rng(7);
        let mut order: Vec<usize> = (0..90).collect();
        for i in (1..90).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        let (pa, pb) = (
            a.permuted(&order).map_err(|e| e.to_string())?,
            b.permuted(&order).map_err(|e| e.to_string())?,
        );
        let after = eval_logits(&net, &FaceBatch::new(&[&pa, &pb]).map_err(|e| e.to_string())?);
        ensure(before == after, || format!("permutation changed the output ({mode:?})"))?;
    }

    // cyclic corner order of the face rotate conv
    let net = MeshNet::<f32>::new(ModelConfig::standard(4), &mut rng(8)).map_err(|e| e.to_string())?;
    let fs = random_face_set(&mut rng(9), 24);
    let frc = |data: Vec<f32>| -> Result<Vec<f32>, String> {
        let mut p = Pass::eval();
        let x = p
            .graph
            .input(Tensor::new(vec![24, 9], data).map_err(|e| e.to_string())?);
        let y = net.face_rotate_conv(&mut p, x).map_err(|e| e.to_string())?;
        Ok(p.graph.value(y).data().to_vec())
    };
    let corners: Vec<f32> = fs.corners().iter().flatten().copied().collect();
    let rotated: Vec<f32> = fs
        .corners()
        .iter()
        .flat_map(|k| [k[3], k[4], k[5], k[6], k[7], k[8], k[0], k[1], k[2]])
        .collect();
    ensure(frc(corners)? == frc(rotated)?, || {
        "corner rotation changed the face rotate conv".into()
    })?;

    // translation of the raw mesh
    let mesh = shapes::torus(8, 6, 0.7, 0.25);
    let moved = mesh
        .map_vertices(|v| [v[0] + 0.3, v[1] - 0.2, v[2] + 0.1])
        .map_err(|e| e.to_string())?;
    let structural = |fs: &FaceSet| -> Result<(Vec<f32>, Vec<f32>), String> {
        let batch = FaceBatch::new(&[fs]).map_err(|e| e.to_string())?;
        let mut p = Pass::eval();
        let out = net.forward(&mut p, &batch).map_err(|e| e.to_string())?;
        Ok((
            p.graph.value(out.frc.ok_or("no frc")?).data().to_vec(),
            p.graph.value(out.fkc.ok_or("no fkc")?).data().to_vec(),
        ))
    };
    let (frc_a, fkc_a) = structural(&build_face_set(&mesh).map_err(|e| e.to_string())?)?;
    let (frc_b, fkc_b) = structural(&build_face_set(&moved).map_err(|e| e.to_string())?)?;
    let diff = |x: &[f32], y: &[f32]| x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    let (dr, dk) = (diff(&frc_a, &frc_b), diff(&fkc_a, &fkc_b));
    ensure(dr <= 1e-6 && dk <= 1e-6, || {
        format!("translation moved frc by {dr:.2e}, fkc by {dk:.2e}")
    })?;

    // duplicated faces under max pooling
    let mut net = MeshNet::<f32>::new(small_config(3), &mut rng(11)).map_err(|e| e.to_string())?;
    let fs =
        build_face_set(&normalize(&shapes::icosphere(1)).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let batch = FaceBatch::new(&[&fs]).map_err(|e| e.to_string())?;
    warm_bn(&mut net, &batch);
    let (_, g0) = eval_logits(&net, &batch);
    for seed in 0..3 {
        let filled = fill_to_budget(&fs, 200, &mut rng(seed)).map_err(|e| e.to_string())?;
        let (_, g1) = eval_logits(&net, &FaceBatch::new(&[&filled]).map_err(|e| e.to_string())?);
        ensure(g0 == g1, || format!("fill seed {seed} changed the global feature"))?;
    }
    Ok(format!(
        "permutation x{} modes, corner cycle, duplicates bit-identical; translation {:.1e}",
        Aggregation::ALL.len(),
        dr.max(dk)
    ))
}

fn adjacency_oracle() -> Outcome {
    let mut r = rng(21);
    for case in 0..50 {
        let (_, faces) = random_soup(&mut r, 200);
        ensure(shared_edge_neighbors(&faces) == brute_force_neighbors(&faces), || {
            format!("random mesh {case}")
        })?;
    }
    for (name, m) in [("tetrahedron", shapes::tetrahedron()), ("cube", shapes::cube())] {
        let nb = shared_edge_neighbors(m.faces());
        ensure(nb == brute_force_neighbors(m.faces()), || {
            format!("{name} differs from brute force")
        })?;
        for (i, row) in nb.iter().enumerate() {
            ensure(row.iter().all(|&j| j != i && nb[j].contains(&i)), || {
                format!("{name} face {i}: {row:?}")
            })?;
        }
    }
    // an isolated triangle beside a connected pair
    let nb = shared_edge_neighbors(&[[0, 1, 2], [1, 3, 2], [4, 5, 6]]);
    ensure(nb[2] == [2, 2, 2], || format!("isolated face got {:?}", nb[2]))?;
    ensure(nb[0] == [0, 1, 0] && nb[1] == [1, 1, 0], || {
        format!("pair got {:?}", &nb[..2])
    })?;
    Ok("50 random meshes, tetrahedron, cube, isolated self-fill".into())
}

const OVERFIT_EPOCHS: usize = 200;
const OVERFIT_LOSS: f64 = 0.01;
const OVERFIT_TIME: Duration = Duration::from_secs(300);

fn overfit() -> Outcome {
    let run = run_overfit(0, OVERFIT_EPOCHS, OVERFIT_LOSS).map_err(|e| e.to_string())?;
    let epoch = run.converged_at.ok_or_else(|| {
        let (l, a) = run.history.last().copied().unwrap_or((f64::NAN, 0.0));
        format!("not converged in {OVERFIT_EPOCHS} epochs (loss {l:.4}, acc {a:.3})")
    })?;
    let (loss, acc) = run.history[epoch - 1];
    ensure(acc == 1.0 && loss < OVERFIT_LOSS, || {
        format!("epoch {epoch}: loss {loss}, acc {acc}")
    })?;
    ensure(run.elapsed < OVERFIT_TIME, || format!("took {:?}", run.elapsed))?;
    Ok(format!(
        "8 meshes x {OVERFIT_BUDGET} faces: acc 1.0, loss {loss:.4} at epoch {epoch}, {:.1} s",
        run.elapsed.as_secs_f64()
    ))
}

fn retrieval_oracle() -> Outcome {
    let mut r = rng(30);
    for case in 0..100 {
        let (n, dim, classes) = (64, r.random_range(1..6), r.random_range(2..6));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        // coarse values so ties occur
        let emb: Vec<f32> = (0..n * dim).map(|_| r.random_range(0..4) as f32 * 0.5).collect();
        let got = retrieval_map(&emb, dim, &labels).map_err(|e| e.to_string())?;
        let want = brute_force_map(&emb, dim, &labels);
        ensure(got == want, || format!("case {case}: {got} vs {want}"))?;
    }
    let hand = retrieval_map(&[0.0, 0.0, 0.0, 1.0, 5.0, 5.0], 2, &[0, 0, 1]).map_err(|e| e.to_string())?;
    ensure(hand == 1.0, || format!("3-point example gave {hand}"))?;
    Ok("100 sets of 64 exact; 3-point example 1.0".into())
}

fn config_coverage() -> Outcome {
    let fs = random_face_set(&mut rng(3), 20);
    let batch = FaceBatch::new(&[&fs, &fs]).map_err(|e| e.to_string())?;
    let rows: Vec<String> = Ablation::ALL
        .iter()
        .map(|a| format!(r#"{{"ablation": "{}"}}"#, a.name()))
        .chain(
            Aggregation::ALL
                .iter()
                .map(|m| format!(r#"{{"aggregation": "{}"}}"#, m.name())),
        )
        .collect();
    for json in &rows {
        let c = RunConfig::from_json(json)
            .and_then(|rc| rc.model_config(10))
            .map_err(|e| format!("{json}: {e}"))?;
        let net = MeshNet::<f32>::new(c, &mut rng(4)).map_err(|e| format!("{json}: {e}"))?;
        let mut p = Pass::eval();
        let out = net.forward(&mut p, &batch).map_err(|e| format!("{json}: {e}"))?;
        ensure(
            p.graph.shape(out.logits) == [2, 10] && p.graph.value(out.logits).is_finite(),
            || format!("{json}: bad logits"),
        )?;
    }
    Ok(format!(
        "{} ablation rows + {} aggregation modes",
        Ablation::ALL.len(),
        Aggregation::ALL.len()
    ))
}

fn structural_channels() -> Outcome {
    let c = ModelConfig::standard(40);
    let b = c.mesh_conv[0];
    ensure(c.structural_width() == 131 && b.in2 == 131, || {
        format!("width {} / in2 {}", c.structural_width(), b.in2)
    })?;
    ensure((b.in1, b.in2, b.out1, b.out2) == (64, 131, 256, 256), || {
        format!("block 0 is {b:?}")
    })?;
    let net = MeshNet::<f32>::new(c, &mut rng(1)).map_err(|e| e.to_string())?;
    let id = net.store.find("mesh_conv.0.fuse.weight").ok_or("no fuse weight")?;
    let shape = net.store.value(id).shape().to_vec();
    ensure(shape[0] == 131, || format!("fuse weight {shape:?}"))?;
    // the tensor that actually reaches the block
    let fs = random_face_set(&mut rng(2), 16);
    let batch = FaceBatch::new(&[&fs]).map_err(|e| e.to_string())?;
    let mut p = Pass::eval();
    let out = net.forward(&mut p, &batch).map_err(|e| e.to_string())?;
    let w = p.graph.shape(out.frc.ok_or("no frc")?)[1] + p.graph.shape(out.fkc.ok_or("no fkc")?)[1] + 3;
    ensure(w == 131, || format!("frc + fkc + normal = {w}"))?;
    Ok("(64, 131, 256, 256)".into())
}

fn parameter_report() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_meshnet"))
        .arg("params")
        .env_remove("MESHNET_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("exit {:?}", out.status.code()))?;
    let text = String::from_utf8_lossy(&out.stdout);
    let total: u64 = text
        .lines()
        .find_map(|l| {
            l.strip_prefix("total")
                .and_then(|r| r.split_whitespace().next()?.parse().ok())
        })
        .ok_or("no total line")?;
    ensure((2_000_000..=6_000_000).contains(&total), || format!("total {total}"))?;
    let delta = text
        .lines()
        .find(|l| l.contains("4.25M") && l.contains("delta"))
        .ok_or("no delta line")?;
    let want = format!("{:+}", total as i64 - 4_250_000);
    ensure(delta.contains(&want), || format!("delta line `{delta}` lacks {want}"))?;
    ensure(text.contains("|M_k| = 4"), || "no kernel-size note".into())?;
    ensure(text.contains("to 1024 channels"), || "no fusion-width note".into())?;
    Ok(format!("total {total}, delta {want}"))
}

fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(40);
    let records: Vec<DatasetRecord> = (0..6)
        .map(|i| DatasetRecord {
            face_set: random_face_set(&mut r, 32),
            label: i % 3,
            source_path: format!("cat{}/train/m{i}.off", i % 3),
        })
        .collect();
    let cache = Cache::new(32, 3, records).map_err(|e| e.to_string())?;
    let path = dir.path().join("c.mnet");
    write_cache(&cache, &path).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let back = read_cache(&path).map_err(|e| e.to_string())?;
    ensure(back.to_bytes().map_err(|e| e.to_string())? == bytes, || {
        "cache bytes differ after round trip".into()
    })?;
    ensure(back.records.len() == cache.records.len(), || "record count".into())?;
    for (a, b) in back.records.iter().zip(&cache.records) {
        ensure(a.face_set == b.face_set && a.label == b.label, || {
            "record differs".into()
        })?;
    }

    let mut net = MeshNet::<f32>::new(small_config(3), &mut rng(20)).map_err(|e| e.to_string())?;
    let batch = FaceBatch::new(&[&cache.records[0].face_set]).map_err(|e| e.to_string())?;
    warm_bn(&mut net, &batch);
    let sgd = Sgd::new(Default::default(), &net.store);
    let ck = net.to_checkpoint(Some(&sgd), serde_json::json!({"epoch": 3}));
    let ck_path = dir.path().join("m.mnck");
    ck.save(&ck_path).map_err(|e| e.to_string())?;
    let ck_bytes = std::fs::read(&ck_path).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&ck_path).map_err(|e| e.to_string())?;
    ensure(loaded == ck && loaded.to_bytes() == ck_bytes, || {
        "checkpoint differs after round trip".into()
    })?;
    let restored = MeshNet::<f32>::from_checkpoint(&loaded).map_err(|e| e.to_string())?;
    ensure(eval_logits(&restored, &batch) == eval_logits(&net, &batch), || {
        "restored model differs".into()
    })?;

    // single-bit flips across each file are all caught
    let mut rejected = 0;
    for (bytes, is_cache) in [(&bytes, true), (&ck_bytes, false)] {
        for k in 1..=16 {
            let at = k * (bytes.len() - 1) / 17;
            let mut bad = bytes.clone();
            bad[at] ^= 0x04;
            let err = if is_cache {
                Cache::from_bytes(&bad).is_err()
            } else {
                Checkpoint::from_bytes(&bad).is_err()
            };
            ensure(err, || {
                format!(
                    "{} flip at byte {at} accepted",
                    if is_cache { "cache" } else { "checkpoint" }
                )
            })?;
            rejected += 1;
        }
    }
    Ok(format!(
        "cache {} B and checkpoint {} B bit-exact; {rejected} corruptions rejected",
        bytes.len(),
        ck_bytes.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient-suite", gradient_suite),
        ("kernel-correlation-oracle", kernel_correlation_oracle),
        ("exact-invariances", exact_invariances),
        ("adjacency-oracle", adjacency_oracle),
        ("overfit-harness", overfit),
        ("retrieval-oracle", retrieval_oracle),
        ("config-coverage", config_coverage),
        ("structural-channels", structural_channels),
        ("parameter-report", parameter_report),
        ("format-round-trips", format_round_trips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name:<26} {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name:<26} {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
