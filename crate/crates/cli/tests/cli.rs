use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use meshnet::mesh_io::{format_off, load_mesh, TriMesh};
use meshnet::model::{FaceBatch, MeshNet, ModelConfig, Pass};
use meshnet::preprocess::prepare;
use meshnet::shapes;
use meshnet::tensor::Checkpoint;
use serde_json::Value;

fn meshnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshnet"))
        .args(args)
        .env_remove("MESHNET_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is json")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_mesh(dir: &Path, name: &str, m: &TriMesh) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, format_off(m)).unwrap();
    path
}

/// Two categories, three train and two test meshes each.
fn dataset(root: &Path) {
    let boxes = [
        shapes::subdivided_box([1.0, 1.0, 1.0], 2),
        shapes::subdivided_box([1.0, 0.5, 0.3], 2),
        shapes::subdivided_box([0.4, 1.0, 0.8], 2),
        shapes::subdivided_box([1.0, 0.2, 0.9], 2),
        shapes::cube(),
    ];
    let round = [
        shapes::icosphere(1),
        shapes::uv_sphere(8, 6),
        shapes::torus(8, 5, 1.0, 0.4),
        shapes::torus(10, 4, 1.0, 0.25),
        shapes::uv_sphere(6, 5),
    ];
    for (cat, meshes) in [("box", &boxes), ("round", &round)] {
        for (i, m) in meshes.iter().enumerate() {
            let split = if i < 3 { "train" } else { "test" };
            write_mesh(&root.join(cat).join(split), &format!("{cat}_{i}.off"), m);
        }
    }
}

#[test]
fn help_lists_every_subcommand() {
    let o = meshnet(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for cmd in [
        "preprocess",
        "train",
        "eval",
        "embed",
        "retrieve",
        "gradcheck",
        "params",
        "visualize",
    ] {
        assert!(text.contains(cmd), "help is missing {cmd}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(meshnet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(meshnet(&["params", "--classes"]).status.code(), Some(1));
    assert_eq!(meshnet(&["params", "--ablation", "no-such"]).status.code(), Some(1));
    assert_eq!(meshnet(&["params", "--jobs", "0"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"train": {"epochz": 3}}"#).unwrap();
    assert_eq!(meshnet(&["params", "--config", p(&bad)]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_corruption_fails() {
    let o = meshnet(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches(" ok").count(), meshnet::gradcheck::OPS.len());

    let o = meshnet(&["gradcheck", "--corrupt", "face_rotate_conv"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("face_rotate_conv"), "{err}");
    assert!(!err.contains("fusion"), "{err}");

    let o = meshnet(&["--json", "gradcheck", "--seed", "9"]);
    let v = json(&o);
    assert_eq!(v["seed"], 9);
    assert_eq!(v["checks"].as_array().unwrap().len(), meshnet::gradcheck::OPS.len());
}

#[test]
fn seed_falls_back_to_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_meshnet"))
        .args(["--json", "gradcheck"])
        .env("MESHNET_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(json(&o)["seed"], 5);
}

#[test]
fn params_reports_band_and_delta() {
    let v = json(&meshnet(&["--json", "params"]));
    let total = v["total"].as_u64().unwrap();
    assert!((2_000_000..=6_000_000).contains(&total), "{total}");
    assert_eq!(v["within_band"], true);
    assert_eq!(
        v["delta"].as_i64().unwrap(),
        total as i64 - v["reference"].as_i64().unwrap()
    );
    let sum: u64 = v["modules"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["params"].as_u64().unwrap())
        .sum();
    assert_eq!(sum, total);

    let text = stdout(&meshnet(&["params"]));
    assert!(text.contains("|M_k| = 4"));
    assert!(text.contains("1024 channels"));

    let ablated = json(&meshnet(&["--json", "params", "--ablation", "no-fkc"]));
    assert!(ablated["total"].as_u64().unwrap() < total);
}

#[test]
fn end_to_end_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("raw");
    dataset(&root);
    std::fs::write(root.join("box/train/broken.off"), "OFF\n3 1 0\n0 0 0\n1 0 0\n").unwrap();
    let data = tmp.path().join("data");

    // a broken file aborts unless skipped
    let o = meshnet(&["preprocess", p(&root), "--out", p(&data), "--faces", "48"]);
    assert_eq!(o.status.code(), Some(3));
    let v = json(&meshnet(&[
        "--json",
        "--seed",
        "3",
        "preprocess",
        p(&root),
        "--out",
        p(&data),
        "--faces",
        "48",
        "--skip-invalid",
    ]));
    assert_eq!(v["categories"], 2);
    assert_eq!(v["splits"][0]["records"], 6);
    assert_eq!(v["splits"][0]["skipped"].as_array().unwrap().len(), 1);
    assert_eq!(v["splits"][1]["records"], 4);
    for f in ["train.mnet", "test.mnet", "manifest.json"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }

    let mut cfg = meshnet_cli::RunConfig {
        model: Some(ModelConfig::tiny(2)),
        ..Default::default()
    };
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.train.lr_milestones = vec![];
    let cfg_path = tmp.path().join("run.json");
    std::fs::write(&cfg_path, cfg.to_json()).unwrap();

    // --print-config shows flag overrides without training
    let printed = meshnet(&["train", "--config", p(&cfg_path), "--epochs", "5", "--print-config"]);
    let resolved = meshnet_cli::RunConfig::from_json(&stdout(&printed)).unwrap();
    assert_eq!(resolved.train.epochs, 5);
    assert_eq!(resolved.model, cfg.model);

    let run = tmp.path().join("run");
    let v = json(&meshnet(&[
        "--json",
        "train",
        "--config",
        p(&cfg_path),
        "--data",
        p(&data),
        "--out",
        p(&run),
    ]));
    assert_eq!(v["epochs_run"], 2);
    assert_eq!(v["categories"], serde_json::json!(["box", "round"]));
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert!(log.lines().count() >= 2);
    for f in ["last.mnck", "run.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let saved = meshnet_cli::RunConfig::load(&run.join("run.json")).unwrap();
    assert_eq!(saved.model, cfg.model);
    let ck = run.join("last.mnck");

    // class-count mismatch in the config is a config error
    let mut wrong = cfg.clone();
    wrong.model = Some(ModelConfig::tiny(3));
    std::fs::write(&cfg_path, wrong.to_json()).unwrap();
    let o = meshnet(&["train", "--config", p(&cfg_path), "--data", p(&data), "--out", p(&run)]);
    assert_eq!(o.status.code(), Some(1));

    let report = json(&meshnet(&[
        "--json",
        "eval",
        "--checkpoint",
        p(&ck),
        "--data",
        p(&data),
    ]));
    assert_eq!(report["samples"], 4);
    let acc = report["overall_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let table = stdout(&meshnet(&[
        "eval",
        "--checkpoint",
        p(&ck),
        "--data",
        p(&data),
        "--split",
        "train",
    ]));
    assert!(table.contains("round"), "{table}");

    let emb = tmp.path().join("test.emb");
    let v = json(&meshnet(&[
        "--json",
        "embed",
        "--checkpoint",
        p(&ck),
        "--cache",
        p(&data.join("test.mnet")),
        "--out",
        p(&emb),
    ]));
    assert_eq!(v["rows"], 4);
    assert_eq!(v["dim"], 7);

    let v = json(&meshnet(&[
        "--json",
        "retrieve",
        "--embeddings",
        p(&emb),
        "-q",
        "0",
        "-q",
        "3",
        "-k",
        "2",
    ]));
    let map = v["map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    let q0 = &v["queries"][0];
    assert_eq!(q0["results"].as_array().unwrap().len(), 2);
    assert!(q0["results"].as_array().unwrap().iter().all(|h| h["index"] != 0));
    assert!(q0["path"].as_str().unwrap().ends_with(".off"));
    assert_eq!(
        meshnet(&["retrieve", "--embeddings", p(&emb), "-q", "4"]).status.code(),
        Some(1)
    );
    let v = json(&meshnet(&["--json", "retrieve", "--embeddings", p(&emb), "--no-map"]));
    assert!(v["map"].is_null());

    // visualize: one PLY face per decimated face, CSV equal to a direct forward pass
    let mesh_path = root.join("round/test/round_3.off");
    let ply = tmp.path().join("vis.ply");
    let o = meshnet(&[
        "visualize",
        "--checkpoint",
        p(&ck),
        "--mesh",
        p(&mesh_path),
        "--which",
        "fkc",
        "--channel",
        "1",
        "--out",
        p(&ply),
        "--faces",
        "48",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fs = prepare(&load_mesh(&mesh_path).unwrap(), 48).unwrap();
    let ply_text = std::fs::read_to_string(&ply).unwrap();
    assert!(ply_text.contains(&format!("element face {}", fs.len())));
    assert!(ply_text.contains(&format!("element vertex {}", 3 * fs.len())));

    let net = MeshNet::<f32>::from_checkpoint(&Checkpoint::load(&ck).unwrap()).unwrap();
    let mut pass = Pass::eval();
    let out = net.forward(&mut pass, &FaceBatch::new(&[&fs]).unwrap()).unwrap();
    let fkc = pass.graph.value(out.fkc.unwrap()).data().to_vec();
    let csv = std::fs::read_to_string(ply.with_extension("csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("face,value"));
    let values: Vec<f64> = rows.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), fs.len());
    for (i, v) in values.iter().enumerate() {
        assert!(
            (v - fkc[i * 3 + 1] as f64).abs() < 1e-6,
            "face {i}: {v} vs {}",
            fkc[i * 3 + 1]
        );
    }

    let o = meshnet(&[
        "visualize",
        "--checkpoint",
        p(&ck),
        "--mesh",
        p(&mesh_path),
        "--which",
        "frc",
        "--channel",
        "4",
        "--out",
        p(&ply),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
