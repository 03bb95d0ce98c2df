use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use meshnet::dataset::{build_split, scan};
use meshnet::export::{colormap, write_channel_csv, write_face_ply};
use meshnet::gradcheck::{self, GradcheckSizes};
use meshnet::mesh_io::{load_mesh, read_cache, write_cache, Cache, Manifest};
use meshnet::model::{param_report, FaceBatch, MeshNet, ModelConfig, Pass, REFERENCE_PARAMS};
use meshnet::preprocess::prepare;
use meshnet::tensor::Checkpoint;
use meshnet::train::{embed, evaluate, retrieval_map, train, Embeddings, TrainHooks};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::args::*;
use crate::config::RunConfig;
use crate::CliError;

const MANIFEST: &str = "manifest.json";
/// Inclusive band a default-config parameter total is expected to fall in.
const PARAM_BAND: (usize, usize) = (2_000_000, 6_000_000);

struct Ctx<'a> {
    seed: Option<u64>,
    json: bool,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn emit(&mut self, value: serde_json::Value, text: impl FnOnce() -> String) -> Result<(), CliError> {
        if self.json {
            writeln!(
                self.out,
                "{}",
                serde_json::to_string_pretty(&value).expect("json value")
            )?;
        } else {
            write!(self.out, "{}", text())?;
        }
        Ok(())
    }
}

/// Runs one parsed command line, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // a second call in the same process (tests) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut ctx = Ctx {
        seed: cli.seed,
        json: cli.json,
        out,
    };
    match cli.command {
        Command::Preprocess(a) => preprocess(&mut ctx, a),
        Command::Train(a) => train_cmd(&mut ctx, a),
        Command::Eval(a) => eval_cmd(&mut ctx, a),
        Command::Embed(a) => embed_cmd(&mut ctx, a),
        Command::Retrieve(a) => retrieve(&mut ctx, a),
        Command::Gradcheck(a) => gradcheck_cmd(&mut ctx, a),
        Command::Params(a) => params(&mut ctx, a),
        Command::Visualize(a) => visualize(&mut ctx, a),
    }
}

fn preprocess(ctx: &mut Ctx, a: PreprocessArgs) -> Result<(), CliError> {
    if a.faces < 4 {
        return Err(CliError::Usage("--faces must be at least 4".into()));
    }
    if !a.root.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", a.root.display())));
    }
    let seed = ctx.seed.unwrap_or(0);
    let mut manifest = scan(&a.root, a.faces)?;
    std::fs::create_dir_all(&a.out)?;
    let mut summary = Vec::new();
    for (i, split) in [Split::Train, Split::Test].into_iter().enumerate() {
        let entries = match split {
            Split::Train => &manifest.train,
            Split::Test => &manifest.test,
        };
        let r = build_split(entries, &manifest, i, seed, a.skip_invalid)?;
        write_cache(&r.cache, a.out.join(split.file()))?;
        summary.push(json!({
            "split": split.file().trim_end_matches(".mnet"),
            "records": r.cache.len(),
            "skipped": r.skipped.iter().map(|(e, why)| json!({"path": e.path, "error": why})).collect::<Vec<_>>(),
        }));
        match split {
            Split::Train => manifest.train = r.kept,
            Split::Test => manifest.test = r.kept,
        }
    }
    manifest.save(a.out.join(MANIFEST))?;
    ctx.emit(
        json!({"out": a.out, "categories": manifest.num_categories(), "face_budget": a.faces, "seed": seed, "splits": summary}),
        || {
            let mut s = format!(
                "{} categories, face budget {}, seed {seed}\n",
                manifest.num_categories(),
                a.faces
            );
            for v in &summary {
                s += &format!(
                    "{:<5} {} records ({} skipped)\n",
                    v["split"].as_str().unwrap_or(""),
                    v["records"],
                    v["skipped"].as_array().map_or(0, |x| x.len())
                );
            }
            s
        },
    )
}

fn load_manifest_near(dir: &Path) -> Option<Manifest> {
    Manifest::load(dir.join(MANIFEST)).ok()
}

/// Reads a cache and reattaches source paths from a manifest next to it
/// when the file is one of the two split caches it describes.
fn load_cache(path: &Path) -> Result<(Cache, Option<Manifest>), CliError> {
    let mut cache = read_cache(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let manifest = path.parent().and_then(load_manifest_near);
    let split = [Split::Train, Split::Test]
        .into_iter()
        .find(|s| path.file_name().is_some_and(|n| n == s.file()));
    if let (Some(m), Some(split)) = (&manifest, split) {
        let entries = match split {
            Split::Train => &m.train,
            Split::Test => &m.test,
        };
        cache.attach_paths(&Manifest::paths(entries))?;
    }
    Ok((cache, manifest))
}

fn load_data(d: &DataArgs) -> Result<(Cache, Option<Manifest>), CliError> {
    match (&d.data, &d.cache) {
        (Some(dir), None) => load_cache(&dir.join(d.split.file())),
        (None, Some(file)) => load_cache(file),
        _ => Err(CliError::Usage(
            "give either --data DIR (with --split) or --cache FILE".into(),
        )),
    }
}

fn load_model(path: &Path) -> Result<MeshNet<f32>, CliError> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(MeshNet::from_checkpoint(&ck)?)
}

fn check_classes(net: &MeshNet<f32>, cache: &Cache) -> Result<(), CliError> {
    if net.config().num_classes != cache.num_categories {
        return Err(CliError::Config(format!(
            "checkpoint has {} classes, data has {}",
            net.config().num_classes,
            cache.num_categories
        )));
    }
    Ok(())
}

fn resolve_run(ctx: &Ctx, a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &a.data {
        rc.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        rc.out = Some(o.clone());
    }
    if let Some(e) = a.epochs {
        rc.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        rc.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        rc.train.lr = lr;
    }
    if let Some(s) = ctx.seed {
        rc.train.seed = s;
    }
    if a.model.ablation.is_some() {
        rc.ablation = a.model.ablation;
    }
    if a.model.aggregation.is_some() {
        rc.aggregation = a.model.aggregation;
    }
    Ok(rc)
}

fn train_cmd(ctx: &mut Ctx, a: TrainArgs) -> Result<(), CliError> {
    let rc = resolve_run(ctx, &a)?;
    if a.print_config {
        writeln!(ctx.out, "{}", rc.to_json())?;
        return Ok(());
    }
    rc.validate()?;
    let data = rc
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("no data directory (--data or config `data`)".into()))?;
    let out_dir = rc.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    let (train_set, manifest) = load_cache(&data.join(Split::Train.file()))?;
    let test_set = match data.join(Split::Test.file()).exists() {
        true => Some(load_cache(&data.join(Split::Test.file()))?.0).filter(|c| !c.is_empty()),
        false => None,
    };
    let model = rc.model_config(train_set.num_categories)?;
    let mut resolved = rc.clone();
    resolved.model = Some(model.clone());
    resolved.ablation = None;
    resolved.aggregation = None;
    resolved.out = Some(out_dir.clone());
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("run.json"), resolved.to_json())?;

    let mut rng = ChaCha8Rng::seed_from_u64(rc.train.seed);
    let mut net = MeshNet::<f32>::new(model, &mut rng)?;
    let mut log = BufWriter::new(File::create(out_dir.join("metrics.jsonl"))?);
    let mut progress = |m: &meshnet::train::EpochMetrics, r: Option<&meshnet::train::EvalReport>| {
        log::info!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  acc {:.4}{}",
            m.epoch,
            m.lr,
            m.loss,
            m.accuracy,
            r.map_or(String::new(), |r| format!("  test acc {:.4}", r.overall_accuracy))
        );
        true
    };
    let summary = train(
        &mut net,
        &train_set.records,
        &rc.train,
        TrainHooks {
            test: test_set.as_ref().map(|c| c.records.as_slice()),
            log: Some(&mut log),
            checkpoint_dir: Some(out_dir.clone()),
            on_epoch: Some(&mut progress),
        },
    )?;
    log.flush()?;
    let last = summary.history.last();
    let names = manifest.map(|m| m.category_names()).unwrap_or_default();
    ctx.emit(
        json!({
            "out": out_dir,
            "epochs_run": summary.epochs_run,
            "final_train_loss": last.map(|m| m.loss),
            "final_train_accuracy": last.map(|m| m.accuracy),
            "best_test_accuracy": summary.best_test_accuracy,
            "best_epoch": summary.best_epoch,
            "categories": names,
        }),
        || {
            let mut s = format!("trained {} epochs into {}\n", summary.epochs_run, out_dir.display());
            if let Some(m) = last {
                s += &format!("final train loss {:.4}, accuracy {:.2}%\n", m.loss, 100.0 * m.accuracy);
            }
            if let (Some(acc), Some(e)) = (summary.best_test_accuracy, summary.best_epoch) {
                s += &format!("best test accuracy {:.2}% at epoch {e}\n", 100.0 * acc);
            }
            s
        },
    )
}

fn eval_cmd(ctx: &mut Ctx, a: EvalArgs) -> Result<(), CliError> {
    let net = load_model(&a.checkpoint)?;
    let (cache, manifest) = load_data(&a.data)?;
    check_classes(&net, &cache)?;
    if a.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be at least 1".into()));
    }
    let report = evaluate(&net, &cache.records, a.batch_size)?;
    let names = manifest.map(|m| m.category_names()).unwrap_or_default();
    ctx.emit(serde_json::to_value(&report).expect("report serializes"), || {
        report.table(&names)
    })
}

fn embed_cmd(ctx: &mut Ctx, a: EmbedArgs) -> Result<(), CliError> {
    let net = load_model(&a.checkpoint)?;
    let (cache, _) = load_data(&a.data)?;
    if a.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be at least 1".into()));
    }
    let e = embed(&net, &cache.records, a.batch_size)?;
    e.save(&a.out)?;
    ctx.emit(json!({"out": a.out, "rows": e.len(), "dim": e.dim}), || {
        format!("wrote {} × {} embeddings to {}\n", e.len(), e.dim, a.out.display())
    })
}

fn retrieve(ctx: &mut Ctx, a: RetrieveArgs) -> Result<(), CliError> {
    let e = Embeddings::load(&a.embeddings)?;
    if let Some(&q) = a.query.iter().find(|&&q| q >= e.len()) {
        return Err(CliError::Usage(format!("query {q} out of range ({} rows)", e.len())));
    }
    let results: Vec<serde_json::Value> = a
        .query
        .iter()
        .map(|&q| {
            let hits: Vec<_> = e
                .nearest(e.row(q), a.k, Some(q))
                .into_iter()
                .map(|(i, d)| json!({"index": i, "label": e.labels[i], "path": e.paths[i], "distance": d}))
                .collect();
            json!({"query": q, "label": e.labels[q], "path": e.paths[q], "results": hits})
        })
        .collect();
    let map = if a.no_map || e.len() < 2 {
        None
    } else {
        retrieval_map(&e.data, e.dim, &e.labels).ok()
    };
    ctx.emit(json!({"rows": e.len(), "map": map, "queries": results}), || {
        let mut s = format!("{} embeddings of width {}\n", e.len(), e.dim);
        if let Some(m) = map {
            s += &format!("mAP {:.2}%\n", 100.0 * m);
        }
        for r in &results {
            s += &format!(
                "\nquery {} (label {}) {}\n",
                r["query"],
                r["label"],
                r["path"].as_str().unwrap_or("")
            );
            for h in r["results"].as_array().into_iter().flatten() {
                s += &format!(
                    "  {:>6}  label {:>3}  d {:.4}  {}\n",
                    h["index"],
                    h["label"],
                    h["distance"].as_f64().unwrap_or(f64::NAN),
                    h["path"].as_str().unwrap_or("")
                );
            }
        }
        s
    })
}

fn gradcheck_cmd(ctx: &mut Ctx, a: GradcheckArgs) -> Result<(), CliError> {
    if let Some(op) = &a.corrupt {
        if !gradcheck::OPS.contains(&op.as_str()) {
            return Err(CliError::Usage(format!("unknown op `{op}`")));
        }
    }
    let sizes = GradcheckSizes {
        faces: a.faces,
        batch: a.batch,
        samples: a.samples,
    };
    let seed = ctx.seed.unwrap_or(0);
    let report = gradcheck::run(seed, sizes, a.corrupt.as_deref())?;
    ctx.emit(serde_json::to_value(&report).expect("report serializes"), || {
        format!(
            "{}{} ops, tolerance {:.0e}, {} ms\n",
            report.table(),
            report.checks.len(),
            report.tolerance,
            report.elapsed_ms
        )
    })?;
    if !report.passed() {
        return Err(CliError::Verification(format!(
            "gradient check failed for: {}",
            report.failures().join(", ")
        )));
    }
    Ok(())
}

fn params(ctx: &mut Ctx, a: ParamsArgs) -> Result<(), CliError> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if a.model.ablation.is_some() {
        rc.ablation = a.model.ablation;
    }
    if a.model.aggregation.is_some() {
        rc.aggregation = a.model.aggregation;
    }
    let classes = rc.model.as_ref().map_or(a.classes, |m| m.num_classes);
    let c = rc.model_config(classes)?;
    let r = param_report(&c, a.faces);
    let total = r.total();
    let delta = total as i64 - REFERENCE_PARAMS as i64;
    let in_band = (PARAM_BAND.0..=PARAM_BAND.1).contains(&total);
    let notes = param_notes(&c);
    ctx.emit(
        json!({
            "modules": r.modules,
            "total": total,
            "total_macs": r.total_macs(),
            "faces": a.faces,
            "reference": REFERENCE_PARAMS,
            "delta": delta,
            "delta_percent": 100.0 * delta as f64 / REFERENCE_PARAMS as f64,
            "band": [PARAM_BAND.0, PARAM_BAND.1],
            "within_band": in_band,
            "notes": notes,
        }),
        || {
            let mut s = format!("{:<14} {:>12} {:>16}\n", "module", "params", "MACs/sample");
            for m in &r.modules {
                s += &format!("{:<14} {:>12} {:>16}\n", m.name, m.params, m.macs);
            }
            s += &format!("{:<14} {:>12} {:>16}\n", "total", total, r.total_macs());
            s += &format!(
                "\nreference {:.2}M, delta {:+} ({:+.1}%)\n",
                REFERENCE_PARAMS as f64 / 1e6,
                delta,
                100.0 * delta as f64 / REFERENCE_PARAMS as f64
            );
            s += &format!(
                "sanity band [{}M, {}M]: {}\n",
                PARAM_BAND.0 / 1_000_000,
                PARAM_BAND.1 / 1_000_000,
                if in_band { "within" } else { "OUTSIDE" }
            );
            s += &format!("MACs counted for {} faces per sample\n\nnotes:\n", a.faces);
            for n in &notes {
                s += &format!("- {n}\n");
            }
            s
        },
    )
}

fn param_notes(c: &ModelConfig) -> Vec<String> {
    let mut notes = Vec::new();
    if c.use_fkc {
        notes.push(format!(
            "kernel correlation uses {} kernels of |M_k| = {} unit vectors each, 2 angles per vector ({} parameters)",
            c.fkc_kernels,
            c.fkc_vectors_per_kernel,
            2 * c.fkc_kernels * c.fkc_vectors_per_kernel
        ));
    }
    notes.push(format!(
        "fusion MLP maps the concatenated {} block outputs to {} channels before max pooling over faces",
        c.fusion_input_width(),
        c.fusion_width
    ));
    notes.push(format!(
        "batch norm affine terms are {}; running statistics are buffers and not counted",
        if c.batch_norm { "counted" } else { "absent" }
    ));
    notes
}

fn visualize(ctx: &mut Ctx, a: VisualizeArgs) -> Result<(), CliError> {
    let net = load_model(&a.checkpoint)?;
    let c = net.config();
    let (enabled, width) = match a.which {
        Descriptor::Frc => (c.use_frc, c.frc_k2),
        Descriptor::Fkc => (c.use_fkc, c.fkc_kernels),
    };
    if !enabled {
        return Err(CliError::Config(format!(
            "the checkpoint's model has no {:?} descriptor",
            a.which
        )));
    }
    if a.channel >= width {
        return Err(CliError::Usage(format!(
            "channel {} out of range (width {width})",
            a.channel
        )));
    }
    let mesh = load_mesh(&a.mesh)?;
    let fs = prepare(&mesh, a.faces)?;
    let batch = FaceBatch::new(&[&fs])?;
    let mut p = Pass::eval();
    let out = net.forward(&mut p, &batch)?;
    let var = match a.which {
        Descriptor::Frc => out.frc,
        Descriptor::Fkc => out.fkc,
    }
    .expect("descriptor enabled");
    let values: Vec<f64> = p
        .graph
        .value(var)
        .data()
        .chunks(width)
        .map(|row| row[a.channel] as f64)
        .collect();
    let faces: Vec<[[f64; 3]; 3]> = (0..fs.len()).map(|i| fs.face_vertices(i)).collect();
    let mut ply = BufWriter::new(File::create(&a.out)?);
    write_face_ply(&mut ply, &faces, &colormap(&values))?;
    ply.flush()?;
    let csv_path = a.out.with_extension("csv");
    let mut csv = BufWriter::new(File::create(&csv_path)?);
    write_channel_csv(&mut csv, &values)?;
    csv.flush()?;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    ctx.emit(
        json!({"ply": a.out, "csv": csv_path, "faces": fs.len(), "min": lo, "max": hi}),
        || {
            format!(
                "{} faces, channel {} in [{lo:.4}, {hi:.4}]\nwrote {} and {}\n",
                fs.len(),
                a.channel,
                a.out.display(),
                csv_path.display()
            )
        },
    )
}
