//! Central finite-difference checks of every layer op, in 64-bit.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Aggregation, MeshNet, ModelConfig, ModelError, Pass};
use crate::tensor::{ParamId, ParamKind, Tensor, Var};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Absolute differences below this pass regardless of scale.
pub const ABS_FLOOR: f64 = 1e-6;

/// Every op covered by [`run`], in report order.
pub const OPS: &[&str] = &[
    "spatial_descriptor",
    "face_rotate_conv",
    "kernel_vectors",
    "face_kernel_correlation",
    "mesh_conv.average",
    "mesh_conv.max",
    "mesh_conv.concat",
    "mesh_conv.spatial_only",
    "fusion",
    "classifier",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSizes {
    /// Faces per shape.
    pub faces: usize,
    /// Shapes per batch.
    pub batch: usize,
    /// Sampled entries per parameter tensor.
    pub samples: usize,
}

impl Default for GradcheckSizes {
    fn default() -> Self {
        Self {
            faces: 6,
            batch: 2,
            samples: 24,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpCheck {
    pub op: String,
    pub entries: usize,
    /// Probes dropped because they straddle a ReLU or max kink.
    pub skipped: usize,
    /// `|a − n| / max(|a|, |n|, ABS_FLOOR / TOLERANCE)` maximised over entries.
    pub max_error: f64,
    /// Entry with the largest error.
    pub worst: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub checks: Vec<OpCheck>,
    pub elapsed_ms: u64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.op.as_str())
            .collect()
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s += &format!(
                "{:<26} {:>5} entries {:>3} skipped  max err {:.3e}  {}{}\n",
                c.op,
                c.entries,
                c.skipped,
                c.max_error,
                if c.passed { "ok" } else { "FAIL" },
                if c.passed {
                    String::new()
                } else {
                    format!(" ({})", c.worst)
                }
            );
        }
        s
    }
}

type Build = dyn Fn(&MeshNet<f64>, &mut Pass<'_, f64>, &[Var]) -> Result<Var, ModelError>;

struct Case {
    op: &'static str,
    net: MeshNet<f64>,
    inputs: Vec<(&'static str, Tensor<f64>)>,
    params: Vec<ParamId>,
    build: Box<Build>,
}

fn config(aggregation: Aggregation) -> ModelConfig {
    let mut c = ModelConfig::tiny(3).with_aggregation(aggregation);
    c.batch_norm = false;
    c.dropout_p = 0.0;
    c
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .expect("shape matches")
}

fn unit_normals(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-3);
        data.extend(v.map(|c| c / len));
    }
    Tensor::new(vec![n, 3], data).expect("shape matches")
}

fn random_neighbors(rng: &mut ChaCha8Rng, n: usize) -> Vec<[usize; 3]> {
    (0..n)
        .map(|i| {
            std::array::from_fn(|_| {
                if rng.random_bool(0.2) {
                    i
                } else {
                    rng.random_range(0..n)
                }
            })
        })
        .collect()
}

fn params_with_prefix(net: &MeshNet<f64>, prefix: &str) -> Vec<ParamId> {
    net.store
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Trainable && p.name.starts_with(prefix))
        .map(|(id, _)| id)
        .collect()
}

/// Fresh weights with every trainable entry shifted off its initial value,
/// so zero biases cannot park a ReLU input exactly on its kink.
fn fixture(config: ModelConfig, seed: u64) -> Result<MeshNet<f64>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut net = MeshNet::<f64>::new(config, &mut rng)?;
    for p in net.store.iter_mut().filter(|p| p.kind == ParamKind::Trainable) {
        p.value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-0.2..0.2));
    }
    Ok(net)
}

fn cases(seed: u64, sizes: GradcheckSizes) -> Result<Vec<Case>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sizes.faces * sizes.batch;
    let mut out = Vec::new();
    let net = |agg| fixture(config(agg), seed);
    let nb = random_neighbors(&mut rng, n);

    let spatial = net(Aggregation::Concat)?;
    out.push(Case {
        op: "spatial_descriptor",
        params: params_with_prefix(&spatial, "spatial."),
        inputs: vec![("centers", random(&mut rng, &[n, 3], 1.0))],
        net: spatial,
        build: Box::new(|net, p, x| net.spatial_descriptor(p, x[0])),
    });

    let frc = net(Aggregation::Concat)?;
    out.push(Case {
        op: "face_rotate_conv",
        params: params_with_prefix(&frc, "frc."),
        inputs: vec![("corners", random(&mut rng, &[n, 9], 0.5))],
        net: frc,
        build: Box::new(|net, p, x| net.face_rotate_conv(p, x[0])),
    });

    let kv = net(Aggregation::Concat)?;
    out.push(Case {
        op: "kernel_vectors",
        params: params_with_prefix(&kv, "fkc."),
        inputs: vec![],
        net: kv,
        build: Box::new(|net, p, _| net.kernel_vectors(p)),
    });

    let fkc = net(Aggregation::Concat)?;
    let fkc_nb = nb.clone();
    out.push(Case {
        op: "face_kernel_correlation",
        params: params_with_prefix(&fkc, "fkc."),
        inputs: vec![("normals", unit_normals(&mut rng, n))],
        net: fkc,
        build: Box::new(move |net, p, x| {
            let k = net.kernel_vectors(p)?;
            net.face_kernel_correlation(p, x[0], &fkc_nb, k)
        }),
    });

    for (op, agg) in [
        ("mesh_conv.average", Aggregation::Average),
        ("mesh_conv.max", Aggregation::Max),
        ("mesh_conv.concat", Aggregation::Concat),
    ] {
        let mc = net(agg)?;
        let w = mc.config().mesh_conv[1];
        let nb = nb.clone();
        out.push(Case {
            op,
            params: params_with_prefix(&mc, "mesh_conv.1."),
            inputs: vec![
                ("spatial", random(&mut rng, &[n, w.in1], 1.0)),
                ("structural", random(&mut rng, &[n, w.in2], 1.0)),
            ],
            net: mc,
            build: Box::new(move |net, p, x| {
                let (s, t) = net.mesh_conv(p, 1, Some(x[0]), Some(x[1]), &nb)?;
                let t = t.expect("structural stream present");
                Ok(p.graph.concat(&[s, t], 1)?)
            }),
        });
    }

    let mut c = config(Aggregation::Concat);
    c.use_frc = false;
    c.use_fkc = false;
    c.fit_block_widths();
    let so = fixture(c, seed)?;
    let w = so.config().mesh_conv[0];
    out.push(Case {
        op: "mesh_conv.spatial_only",
        params: params_with_prefix(&so, "mesh_conv.0."),
        inputs: vec![("spatial", random(&mut rng, &[n, w.in1], 1.0))],
        net: so,
        build: Box::new(move |net, p, x| Ok(net.mesh_conv(p, 0, Some(x[0]), None, &nb)?.0)),
    });

    let fu = net(Aggregation::Concat)?;
    let width = fu.config().fusion_input_width();
    let batch = sizes.batch;
    out.push(Case {
        op: "fusion",
        params: params_with_prefix(&fu, "fusion."),
        inputs: vec![("per_face", random(&mut rng, &[n, width], 1.0))],
        net: fu,
        build: Box::new(move |net, p, x| net.global_feature(p, &[x[0]], batch)),
    });

    let cl = net(Aggregation::Concat)?;
    let width = cl.config().fusion_width;
    out.push(Case {
        op: "classifier",
        params: params_with_prefix(&cl, "classifier."),
        inputs: vec![("global", random(&mut rng, &[sizes.batch, width], 1.0))],
        net: cl,
        build: Box::new(|net, p, x| net.classifier(p, x[0])),
    });
    Ok(out)
}

/// Scalar probe `Σ w ⊙ out`, the gradients of every input when `grads`
/// is set, and the graph for parameter gradients.
fn probe(
    case: &Case,
    inputs: &[Tensor<f64>],
    seed: u64,
    grads: bool,
) -> Result<(f64, Pass<'static, f64>, Vec<Var>), ModelError> {
    let mut p = Pass::eval();
    let vars: Vec<Var> = inputs.iter().map(|t| p.graph.leaf(t.clone())).collect();
    let out = (case.build)(&case.net, &mut p, &vars)?;
    let shape = p.graph.shape(out).to_vec();
    let w = random(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x77), &shape, 1.0);
    let w = p.graph.input(w);
    let prod = p.graph.mul(out, w)?;
    let loss = p.graph.sum(prod)?;
    let value = p.graph.value(loss).data()[0];
    if grads {
        p.graph.backward(loss)?;
    }
    Ok((value, p, vars))
}

fn value(case: &Case, inputs: &[Tensor<f64>], seed: u64) -> Result<(f64, Vec<usize>), ModelError> {
    let (v, p, _) = probe(case, inputs, seed, false)?;
    Ok((v, p.graph.branch_pattern()))
}

fn spread(len: usize, samples: usize) -> Vec<usize> {
    if len <= samples {
        return (0..len).collect();
    }
    let mut v: Vec<usize> = (0..samples).map(|i| i * (len - 1) / (samples - 1).max(1)).collect();
    v.dedup();
    v
}

fn error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR / TOLERANCE)
}

fn check_case(mut case: Case, seed: u64, samples: usize, corrupt: bool) -> Result<OpCheck, ModelError> {
    let inputs: Vec<Tensor<f64>> = case.inputs.iter().map(|(_, t)| t.clone()).collect();
    let (_, p, vars) = probe(&case, &inputs, seed, true)?;
    let base = p.graph.branch_pattern();
    let skew = if corrupt { 1.01 } else { 1.0 };
    let mut input_grads: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            p.graph
                .grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.graph.value(v).numel()])
        })
        .collect();
    case.net.store.zero_grads();
    p.graph.accumulate_param_grads(&mut case.net.store);
    let mut param_grads: Vec<Vec<f64>> = case
        .params
        .iter()
        .map(|&id| case.net.store.get(id).grad.clone())
        .collect();
    for g in input_grads.iter_mut().chain(param_grads.iter_mut()) {
        g.iter_mut().for_each(|v| *v *= skew);
    }

    let mut report = OpCheck {
        op: case.op.to_string(),
        entries: 0,
        skipped: 0,
        max_error: 0.0,
        worst: String::new(),
        passed: true,
    };
    // A probe whose ±h evaluations switch a ReLU or max selection straddles
    // a kink; its central difference is not a derivative, so it is skipped.
    let record = |report: &mut OpCheck, name: String, a: f64, up: (f64, Vec<usize>), down: (f64, Vec<usize>)| {
        if up.1 != base || down.1 != base {
            report.skipped += 1;
            return;
        }
        let n = (up.0 - down.0) / (2.0 * STEP);
        let e = error(a, n);
        report.entries += 1;
        if e > report.max_error || !e.is_finite() {
            report.max_error = e;
            report.worst = format!("{name}: analytic {a:.6e}, numeric {n:.6e}");
        }
    };

    for (k, grad) in input_grads.iter().enumerate() {
        for j in spread(grad.len(), samples * 4) {
            let mut plus = inputs.clone();
            plus[k].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[j] -= STEP;
            let (up, down) = (value(&case, &plus, seed)?, value(&case, &minus, seed)?);
            record(&mut report, format!("{}[{j}]", case.inputs[k].0), grad[j], up, down);
        }
    }
    for (k, grad) in param_grads.iter().enumerate() {
        let id = case.params[k];
        let name = case.net.store.get(id).name.clone();
        for j in spread(grad.len(), samples) {
            let orig = case.net.store.get(id).value.data()[j];
            case.net.store.get_mut(id).value.data_mut()[j] = orig + STEP;
            let up = value(&case, &inputs, seed)?;
            case.net.store.get_mut(id).value.data_mut()[j] = orig - STEP;
            let down = value(&case, &inputs, seed)?;
            case.net.store.get_mut(id).value.data_mut()[j] = orig;
            record(&mut report, format!("{name}[{j}]"), grad[j], up, down);
        }
    }
    report.passed = report.max_error < TOLERANCE && report.entries > 0;
    Ok(report)
}

/// Runs every op in [`OPS`]. `corrupt` names an op whose analytic
/// gradient is skewed by 1%, to exercise the failure path.
pub fn run(seed: u64, sizes: GradcheckSizes, corrupt: Option<&str>) -> Result<GradcheckReport, ModelError> {
    if sizes.faces < 2 || sizes.batch < 1 || sizes.samples < 1 {
        return Err(ModelError::Config(
            "gradcheck needs at least 2 faces, 1 shape and 1 sample".into(),
        ));
    }
    let start = Instant::now();
    let checks = cases(seed, sizes)?
        .into_iter()
        .map(|c| {
            let bad = corrupt == Some(c.op);
            check_case(c, seed, sizes.samples, bad)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GradcheckReport {
        seed,
        tolerance: TOLERANCE,
        checks,
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}
