use rand::Rng;

use crate::tensor::{BatchStats, Graph, ParamId, ParamKind, ParamStore, Scalar, Tensor, TensorError, Var};

/// Running statistics produced by a training-mode batch norm; applied to
/// the stored buffers by [`super::MeshNet::apply_bn_updates`].
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<T>,
}

/// One forward pass: the tape plus mode flags and the batch-norm updates it
/// produced.
pub struct Pass<'r, T> {
    pub graph: Graph<T>,
    training: bool,
    rng: Option<&'r mut dyn rand::RngCore>,
    pub(crate) bn_updates: Vec<BnUpdate<T>>,
}

impl<'r, T: Scalar> Pass<'r, T> {
    /// Inference: batch norm uses running statistics, dropout is inert.
    pub fn eval() -> Self {
        Self {
            graph: Graph::new(),
            training: false,
            rng: None,
            bn_updates: Vec::new(),
        }
    }

    /// Training: batch statistics, dropout drawn from `rng`.
    pub fn train(rng: &'r mut dyn rand::RngCore) -> Self {
        Self {
            graph: Graph::new(),
            training: true,
            rng: Some(rng),
            bn_updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates)
    }

    pub(crate) fn dropout(&mut self, x: Var, p: f64) -> Result<Var, TensorError> {
        match (&mut self.rng, self.training) {
            (Some(rng), true) => self.graph.dropout(x, p, true, &mut **rng),
            _ => {
                let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
                self.graph.dropout(x, p, false, &mut unused)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Bn {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

/// Shared per-row linear layer, optionally followed by batch norm and ReLU.
#[derive(Clone, Debug)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    bn: Option<Bn>,
    relu: bool,
}

pub(crate) fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

impl Dense {
    /// Registers `{name}.weight`, `{name}.bias` and, with `bn`, the affine
    /// `{name}.bn.gamma/beta` plus running-statistic buffers.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bn: bool,
        relu: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[fan_in, fan_out], fan_in, rng),
            ParamKind::Trainable,
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]), ParamKind::Trainable);
        let bn = bn.then(|| Bn {
            gamma: store.add(
                format!("{name}.bn.gamma"),
                Tensor::filled(&[fan_out], T::one()),
                ParamKind::Trainable,
            ),
            beta: store.add(
                format!("{name}.bn.beta"),
                Tensor::zeros(&[fan_out]),
                ParamKind::Trainable,
            ),
            mean: store.add(
                format!("{name}.bn.running_mean"),
                Tensor::zeros(&[fan_out]),
                ParamKind::Buffer,
            ),
            var: store.add(
                format!("{name}.bn.running_var"),
                Tensor::filled(&[fan_out], T::one()),
                ParamKind::Buffer,
            ),
        });
        Self { w, b, bn, relu }
    }

    pub fn apply<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        p: &mut Pass<'_, T>,
        x: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let g = &mut p.graph;
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        let mut y = g.add_bias(y, b)?;
        if let Some(bn) = self.bn {
            y = bn_forward(store, p, bn, y, eps)?;
        }
        if self.relu {
            y = p.graph.relu(y)?;
        }
        Ok(y)
    }
}

fn bn_forward<T: Scalar>(
    store: &ParamStore<T>,
    p: &mut Pass<'_, T>,
    bn: Bn,
    x: Var,
    eps: f64,
) -> Result<Var, TensorError> {
    let g = &mut p.graph;
    let gamma = g.param(store, bn.gamma);
    let beta = g.param(store, bn.beta);
    if p.training {
        let (y, stats) = g.batch_norm_train(x, gamma, beta, eps)?;
        p.bn_updates.push(BnUpdate {
            mean: bn.mean,
            var: bn.var,
            stats,
        });
        Ok(y)
    } else {
        g.batch_norm_eval(
            x,
            gamma,
            beta,
            store.value(bn.mean).data(),
            store.value(bn.var).data(),
            eps,
        )
    }
}

/// Stack of [`Dense`] layers, all with batch norm (when enabled) and ReLU.
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        widths: &[usize],
        bn: bool,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = fan_in;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Dense::new(store, &format!("{name}.{i}"), prev, w, bn, true, rng));
            prev = w;
        }
        Self { layers }
    }

    pub fn apply<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        p: &mut Pass<'_, T>,
        mut x: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        for l in &self.layers {
            x = l.apply(store, p, x, eps)?;
        }
        Ok(x)
    }
}
