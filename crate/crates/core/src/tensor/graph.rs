use rand::Rng;

use super::{axis_extents, ParamId, ParamKind, ParamStore, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-channel statistics of a training-mode batch norm, used by the caller
/// to update running estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance (`n - 1` denominator; equals the biased one when n = 1).
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Gather {
        x: Var,
        axis: usize,
        indices: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    ReduceMean {
        x: Var,
        axis: usize,
    },
    ReduceMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu {
        x: Var,
    },
    Exp {
        x: Var,
    },
    Sin {
        x: Var,
    },
    Cos {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    KernelCorrelation {
        sources: Var,
        kernels: Var,
        sigma: T,
    },
}

impl<T> Op<T> {
    #[cfg_attr(not(debug_assertions), allow(dead_code))]
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Concat { .. } => "concat",
            Op::Gather { .. } => "gather",
            Op::Reshape { .. } => "reshape",
            Op::Sum { .. } => "sum",
            Op::ReduceMean { .. } => "reduce_mean",
            Op::ReduceMax { .. } => "reduce_max",
            Op::Relu { .. } => "relu",
            Op::Exp { .. } => "exp",
            Op::Sin { .. } => "sin",
            Op::Cos { .. } => "cos",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Dropout { .. } => "dropout",
            Op::BatchNorm { .. } => "batch_norm",
            Op::KernelCorrelation { .. } => "kernel_correlation",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records the forward pass so that [`Graph::backward`] can replay it in
/// reverse. A graph is single-use: build, backward once, drop.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var, TensorError> {
        #[cfg(debug_assertions)]
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> Result<&Node<T>, TensorError> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant: never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Brings a stored parameter onto the tape. Buffers enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let v = match p.kind {
            ParamKind::Trainable => self.leaf(p.value.clone()),
            ParamKind::Buffer => self.input(p.value.clone()),
        };
        if p.kind == ParamKind::Trainable {
            self.params.push((id, v));
        }
        v
    }

    /// Copy of `v` cut from the tape.
    pub fn detach(&mut self, v: Var) -> Result<Var, TensorError> {
        let value = self.node(v)?.value.clone();
        Ok(self.input(value))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// ReLU input signs and max selections, in recording order. Two
    /// evaluations with equal patterns lie on the same smooth piece.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => out.extend(self.nodes[x.0].value.data().iter().map(|&v| (v > T::zero()) as usize)),
                Op::ReduceMax { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    pub fn param_vars(&self) -> &[(ParamId, Var)] {
        &self.params
    }

    /// Adds the gradients of every parameter leaf into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for &(id, v) in &self.params {
            if let Some(g) = self.grad(v) {
                for (dst, &src) in store.get_mut(id).grad.iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }

    // ---- forward ops -------------------------------------------------

    /// `[n,k] × [k,m] → [n,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.nodes[a.0].value.data(),
            false,
            self.nodes[b.0].value.data(),
            false,
            &mut out,
            false,
        );
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, rg)
    }

    /// Adds a `[m]` bias to every row of an `[n,m]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (sx, sb) = (self.node(x)?.value.shape(), self.node(bias)?.value.shape());
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(mismatch("add_bias", sx, sb));
        }
        let shape = sx.to_vec();
        let b = self.nodes[bias.0].value.data();
        let out: Vec<T> = self.nodes[x.0]
            .value
            .data()
            .chunks_exact(shape[1])
            .flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c))
            .collect();
        let rg = self.rg(&[x, bias]);
        self.push(Tensor::new(shape, out)?, Op::AddBias { x, bias }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add { a, b }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul { a, b }, rg)
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, TensorError> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// Scalar-with-tensor multiplication.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        let factor = T::of(factor);
        let out = self.map("scale", x, |v| v * factor)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale { x, factor }, rg)
    }

    fn map(&self, _op: &'static str, x: Var, f: impl Fn(T) -> T) -> Result<Tensor<T>, TensorError> {
        let t = &self.node(x)?.value;
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.map("relu", x, |v| if v > T::zero() { v } else { T::zero() })?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.map("exp", x, |v| v.exp())?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Exp { x }, rg)
    }

    pub fn sin(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.map("sin", x, |v| v.sin())?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Sin { x }, rg)
    }

    pub fn cos(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.map("cos", x, |v| v.cos())?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Cos { x }, rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.node(*first)?.value.shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {}", base.len()),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.node(v)?.value.shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = &self.nodes[v.0].value;
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let rg = self.rg(inputs);
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Selects slices `indices` along `axis`; the output replaces that
    /// dimension by `indices.len()`.
    pub fn gather(&mut self, x: Var, axis: usize, indices: Vec<usize>) -> Result<Var, TensorError> {
        let shape = self.node(x)?.value.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidArgument {
                op: "gather",
                msg: format!("axis {axis} out of range for rank {}", shape.len()),
            });
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather",
                index: bad,
                len,
            });
        }
        let src = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in &indices {
                let start = (o * len + i) * inner;
                out.extend_from_slice(&src[start..start + inner]);
            }
        }
        let mut oshape = shape;
        oshape[axis] = indices.len();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(oshape, out)?, Op::Gather { x, axis, indices }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.node(x)?.value.clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Reshape { x }, rg)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.node(x)?.value.data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Mean over `axis` (removed from the shape). Each mean is accumulated
    /// in ascending value order, so it does not depend on how the reduced
    /// elements are ordered.
    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.reduce_shape("reduce_mean", x, axis)?;
        let t = &self.nodes[x.0].value;
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        if len == 0 {
            return Err(TensorError::InvalidArgument {
                op: "reduce_mean",
                msg: "empty axis".into(),
            });
        }
        let src = t.data();
        let n = T::of(len as f64);
        let mut out = Vec::with_capacity(outer * inner);
        let mut buf = Vec::with_capacity(len);
        for o in 0..outer {
            for i in 0..inner {
                buf.clear();
                buf.extend((0..len).map(|l| src[(o * len + l) * inner + i]));
                buf.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                let s: T = buf.iter().copied().sum();
                out.push(s / n);
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out)?, Op::ReduceMean { x, axis }, rg)
    }

    /// Max over `axis`. Gradient goes to the first maximal element.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.reduce_shape("reduce_max", x, axis)?;
        let t = &self.nodes[x.0].value;
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        if len == 0 {
            return Err(TensorError::InvalidArgument {
                op: "reduce_max",
                msg: "empty axis".into(),
            });
        }
        let src = t.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = (o * len) * inner + i;
                for l in 1..len {
                    let idx = (o * len + l) * inner + i;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out)?, Op::ReduceMax { x, argmax }, rg)
    }

    fn reduce_shape(&self, op: &'static str, x: Var, axis: usize) -> Result<Vec<usize>, TensorError> {
        let shape = self.node(x)?.value.shape();
        if axis >= shape.len() {
            return Err(TensorError::InvalidArgument {
                op,
                msg: format!("axis {axis} out of range for rank {}", shape.len()),
            });
        }
        let mut s = shape.to_vec();
        s.remove(axis);
        Ok(s)
    }

    /// Mean softmax cross-entropy of `[B,C]` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let t = &self.node(logits)?.value;
        let shape = t.shape();
        if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: shape.to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let classes = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::IndexOutOfRange {
                op: "softmax_cross_entropy",
                index: bad,
                len: classes,
            });
        }
        let mut probs = Vec::with_capacity(t.numel());
        let mut loss = T::zero();
        for (row, &label) in t.data().chunks_exact(classes).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let z: T = exps.iter().copied().sum();
            loss += z.ln() + max - row[label];
            probs.extend(exps.into_iter().map(|e| e / z));
        }
        let loss = loss / T::of(labels.len() as f64);
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Inverted dropout. In eval mode this returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                msg: format!("drop probability {p} outside [0, 1)"),
            });
        }
        self.node(x)?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Dropout { x, mask }, rg)
    }

    /// Batch norm over the rows of an `[N,C]` matrix using batch statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats<T>), TensorError> {
        let (n, c) = self.bn_check(x, gamma, beta)?;
        let src = self.nodes[x.0].value.data();
        let nt = T::of(n as f64);
        let mut mean = vec![T::zero(); c];
        for row in src.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nt);
        let mut var = vec![T::zero(); c];
        for row in src.chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let biased: Vec<T> = var.iter().map(|&s| s / nt).collect();
        let unbiased: Vec<T> = if n > 1 {
            var.iter().map(|&s| s / T::of((n - 1) as f64)).collect()
        } else {
            biased.clone()
        };
        let inv_std: Vec<T> = biased.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, inv_std, true)?;
        Ok((out, BatchStats { mean, var: unbiased }))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var, TensorError> {
        let (_, c) = self.bn_check(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(mismatch("batch_norm", &[c], &[mean.len(), var.len()]));
        }
        let inv_std = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        self.bn_apply(x, gamma, beta, mean, inv_std, false)
    }

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize), TensorError> {
        let sx = self.node(x)?.value.shape();
        let (sg, sb) = (self.node(gamma)?.value.shape(), self.node(beta)?.value.shape());
        if sx.len() != 2 || sg != [sx[1]] || sb != [sx[1]] {
            return Err(mismatch("batch_norm", sx, sg));
        }
        if sx[0] == 0 {
            return Err(TensorError::InvalidArgument {
                op: "batch_norm",
                msg: "batch dimension must be at least 1".into(),
            });
        }
        Ok((sx[0], sx[1]))
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: Vec<T>,
        training: bool,
    ) -> Result<Var, TensorError> {
        let t = &self.nodes[x.0].value;
        let c = t.shape()[1];
        let g = self.nodes[gamma.0].value.data();
        let b = self.nodes[beta.0].value.data();
        let mut xhat = Vec::with_capacity(t.numel());
        let mut out = Vec::with_capacity(t.numel());
        for row in t.data().chunks_exact(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            rg,
        )
    }

    /// Gaussian kernel correlation between source vector sets `[R,S,D]` and
    /// kernel vector sets `[M,V,D]`:
    /// `out[r,k] = mean_{s,v} exp(-|src[r,s] - ker[k,v]|² / (2σ²))`, shape `[R,M]`.
    pub fn kernel_correlation(&mut self, sources: Var, kernels: Var, sigma: f64) -> Result<Var, TensorError> {
        let (ss, sk) = (self.node(sources)?.value.shape(), self.node(kernels)?.value.shape());
        if ss.len() != 3 || sk.len() != 3 || ss[2] != sk[2] {
            return Err(mismatch("kernel_correlation", ss, sk));
        }
        if !(sigma > 0.0) {
            return Err(TensorError::InvalidArgument {
                op: "kernel_correlation",
                msg: format!("sigma must be positive, got {sigma}"),
            });
        }
        let (r, s, d) = (ss[0], ss[1], ss[2]);
        let (m, v) = (sk[0], sk[1]);
        let src = self.nodes[sources.0].value.data();
        let ker = self.nodes[kernels.0].value.data();
        let scale = T::of(-1.0 / (2.0 * sigma * sigma));
        let norm = T::of(1.0 / (s * v) as f64);
        let mut out = Vec::with_capacity(r * m);
        for ri in 0..r {
            let set = &src[ri * s * d..(ri + 1) * s * d];
            for ki in 0..m {
                let kset = &ker[ki * v * d..(ki + 1) * v * d];
                let mut acc = T::zero();
                for n in set.chunks_exact(d) {
                    for q in kset.chunks_exact(d) {
                        acc += (sq_dist(n, q) * scale).exp();
                    }
                }
                out.push(acc * norm);
            }
        }
        let rg = self.rg(&[sources, kernels]);
        self.push(
            Tensor::new(vec![r, m], out)?,
            Op::KernelCorrelation {
                sources,
                kernels,
                sigma: T::of(sigma),
            },
            rg,
        )
    }

    // ---- backward ----------------------------------------------------

    /// Populates gradients for every node that requires them. The graph can
    /// only be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let node = self.node(loss)?;
        if node.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(node.value.shape().to_vec()));
        }
        let requires_grad = node.requires_grad;
        self.consumed = true;
        if !requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Accumulate into the gradient buffer of `v`, allocating it on first use.
fn grad_buf<'a, T: Scalar>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

fn add_into<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
    if let Some(buf) = grad_buf(nodes, grads, v) {
        for (d, &s) in buf.iter_mut().zip(g) {
            *d += s;
        }
    }
}

fn propagate<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
            let n = nodes[b.0].value.shape()[1];
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            if let Some(da) = grad_buf(nodes, grads, *a) {
                T::gemm(m, n, k, g, false, bv, true, da, true);
            }
            if let Some(db) = grad_buf(nodes, grads, *b) {
                T::gemm(k, m, n, av, true, g, false, db, true);
            }
        }
        Op::AddBias { x, bias } => {
            add_into(nodes, grads, *x, g);
            let c = nodes[bias.0].value.numel();
            if let Some(db) = grad_buf(nodes, grads, *bias) {
                for row in g.chunks_exact(c) {
                    for (d, &s) in db.iter_mut().zip(row) {
                        *d += s;
                    }
                }
            }
        }
        Op::Add { a, b } => {
            add_into(nodes, grads, *a, g);
            add_into(nodes, grads, *b, g);
        }
        Op::Mul { a, b } => {
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            if let Some(da) = grad_buf(nodes, grads, *a) {
                for ((d, &s), &o) in da.iter_mut().zip(g).zip(bv) {
                    *d += s * o;
                }
            }
            if let Some(db) = grad_buf(nodes, grads, *b) {
                for ((d, &s), &o) in db.iter_mut().zip(g).zip(av) {
                    *d += s * o;
                }
            }
        }
        Op::Scale { x, factor } => {
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                for (d, &s) in dx.iter_mut().zip(g) {
                    *d += s * *factor;
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = axis_extents(node.value.shape(), *axis);
            let mut offset = 0;
            for v in inputs {
                let len = nodes[v.0].value.shape()[*axis];
                if let Some(dv) = grad_buf(nodes, grads, *v) {
                    let block = len * inner;
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..][..block];
                        for (d, &s) in dv[o * block..(o + 1) * block].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Gather { x, axis, indices } => {
            let (outer, len, inner) = axis_extents(nodes[x.0].value.shape(), *axis);
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                let t = indices.len();
                for o in 0..outer {
                    for (j, &idx) in indices.iter().enumerate() {
                        let src = &g[(o * t + j) * inner..][..inner];
                        let dst = &mut dx[(o * len + idx) * inner..][..inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
        Op::Reshape { x } => add_into(nodes, grads, *x, g),
        Op::Sum { x } => {
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::ReduceMean { x, axis } => {
            let (outer, len, inner) = axis_extents(nodes[x.0].value.shape(), *axis);
            let n = T::of(len as f64);
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            dx[(o * len + l) * inner + i] += g[o * inner + i] / n;
                        }
                    }
                }
            }
        }
        Op::ReduceMax { x, argmax } => {
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                for (&idx, &s) in argmax.iter().zip(g) {
                    dx[idx] += s;
                }
            }
        }
        Op::Relu { x } => {
            let out = node.value.data();
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                for ((d, &s), &o) in dx.iter_mut().zip(g).zip(out) {
                    if o > T::zero() {
                        *d += s;
                    }
                }
            }
        }
        Op::Exp { x } => {
            let out = node.value.data();
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                for ((d, &s), &o) in dx.iter_mut().zip(g).zip(out) {
                    *d += s * o;
                }
            }
        }
        Op::Sin { x } => {
            let xv = nodes[x.0].value.data();
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                for ((d, &s), &v) in dx.iter_mut().zip(g).zip(xv) {
                    *d += s * v.cos();
                }
            }
        }
        Op::Cos { x } => {
            let xv = nodes[x.0].value.data();
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                for ((d, &s), &v) in dx.iter_mut().zip(g).zip(xv) {
                    *d -= s * v.sin();
                }
            }
        }
        Op::SoftmaxCrossEntropy { logits, labels, probs } => {
            let classes = nodes[logits.0].value.shape()[1];
            let scale = g[0] / T::of(labels.len() as f64);
            if let Some(dl) = grad_buf(nodes, grads, *logits) {
                for (b, &label) in labels.iter().enumerate() {
                    for c in 0..classes {
                        let onehot = if c == label { T::one() } else { T::zero() };
                        dl[b * classes + c] += scale * (probs[b * classes + c] - onehot);
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                for ((d, &s), &m) in dx.iter_mut().zip(g).zip(mask) {
                    *d += s * m;
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            training,
        } => {
            let c = inv_std.len();
            let n = g.len() / c;
            let gv = nodes[gamma.0].value.data();
            let mut sum_dy = vec![T::zero(); c];
            let mut sum_dy_xhat = vec![T::zero(); c];
            for (row_g, row_h) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                for j in 0..c {
                    sum_dy[j] += row_g[j];
                    sum_dy_xhat[j] += row_g[j] * row_h[j];
                }
            }
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                let nt = T::of(n as f64);
                for (r, (row_g, row_h)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
                    for j in 0..c {
                        let k = gv[j] * inv_std[j];
                        dx[r * c + j] += if *training {
                            k * (row_g[j] - sum_dy[j] / nt - row_h[j] * sum_dy_xhat[j] / nt)
                        } else {
                            k * row_g[j]
                        };
                    }
                }
            }
            if let Some(dg) = grad_buf(nodes, grads, *gamma) {
                for (d, &s) in dg.iter_mut().zip(&sum_dy_xhat) {
                    *d += s;
                }
            }
            if let Some(db) = grad_buf(nodes, grads, *beta) {
                for (d, &s) in db.iter_mut().zip(&sum_dy) {
                    *d += s;
                }
            }
        }
        Op::KernelCorrelation {
            sources,
            kernels,
            sigma,
        } => {
            let ss = nodes[sources.0].value.shape();
            let sk = nodes[kernels.0].value.shape();
            let (r, s, d) = (ss[0], ss[1], ss[2]);
            let (m, v) = (sk[0], sk[1]);
            let src = nodes[sources.0].value.data();
            let ker = nodes[kernels.0].value.data();
            let inv_var = T::one() / (*sigma * *sigma);
            let scale = -inv_var / T::of(2.0);
            let norm = T::of(1.0 / (s * v) as f64);
            let mut dsrc = vec![T::zero(); if nodes[sources.0].requires_grad { src.len() } else { 0 }];
            let mut dker = vec![T::zero(); if nodes[kernels.0].requires_grad { ker.len() } else { 0 }];
            for ri in 0..r {
                for ki in 0..m {
                    let coef = g[ri * m + ki] * norm * inv_var;
                    for si in 0..s {
                        let a = (ri * s + si) * d;
                        let nvec = &src[a..a + d];
                        for vi in 0..v {
                            let b = (ki * v + vi) * d;
                            let q = &ker[b..b + d];
                            let w = coef * (sq_dist(nvec, q) * scale).exp();
                            for t in 0..d {
                                let diff = q[t] - nvec[t];
                                if !dsrc.is_empty() {
                                    dsrc[a + t] += w * diff;
                                }
                                if !dker.is_empty() {
                                    dker[b + t] -= w * diff;
                                }
                            }
                        }
                    }
                }
            }
            if !dsrc.is_empty() {
                add_into(nodes, grads, *sources, &dsrc);
            }
            if !dker.is_empty() {
                add_into(nodes, grads, *kernels, &dker);
            }
        }
    }
}
