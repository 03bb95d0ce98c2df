use serde::{Deserialize, Serialize};

use super::{ParamKind, ParamStore, Scalar, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

/// One SGD update of a single parameter buffer:
/// `v ← momentum·v + grad + weight_decay·param`, `param ← param − lr·v`.
pub fn sgd_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    cfg: &SgdConfig,
) -> Result<(), TensorError> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(TensorError::ShapeMismatch {
            op: "sgd_step",
            lhs: vec![param.len()],
            rhs: vec![grad.len(), velocity.len()],
        });
    }
    let (lr, mom, wd) = (T::of(cfg.lr), T::of(cfg.momentum), T::of(cfg.weight_decay));
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mom * *v + g + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// SGD with momentum and weight decay over every trainable entry of a store.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig, store: &ParamStore<T>) -> Self {
        let velocity = store.iter().map(|(_, p)| vec![T::zero(); p.value.numel()]).collect();
        Self { config, velocity }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.velocity
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<(), TensorError> {
        if self.velocity.len() != store.len() {
            return Err(TensorError::InvalidArgument {
                op: "sgd_step",
                msg: "optimizer state does not match parameter store".into(),
            });
        }
        for (p, v) in store.iter_mut().zip(&mut self.velocity) {
            if p.kind == ParamKind::Trainable {
                sgd_step(p.value.data_mut(), &p.grad, v, &self.config)?;
            }
        }
        Ok(())
    }
}
