//! Closed-form parameter and multiply-accumulate counts, computed from the
//! configuration alone.

use super::config::{Aggregation, ModelConfig};

/// Reference parameter count the report is compared against, in scalars.
pub const REFERENCE_PARAMS: usize = 4_250_000;

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ModuleCount {
    /// Parameter-name prefix of the module.
    pub name: String,
    pub params: usize,
    /// Multiply-accumulates per sample.
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ParamReport {
    pub faces: usize,
    pub modules: Vec<ModuleCount>,
}

impl ParamReport {
    pub fn total(&self) -> usize {
        self.modules.iter().map(|m| m.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.modules.iter().map(|m| m.macs).sum()
    }

    pub fn module(&self, name: &str) -> Option<&ModuleCount> {
        self.modules.iter().find(|m| m.name == name)
    }
}

fn dense(fan_in: usize, fan_out: usize, bn: bool) -> usize {
    fan_in * fan_out + fan_out + if bn { 2 * fan_out } else { 0 }
}

fn chain(fan_in: usize, widths: &[usize], bn: bool) -> (usize, u64) {
    let mut prev = fan_in;
    let (mut params, mut macs) = (0, 0u64);
    for &w in widths {
        params += dense(prev, w, bn);
        macs += (prev * w) as u64;
        prev = w;
    }
    (params, macs)
}

/// Per-module trainable parameters (weights, biases, batch-norm affine
/// terms, kernel angles) and MACs for a sample of `faces` faces.
pub fn param_report(c: &ModelConfig, faces: usize) -> ParamReport {
    let bn = c.batch_norm;
    let f = faces as u64;
    let mut modules = Vec::new();
    let mut push = |name: String, params: usize, macs: u64| modules.push(ModuleCount { name, params, macs });

    if c.use_spatial {
        let (p, m) = chain(3, &c.spatial_widths, bn);
        push("spatial".into(), p, m * f);
    }
    if c.use_frc {
        let (pf, mf) = chain(6, &[c.frc_k1, c.frc_k1], bn);
        let (pg, mg) = chain(c.frc_k1, &[c.frc_k2, c.frc_k2], bn);
        push("frc".into(), pf + pg, (3 * mf + mg) * f);
    }
    if c.use_fkc {
        let (m, v) = (c.fkc_kernels, c.fkc_vectors_per_kernel);
        // one squared distance (3 MACs) per (neighbourhood normal, kernel vector) pair
        push("fkc".into(), m * v * 2, (4 * m * v * 3) as u64 * f);
    }
    if c.use_mesh_conv {
        for (k, b) in c.mesh_conv.iter().enumerate() {
            let mut p = dense(b.in1 + b.in2, b.out1, bn);
            let mut m = ((b.in1 + b.in2) * b.out1) as u64;
            if b.in2 > 0 {
                if c.aggregation == Aggregation::Concat {
                    p += dense(2 * b.in2, b.in2, bn);
                    m += (3 * 2 * b.in2 * b.in2) as u64;
                }
                p += dense(b.in2, b.out2, bn);
                m += (b.in2 * b.out2) as u64;
            }
            push(format!("mesh_conv.{k}"), p, m * f);
        }
    }
    let fin = c.fusion_input_width();
    push(
        "fusion".into(),
        dense(fin, c.fusion_width, bn),
        (fin * c.fusion_width) as u64 * f,
    );
    let (mut p, mut m) = chain(c.fusion_width, &c.classifier_widths, bn);
    let last_in = *c.classifier_widths.last().unwrap_or(&c.fusion_width);
    p += dense(last_in, c.num_classes, false);
    m += (last_in * c.num_classes) as u64;
    push("classifier".into(), p, m);
    ParamReport { faces, modules }
}

pub fn param_count(c: &ModelConfig) -> usize {
    param_report(c, 0).total()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counts() {
        let c = ModelConfig::standard(40);
        let r = param_report(&c, 1024);
        // 3·64 + 64 + 64·64 + 64 = 4416 weights and biases, 2·(64+64) = 256 affine
        assert_eq!(r.module("spatial").unwrap().params, 4416 + 256);
        assert_eq!(r.module("fkc").unwrap().params, 512);
        assert_eq!(
            r.module("frc").unwrap().params,
            (224 + 64) + (1056 + 64) + (2112 + 128) + (4160 + 128)
        );
        assert_eq!(r.module("fusion").unwrap().params, 768 * 1024 + 1024 + 2048);
    }

    #[test]
    fn ablating_fkc_removes_only_fkc_terms() {
        let full = ModelConfig::standard(40);
        let no_fkc = full.clone().with_ablation(super::super::Ablation::NoFkc);
        // in2 of block 0 drops by M = 64: combine loses 64·256, pair loses
        // (2·131·131 + 131 + 262) − (2·67·67 + 67 + 134), fuse loses 64·256
        let pair = |s: usize| 2 * s * s + s + 2 * s;
        let expected = 512 + 64 * 256 + (pair(131) - pair(67)) + 64 * 256;
        assert_eq!(param_count(&full) - param_count(&no_fkc), expected);
    }
}
