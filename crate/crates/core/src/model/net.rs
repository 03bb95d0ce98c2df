use rand::Rng;

use super::config::{Aggregation, ModelConfig};
use super::layers::{BnUpdate, Dense, Mlp, Pass};
use super::ModelError;
use crate::preprocess::FaceSet;
use crate::tensor::{
    Checkpoint, CheckpointError, NamedTensor, OptimizerSection, ParamId, ParamKind, ParamStore, Scalar, Sgd, Tensor,
    TensorError, Var,
};

/// A batch of equally sized face sets laid out row-wise: face `j` of shape
/// `b` is row `b·faces + j`. Neighbour indices are rewritten to rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceBatch {
    pub batch: usize,
    pub faces: usize,
    pub centers: Vec<f32>,
    pub corners: Vec<f32>,
    pub normals: Vec<f32>,
    pub neighbors: Vec<[usize; 3]>,
}

impl FaceBatch {
    pub fn new(sets: &[&FaceSet]) -> Result<Self, ModelError> {
        let first = sets.first().ok_or_else(|| ModelError::Batch("empty batch".into()))?;
        let f = first.len();
        if let Some(bad) = sets.iter().find(|s| s.len() != f) {
            return Err(ModelError::Batch(format!(
                "face sets in a batch must share a face count ({} vs {})",
                f,
                bad.len()
            )));
        }
        let n = f * sets.len();
        let mut b = Self {
            batch: sets.len(),
            faces: f,
            centers: Vec::with_capacity(n * 3),
            corners: Vec::with_capacity(n * 9),
            normals: Vec::with_capacity(n * 3),
            neighbors: Vec::with_capacity(n),
        };
        for (k, s) in sets.iter().enumerate() {
            b.centers.extend(s.centers().iter().flatten());
            b.corners.extend(s.corners().iter().flatten());
            b.normals.extend(s.normals().iter().flatten());
            b.neighbors.extend(s.neighbors().iter().map(|nb| nb.map(|j| k * f + j)));
        }
        Ok(b)
    }

    pub fn rows(&self) -> usize {
        self.batch * self.faces
    }
}

fn input<T: Scalar>(p: &mut Pass<'_, T>, data: &[f32], cols: usize) -> Result<Var, TensorError> {
    let t = Tensor::new(
        vec![data.len() / cols, cols],
        data.iter().map(|&v| T::of(v as f64)).collect(),
    )?;
    Ok(p.graph.input(t))
}

/// Handles into the tape for one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[B, C]`
    pub logits: Var,
    /// `[B, fusion_width]`, max-pooled over faces.
    pub global: Var,
    /// Per-face face-rotate-conv output `[B·F, K2]`.
    pub frc: Option<Var>,
    /// Per-face kernel correlation `[B·F, M]`.
    pub fkc: Option<Var>,
}

#[derive(Clone, Debug)]
struct Block {
    combine: Dense,
    pair: Option<Dense>,
    fuse: Option<Dense>,
}

/// MeshNet with its parameters.
#[derive(Clone, Debug)]
pub struct MeshNet<T> {
    config: ModelConfig,
    pub store: ParamStore<T>,
    spatial: Option<Mlp>,
    frc: Option<(Mlp, Mlp)>,
    fkc_angles: Option<ParamId>,
    blocks: Vec<Block>,
    fusion: Dense,
    classifier: Vec<Dense>,
}

impl<T: Scalar> MeshNet<T> {
    /// Builds and initializes the network: Kaiming-uniform weights, zero
    /// biases, θ ~ U[0, π], φ ~ U[0, 2π).
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let c = &config;
        let bn = c.batch_norm;
        let mut store = ParamStore::new();
        let spatial = c
            .use_spatial
            .then(|| Mlp::new(&mut store, "spatial", 3, &c.spatial_widths, bn, rng));
        let frc = c.use_frc.then(|| {
            let f = Mlp::new(&mut store, "frc.f", 6, &[c.frc_k1, c.frc_k1], bn, rng);
            let g = Mlp::new(&mut store, "frc.g", c.frc_k1, &[c.frc_k2, c.frc_k2], bn, rng);
            (f, g)
        });
        let fkc_angles = c.use_fkc.then(|| {
            let (m, v) = (c.fkc_kernels, c.fkc_vectors_per_kernel);
            let mut data = Vec::with_capacity(m * v * 2);
            for _ in 0..m * v {
                data.push(T::of(rng.random_range(0.0..=std::f64::consts::PI)));
                data.push(T::of(rng.random_range(0.0..2.0 * std::f64::consts::PI)));
            }
            store.add(
                "fkc.angles",
                Tensor::new(vec![m, v, 2], data).expect("angle shape"),
                ParamKind::Trainable,
            )
        });
        let mut blocks = Vec::new();
        if c.use_mesh_conv {
            for (k, w) in c.mesh_conv.iter().enumerate() {
                let name = format!("mesh_conv.{k}");
                let (pair, fuse) = if w.in2 == 0 {
                    (None, None)
                } else {
                    let pair = (c.aggregation == Aggregation::Concat)
                        .then(|| Dense::new(&mut store, &format!("{name}.pair"), 2 * w.in2, w.in2, bn, true, rng));
                    let fuse = Dense::new(&mut store, &format!("{name}.fuse"), w.in2, w.out2, bn, true, rng);
                    (pair, Some(fuse))
                };
                let combine = Dense::new(
                    &mut store,
                    &format!("{name}.combine"),
                    w.in1 + w.in2,
                    w.out1,
                    bn,
                    true,
                    rng,
                );
                blocks.push(Block { combine, pair, fuse });
            }
        }
        let fusion = Dense::new(
            &mut store,
            "fusion",
            c.fusion_input_width(),
            c.fusion_width,
            bn,
            true,
            rng,
        );
        let mut classifier = Vec::new();
        let mut prev = c.fusion_width;
        for (i, &w) in c.classifier_widths.iter().enumerate() {
            classifier.push(Dense::new(
                &mut store,
                &format!("classifier.{i}"),
                prev,
                w,
                bn,
                true,
                rng,
            ));
            prev = w;
        }
        let last = c.classifier_widths.len();
        classifier.push(Dense::new(
            &mut store,
            &format!("classifier.{last}"),
            prev,
            c.num_classes,
            false,
            false,
            rng,
        ));
        Ok(Self {
            config,
            store,
            spatial,
            frc,
            fkc_angles,
            blocks,
            fusion,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fkc_angles(&self) -> Option<ParamId> {
        self.fkc_angles
    }

    fn eps(&self) -> f64 {
        self.config.bn_eps
    }

    /// Shared MLP on face centers: `[N,3] → [N, spatial_widths.last]`.
    pub fn spatial_descriptor(&self, p: &mut Pass<'_, T>, centers: Var) -> Result<Var, ModelError> {
        let mlp = self
            .spatial
            .as_ref()
            .ok_or_else(|| ModelError::Config("spatial descriptor is disabled".into()))?;
        Ok(mlp.apply(&self.store, p, centers, self.eps())?)
    }

    /// `g(mean(f(v1,v2), f(v2,v3), f(v3,v1)))` per face: `[N,9] → [N,K2]`.
    pub fn face_rotate_conv(&self, p: &mut Pass<'_, T>, corners: Var) -> Result<Var, ModelError> {
        let (f, g) = self
            .frc
            .as_ref()
            .ok_or_else(|| ModelError::Config("face rotate convolution is disabled".into()))?;
        let n = p.graph.shape(corners)[0];
        let pairs = p
            .graph
            .gather(corners, 1, vec![0, 1, 2, 3, 4, 5, 3, 4, 5, 6, 7, 8, 6, 7, 8, 0, 1, 2])?;
        let pairs = p.graph.reshape(pairs, &[3 * n, 6])?;
        let h = f.apply(&self.store, p, pairs, self.eps())?;
        let k1 = p.graph.shape(h)[1];
        let h = p.graph.reshape(h, &[n, 3, k1])?;
        let h = p.graph.reduce_mean(h, 1)?;
        Ok(g.apply(&self.store, p, h, self.eps())?)
    }

    /// Unit kernel vectors `(sinθ cosφ, sinθ sinφ, cosθ)`: `[M,V,3]`.
    pub fn kernel_vectors(&self, p: &mut Pass<'_, T>) -> Result<Var, ModelError> {
        let id = self
            .fkc_angles
            .ok_or_else(|| ModelError::Config("face kernel correlation is disabled".into()))?;
        let g = &mut p.graph;
        let angles = g.param(&self.store, id);
        let theta = g.gather(angles, 2, vec![0])?;
        let phi = g.gather(angles, 2, vec![1])?;
        let (st, ct) = (g.sin(theta)?, g.cos(theta)?);
        let (sp, cp) = (g.sin(phi)?, g.cos(phi)?);
        let x = g.mul(st, cp)?;
        let y = g.mul(st, sp)?;
        Ok(g.concat(&[x, y, ct], 2)?)
    }

    /// Kernel correlation of each face's neighbourhood normals (itself plus
    /// its three neighbour slots) with every kernel: `[N,3] → [N,M]`.
    pub fn face_kernel_correlation(
        &self,
        p: &mut Pass<'_, T>,
        normals: Var,
        neighbors: &[[usize; 3]],
        kernels: Var,
    ) -> Result<Var, ModelError> {
        let n = p.graph.shape(normals)[0];
        check_neighbors(neighbors, n)?;
        let idx = neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| [i, nb[0], nb[1], nb[2]])
            .collect();
        let sets = p.graph.gather(normals, 0, idx)?;
        let sets = p.graph.reshape(sets, &[n, 4, 3])?;
        Ok(p.graph.kernel_correlation(sets, kernels, self.config.fkc_sigma)?)
    }

    /// Mesh-conv block `k`. Returns the new spatial feature and, when there
    /// is a structural stream, the new structural feature.
    pub fn mesh_conv(
        &self,
        p: &mut Pass<'_, T>,
        k: usize,
        spatial: Option<Var>,
        structural: Option<Var>,
        neighbors: &[[usize; 3]],
    ) -> Result<(Var, Option<Var>), ModelError> {
        let block = self
            .blocks
            .get(k)
            .ok_or_else(|| ModelError::Config(format!("no mesh-conv block {k}")))?;
        let eps = self.eps();
        let Some(s) = structural else {
            // no structural stream: max-pool the spatial feature over the neighbourhood
            let x = spatial.ok_or_else(|| ModelError::Config("mesh conv needs an input feature".into()))?;
            let pooled = neighborhood_pool(p, x, neighbors, Aggregation::Max)?;
            return Ok((block.combine.apply(&self.store, p, pooled, eps)?, None));
        };
        let comb_in = match spatial {
            Some(x) => p.graph.concat(&[x, s], 1)?,
            None => s,
        };
        let new_spatial = block.combine.apply(&self.store, p, comb_in, eps)?;
        let aggregated = match (&block.pair, self.config.aggregation) {
            (Some(pair), Aggregation::Concat) => {
                let n = p.graph.shape(s)[0];
                check_neighbors(neighbors, n)?;
                let own = p.graph.gather(s, 0, (0..n).flat_map(|i| [i, i, i]).collect())?;
                let nbr = p.graph.gather(s, 0, neighbors.iter().flatten().copied().collect())?;
                let pairs = p.graph.concat(&[own, nbr], 1)?;
                let h = pair.apply(&self.store, p, pairs, eps)?;
                let c = p.graph.shape(h)[1];
                let h = p.graph.reshape(h, &[n, 3, c])?;
                p.graph.reduce_max(h, 1)?
            }
            (_, mode) => neighborhood_pool(p, s, neighbors, mode)?,
        };
        let fuse = block.fuse.as_ref().expect("fuse exists with a structural stream");
        let new_structural = fuse.apply(&self.store, p, aggregated, eps)?;
        Ok((new_spatial, Some(new_structural)))
    }

    /// Concatenates per-face features, applies the fusion MLP and max-pools
    /// over the faces of each shape: `[B·F, Σcᵢ] → [B, fusion_width]`.
    pub fn global_feature(&self, p: &mut Pass<'_, T>, per_face: &[Var], batch: usize) -> Result<Var, ModelError> {
        let x = if per_face.len() == 1 {
            per_face[0]
        } else {
            p.graph.concat(per_face, 1)?
        };
        let fused = self.fusion.apply(&self.store, p, x, self.eps())?;
        let (n, c) = (p.graph.shape(fused)[0], p.graph.shape(fused)[1]);
        if batch == 0 || n % batch != 0 {
            return Err(ModelError::Batch(format!("{n} rows do not split into {batch} shapes")));
        }
        let fused = p.graph.reshape(fused, &[batch, n / batch, c])?;
        Ok(p.graph.reduce_max(fused, 1)?)
    }

    /// Fully connected head with dropout before every layer but the first.
    pub fn classifier(&self, p: &mut Pass<'_, T>, global: Var) -> Result<Var, ModelError> {
        let mut x = global;
        for (i, layer) in self.classifier.iter().enumerate() {
            if i > 0 {
                x = p.dropout(x, self.config.dropout_p)?;
            }
            x = layer.apply(&self.store, p, x, self.eps())?;
        }
        Ok(x)
    }

    pub fn forward(&self, p: &mut Pass<'_, T>, batch: &FaceBatch) -> Result<ForwardOutput, ModelError> {
        let c = &self.config;
        let centers = input(p, &batch.centers, 3)?;
        let corners = input(p, &batch.corners, 9)?;
        let normals = input(p, &batch.normals, 3)?;

        let spatial = match c.use_spatial {
            true => Some(self.spatial_descriptor(p, centers)?),
            false => None,
        };
        let frc = match c.use_frc {
            true => Some(self.face_rotate_conv(p, corners)?),
            false => None,
        };
        let fkc = match c.use_fkc {
            true => {
                let kernels = self.kernel_vectors(p)?;
                Some(self.face_kernel_correlation(p, normals, &batch.neighbors, kernels)?)
            }
            false => None,
        };
        let structural = match c.has_structural() {
            true => {
                let parts: Vec<Var> = [frc, fkc, Some(normals)].into_iter().flatten().collect();
                Some(p.graph.concat(&parts, 1)?)
            }
            false => None,
        };

        let per_face: Vec<Var> = if c.use_mesh_conv {
            let (mut s, mut t) = (spatial, structural);
            let mut outs = Vec::with_capacity(self.blocks.len());
            for k in 0..self.blocks.len() {
                let (ns, nt) = self.mesh_conv(p, k, s, t, &batch.neighbors)?;
                outs.push(ns);
                s = Some(ns);
                t = nt;
            }
            outs
        } else {
            [spatial, structural].into_iter().flatten().collect()
        };
        let global = self.global_feature(p, &per_face, batch.batch)?;
        let logits = self.classifier(p, global)?;
        Ok(ForwardOutput {
            logits,
            global,
            frc,
            fkc,
        })
    }

    /// Folds training-mode batch statistics into the running buffers:
    /// `running ← m·running + (1−m)·batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        let m = T::of(self.config.bn_momentum);
        let one_m = T::of(1.0 - self.config.bn_momentum);
        for u in updates {
            for (id, stat) in [(u.mean, &u.stats.mean), (u.var, &u.stats.var)] {
                for (r, &s) in self.store.get_mut(id).value.data_mut().iter_mut().zip(stat) {
                    *r = m * *r + one_m * s;
                }
            }
        }
    }

    /// Serializes every parameter and buffer (as f32) plus, optionally, the
    /// optimizer velocities. `extra` is merged into the JSON metadata.
    pub fn to_checkpoint(&self, optimizer: Option<&Sgd<T>>, extra: serde_json::Value) -> Checkpoint {
        let mut meta = serde_json::json!({ "model": self.config });
        if let (Some(obj), serde_json::Value::Object(more)) = (meta.as_object_mut(), extra) {
            obj.extend(more);
        }
        let tensors = self
            .store
            .iter()
            .map(|(_, p)| NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        let optimizer = optimizer.map(|o| OptimizerSection {
            lr: o.config.lr,
            momentum: o.config.momentum,
            weight_decay: o.config.weight_decay,
            velocities: self
                .store
                .iter()
                .zip(o.velocity())
                .filter(|((_, p), _)| p.kind == ParamKind::Trainable)
                .map(|((_, p), v)| (p.name.clone(), v.iter().map(|x| x.as_f64() as f32).collect()))
                .collect(),
        });
        Checkpoint {
            metadata: meta.to_string(),
            tensors,
            optimizer,
        }
    }

    /// Reads the model config from checkpoint metadata and restores every
    /// tensor by name.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let meta: serde_json::Value =
            serde_json::from_str(&ck.metadata).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let config: ModelConfig = serde_json::from_value(meta.get("model").cloned().unwrap_or_default())
            .map_err(|e| CheckpointError::Metadata(format!("model config: {e}")))?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(config, &mut rng)?;
        net.load_tensors(ck)?;
        Ok(net)
    }

    pub fn load_tensors(&mut self, ck: &Checkpoint) -> Result<(), ModelError> {
        for p in self.store.iter_mut() {
            let t = ck
                .tensor(&p.name)
                .ok_or_else(|| CheckpointError::Missing(p.name.clone()))?;
            if t.shape != p.value.shape() {
                return Err(CheckpointError::Shape {
                    name: p.name.clone(),
                    found: t.shape.clone(),
                    expected: p.value.shape().to_vec(),
                }
                .into());
            }
            for (dst, &src) in p.value.data_mut().iter_mut().zip(&t.data) {
                *dst = T::of(src as f64);
            }
        }
        Ok(())
    }

    /// Restores optimizer velocities saved by [`Self::to_checkpoint`].
    pub fn restore_optimizer(&self, section: &OptimizerSection, sgd: &mut Sgd<T>) -> Result<(), ModelError> {
        let names: Vec<String> = self.store.iter().map(|(_, p)| p.name.clone()).collect();
        for (name, v) in &section.velocities {
            let i = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            let dst = &mut sgd.velocity_mut()[i];
            if dst.len() != v.len() {
                return Err(CheckpointError::Shape {
                    name: name.clone(),
                    found: vec![v.len()],
                    expected: vec![dst.len()],
                }
                .into());
            }
            for (d, &s) in dst.iter_mut().zip(v) {
                *d = T::of(s as f64);
            }
        }
        sgd.config.lr = section.lr;
        sgd.config.momentum = section.momentum;
        sgd.config.weight_decay = section.weight_decay;
        Ok(())
    }
}

fn check_neighbors(neighbors: &[[usize; 3]], rows: usize) -> Result<(), ModelError> {
    if neighbors.len() != rows {
        return Err(ModelError::Batch(format!(
            "{} neighbour rows for {rows} faces",
            neighbors.len()
        )));
    }
    if let Some((i, nb)) = neighbors
        .iter()
        .enumerate()
        .find(|(_, nb)| nb.iter().any(|&j| j >= rows))
    {
        return Err(ModelError::Batch(format!(
            "face {i} has neighbour {nb:?} outside [0, {rows})"
        )));
    }
    Ok(())
}

/// Slot-wise mean or max over each face and its three neighbours.
fn neighborhood_pool<T: Scalar>(
    p: &mut Pass<'_, T>,
    x: Var,
    neighbors: &[[usize; 3]],
    mode: Aggregation,
) -> Result<Var, ModelError> {
    let (n, c) = (p.graph.shape(x)[0], p.graph.shape(x)[1]);
    check_neighbors(neighbors, n)?;
    let idx = neighbors
        .iter()
        .enumerate()
        .flat_map(|(i, nb)| [i, nb[0], nb[1], nb[2]])
        .collect();
    let h = p.graph.gather(x, 0, idx)?;
    let h = p.graph.reshape(h, &[n, 4, c])?;
    Ok(match mode {
        Aggregation::Average => p.graph.reduce_mean(h, 1)?,
        _ => p.graph.reduce_max(h, 1)?,
    })
}
