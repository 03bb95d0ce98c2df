use serde::{Deserialize, Serialize};

use super::ModelError;

/// How a mesh-conv block pools a face's structural feature with its neighbours'.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Slot-wise mean over the face and its three neighbours.
    Average,
    /// Slot-wise max over the face and its three neighbours.
    Max,
    /// Shared MLP on (own, neighbour) pairs, max over the three pairs.
    Concat,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Average, Aggregation::Max, Aggregation::Concat];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Average => "average",
            Aggregation::Max => "max",
            Aggregation::Concat => "concat",
        }
    }
}

/// The six component-ablation settings, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    NoSpatial,
    NoStructural,
    NoFrc,
    NoFkc,
    NoMeshConv,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::NoSpatial,
        Ablation::NoStructural,
        Ablation::NoFrc,
        Ablation::NoFkc,
        Ablation::NoMeshConv,
        Ablation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoSpatial => "no-spatial",
            Ablation::NoStructural => "no-structural",
            Ablation::NoFrc => "no-frc",
            Ablation::NoFkc => "no-fkc",
            Ablation::NoMeshConv => "no-mesh-conv",
            Ablation::Full => "full",
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown aggregation `{s}` (expected average, max or concat)"))
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|a| a.name()).collect();
            format!("unknown ablation `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// Mesh-conv block widths `(in1, in2, out1, out2)`: spatial in/out and
/// structural in/out channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockWidths {
    pub in1: usize,
    pub in2: usize,
    pub out1: usize,
    pub out2: usize,
}

impl BlockWidths {
    pub const fn new(in1: usize, in2: usize, out1: usize, out2: usize) -> Self {
        Self { in1, in2, out1, out2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub spatial_widths: Vec<usize>,
    /// Width of both layers of the pairwise kernel f.
    pub frc_k1: usize,
    /// Width of both layers of g.
    pub frc_k2: usize,
    pub fkc_kernels: usize,
    pub fkc_vectors_per_kernel: usize,
    pub fkc_sigma: f64,
    pub mesh_conv: Vec<BlockWidths>,
    pub fusion_width: usize,
    /// Hidden classifier widths; the output layer has `num_classes` units.
    pub classifier_widths: Vec<usize>,
    pub dropout_p: f64,
    pub use_spatial: bool,
    pub use_frc: bool,
    pub use_fkc: bool,
    pub use_mesh_conv: bool,
    pub aggregation: Aggregation,
    pub batch_norm: bool,
    /// Weight of the old running statistic in each update.
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::standard(40)
    }
}

impl ModelConfig {
    /// The full architecture at its default widths.
    pub fn standard(num_classes: usize) -> Self {
        Self {
            num_classes,
            spatial_widths: vec![64, 64],
            frc_k1: 32,
            frc_k2: 64,
            fkc_kernels: 64,
            fkc_vectors_per_kernel: 4,
            fkc_sigma: 0.2,
            mesh_conv: vec![
                BlockWidths::new(64, 131, 256, 256),
                BlockWidths::new(256, 256, 512, 512),
            ],
            fusion_width: 1024,
            classifier_widths: vec![512, 256],
            dropout_p: 0.5,
            use_spatial: true,
            use_frc: true,
            use_fkc: true,
            use_mesh_conv: true,
            aggregation: Aggregation::Concat,
            batch_norm: true,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    /// A narrow network for finite-difference checks: batch norm and
    /// dropout off.
    pub fn tiny(num_classes: usize) -> Self {
        let mut c = Self {
            num_classes,
            spatial_widths: vec![4, 5],
            frc_k1: 3,
            frc_k2: 4,
            fkc_kernels: 3,
            fkc_vectors_per_kernel: 2,
            fkc_sigma: 0.6,
            mesh_conv: vec![BlockWidths::new(5, 0, 6, 5), BlockWidths::new(6, 5, 4, 3)],
            fusion_width: 7,
            classifier_widths: vec![6, 5],
            dropout_p: 0.0,
            use_spatial: true,
            use_frc: true,
            use_fkc: true,
            use_mesh_conv: true,
            aggregation: Aggregation::Concat,
            batch_norm: false,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        };
        c.mesh_conv[0].in2 = c.structural_width();
        c
    }

    /// Applies one of the component ablations to `self`, adjusting the
    /// block input widths so the result stays consistent.
    pub fn with_ablation(mut self, row: Ablation) -> Self {
        self.use_spatial = row != Ablation::NoSpatial;
        self.use_frc = !matches!(row, Ablation::NoStructural | Ablation::NoFrc);
        self.use_fkc = !matches!(row, Ablation::NoStructural | Ablation::NoFkc);
        self.use_mesh_conv = row != Ablation::NoMeshConv;
        self.fit_block_widths();
        self
    }

    pub fn with_aggregation(mut self, mode: Aggregation) -> Self {
        self.aggregation = mode;
        self
    }

    /// Rewrites `in1`/`in2` of every block (and zeroes the structural
    /// widths when there is no structural stream) to chain correctly.
    pub fn fit_block_widths(&mut self) {
        let mut spatial = self.spatial_width();
        let mut structural = self.structural_width();
        let default_out2: Vec<usize> = self.mesh_conv.iter().map(|b| b.out1).collect();
        for (b, out2) in self.mesh_conv.iter_mut().zip(default_out2) {
            b.in1 = spatial;
            b.in2 = structural;
            if structural == 0 {
                b.out2 = 0;
            } else if b.out2 == 0 {
                b.out2 = out2;
            }
            spatial = b.out1;
            structural = b.out2;
        }
    }

    pub fn has_structural(&self) -> bool {
        self.use_frc || self.use_fkc
    }

    /// Channels out of the spatial descriptor (0 when disabled).
    pub fn spatial_width(&self) -> usize {
        if self.use_spatial {
            *self.spatial_widths.last().unwrap_or(&0)
        } else {
            0
        }
    }

    /// Channels of the initial structural feature: FRC, FKC and the raw
    /// unit normal (0 when both descriptors are disabled).
    pub fn structural_width(&self) -> usize {
        if !self.has_structural() {
            return 0;
        }
        let frc = if self.use_frc { self.frc_k2 } else { 0 };
        let fkc = if self.use_fkc { self.fkc_kernels } else { 0 };
        frc + fkc + 3
    }

    /// Per-face channels entering the fusion MLP.
    pub fn fusion_input_width(&self) -> usize {
        if self.use_mesh_conv {
            self.mesh_conv.iter().map(|b| b.out1).sum()
        } else {
            self.spatial_width() + self.structural_width()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.num_classes < 1 {
            return err("num_classes must be at least 1".into());
        }
        if self.spatial_widths.is_empty() || self.spatial_widths.contains(&0) {
            return err("spatial_widths must be non-empty and positive".into());
        }
        if self.frc_k1 == 0 || self.frc_k2 == 0 {
            return err("frc widths must be positive".into());
        }
        if self.fkc_kernels == 0 || self.fkc_vectors_per_kernel == 0 {
            return err("fkc kernel counts must be positive".into());
        }
        if !(self.fkc_sigma > 0.0) || !self.fkc_sigma.is_finite() {
            return err(format!("fkc_sigma must be positive, got {}", self.fkc_sigma));
        }
        if self.fusion_width == 0 || self.classifier_widths.contains(&0) {
            return err("fusion and classifier widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return err(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return err("bn_momentum must be in [0, 1) and bn_eps positive".into());
        }
        if !self.use_spatial && !self.has_structural() {
            return err("at least one of the spatial and structural descriptors must be enabled".into());
        }
        if !self.use_mesh_conv {
            return Ok(());
        }
        if self.mesh_conv.is_empty() {
            return err("use_mesh_conv is set but no blocks are configured".into());
        }
        let mut spatial = self.spatial_width();
        let mut structural = self.structural_width();
        for (k, b) in self.mesh_conv.iter().enumerate() {
            if b.in1 != spatial {
                return err(format!(
                    "block {k}: in1 is {} but {} spatial channels arrive",
                    b.in1, spatial
                ));
            }
            if b.in2 != structural {
                return err(format!(
                    "block {k}: in2 is {} but {} structural channels arrive",
                    b.in2, structural
                ));
            }
            if b.out1 == 0 {
                return err(format!("block {k}: out1 must be positive"));
            }
            if (structural == 0) != (b.out2 == 0) {
                return err(format!(
                    "block {k}: out2 must be 0 exactly when there is no structural stream"
                ));
            }
            spatial = b.out1;
            structural = b.out2;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let c: Self = serde_json::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
