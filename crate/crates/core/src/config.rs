//! Run configuration shared by the library and the command line.
//!
//! Every section has a default for every field; unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::voxel::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub seed: u64,
    pub frames: usize,
    /// Seconds between frames.
    pub dt: f64,
    /// Ego speed in m/s.
    pub speed: f64,
    pub max_yaw_rate: f64,
    /// World (x, y) of the first ego pose.
    pub start: [f64; 2],
    pub cameras: usize,
    pub height: usize,
    pub width: usize,
    pub fov_deg: f64,
    pub mount_height: f64,
    pub classes: usize,
    /// `[xmin, xmax, ymin, ymax, zmin, zmax]` of the world.
    pub extents: [f64; 6],
    pub ground_half_extent: f64,
    pub boxes: usize,
    pub movers: usize,
    pub poles: usize,
    pub vegetation: usize,
    pub walls: usize,
    pub mover_speed: [f64; 2],
    pub corridor: f64,
    pub placement_half_length: f64,
    /// Mirror camera images as PNG next to the frame blobs.
    pub png: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 10,
            dt: 0.5,
            speed: 1.0,
            max_yaw_rate: 0.0,
            start: [-2.0, 0.0],
            cameras: 4,
            height: 48,
            width: 88,
            fov_deg: 90.0,
            mount_height: 1.5,
            classes: 6,
            extents: [-12.0, 12.0, -12.0, 12.0, -1.0, 5.4],
            ground_half_extent: 11.0,
            boxes: 5,
            movers: 0,
            poles: 4,
            vegetation: 3,
            walls: 2,
            mover_speed: [2.0, 2.0],
            corridor: 2.2,
            placement_half_length: 8.0,
            png: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    Induced,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockModule {
    Posenc,
    Ita,
    Isa,
    Gica,
    Rect,
}

impl BlockModule {
    pub fn name(self) -> &'static str {
        match self {
            BlockModule::Posenc => "posenc",
            BlockModule::Ita => "ita",
            BlockModule::Isa => "isa",
            BlockModule::Gica => "gica",
            BlockModule::Rect => "rect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of Gaussians N.
    pub gaussians: usize,
    /// Inducing points M per induced attention layer.
    pub inducing: usize,
    /// Latent dimension D.
    pub latent: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    /// Deformable sampling offsets per head.
    pub offsets: usize,
    /// Encoder output channels per stride-2 block; the last equals `latent`.
    pub encoder_channels: Vec<usize>,
    pub scale_min: f64,
    /// Scale at initialization (sets the scale-head bias).
    pub scale_init: f64,
    /// Region of the initial means, `[xmin, xmax, ymin, ymax, zmin, zmax]`.
    pub init_extent: [f64; 6],
    /// Positional encoding normalizes means by this region.
    pub scene_extent: [f64; 6],
    pub flow_hidden: usize,
    pub attention: AttentionKind,
    pub block_order: Vec<BlockModule>,
    /// Largest N accepted by full self-attention.
    pub full_attention_cap: usize,
    /// Near plane in meters.
    pub near: f64,
    /// Std of the initial Gaussian features.
    pub feature_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gaussians: 512,
            inducing: 64,
            latent: 64,
            blocks: 2,
            heads: 4,
            ffn_mult: 4,
            offsets: 4,
            encoder_channels: vec![16, 32, 64],
            scale_min: 0.02,
            scale_init: 0.3,
            init_extent: [-10.0, 10.0, -10.0, 10.0, 0.0, 1.5],
            scene_extent: [-12.0, 12.0, -12.0, 12.0, -1.0, 5.4],
            flow_hidden: 64,
            attention: AttentionKind::Induced,
            block_order: vec![
                BlockModule::Posenc,
                BlockModule::Ita,
                BlockModule::Isa,
                BlockModule::Gica,
                BlockModule::Rect,
            ],
            full_attention_cap: 4096,
            near: 0.1,
            feature_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.heads == 0 || !self.latent.is_multiple_of(self.heads) {
            return Err(config_err("model.heads", "latent must be divisible by heads"));
        }
        if self.blocks == 0 {
            return Err(config_err("model.blocks", "at least one block"));
        }
        if self.attention == AttentionKind::Induced && self.inducing >= self.gaussians {
            return Err(config_err("model.inducing", "inducing points must be fewer than gaussians"));
        }
        if self.encoder_channels.last() != Some(&self.latent) {
            return Err(config_err("model.encoder_channels", "last entry must equal latent"));
        }
        if self.scale_init <= self.scale_min || self.scale_min <= 0.0 {
            return Err(config_err("model.scale_init", "needs scale_init > scale_min > 0"));
        }
        if self.offsets == 0 || self.gaussians == 0 {
            return Err(config_err("model.offsets", "must be positive"));
        }
        for (name, e) in [("model.init_extent", self.init_extent), ("model.scene_extent", self.scene_extent)] {
            if !(e[1] > e[0] && e[3] > e[2] && e[5] >= e[4]) {
                return Err(config_err(name, format!("bad extent {e:?}")));
            }
        }
        Ok(())
    }

    /// Encoder stride: one halving per block.
    pub fn stride(&self) -> usize {
        1 << self.encoder_channels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegLoss {
    Bce,
    SoftmaxCe,
}

/// Which Gaussian properties the heads predict; the rest are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamSubset {
    Mean,
    MeanOpacity,
    MeanOpacityScale,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Supervision {
    /// Splatted depth and semantics into image labels.
    Render,
    /// Cross-entropy against oracle voxel labels.
    Voxel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    /// Temporal horizon T: frames t-T..t+T are supervised.
    pub horizon: usize,
    pub temporal_module: bool,
    pub depth_weight: f64,
    pub seg_weight: f64,
    pub seg_loss: SegLoss,
    /// Supervise the current frame besides the temporal ones.
    pub include_current: bool,
    pub params: ParamSubset,
    /// Opacity used when the subset does not predict it.
    pub fixed_opacity: f64,
    /// Scale used when the subset does not predict it.
    pub fixed_scale: f64,
    pub supervision: Supervision,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Loss-curve logging interval.
    pub log_every: usize,
    /// Linear warm-up length of the learning rate.
    pub warmup: usize,
    /// Cosine decay ends at `lr · lr_final`.
    pub lr_final: f64,
    /// Scalar type of training and inference.
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 1000,
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            horizon: 2,
            temporal_module: true,
            depth_weight: 1.0,
            seg_weight: 1.0,
            seg_loss: SegLoss::Bce,
            include_current: true,
            params: ParamSubset::All,
            fixed_opacity: 1.0,
            fixed_scale: 0.3,
            supervision: Supervision::Render,
            checkpoint_every: 0,
            log_every: 10,
            warmup: 50,
            lr_final: 0.1,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, frames: usize) -> Result<()> {
        if 2 * self.horizon + 1 > frames {
            return Err(config_err(
                "train.horizon",
                format!("2T+1 = {} exceeds sequence length {frames}", 2 * self.horizon + 1),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(config_err("train.lr", "must be positive"));
        }
        if self.depth_weight < 0.0 || self.seg_weight < 0.0 {
            return Err(config_err("train.depth_weight", "loss weights must be non-negative"));
        }
        if !self.include_current && self.horizon == 0 {
            return Err(config_err("train.include_current", "nothing supervised with T = 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub tile: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Screen-space low-pass added to the projected covariance, px².
    pub lowpass: f64,
    pub eps_acc: f64,
    /// Divide accumulated depth by accumulated alpha.
    pub normalize_depth: bool,
    pub background_depth: f64,
    /// Largest N the brute-force reference renderer accepts.
    pub reference_cap: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile: 16,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            lowpass: 0.3,
            eps_acc: 1e-4,
            normalize_depth: true,
            background_depth: 0.0,
            reference_cap: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoxelizeConfig {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub tau_free: f64,
    /// Slope of the free-class logit.
    pub kappa: f64,
    /// Truncation radius in multiples of the largest scale.
    pub truncation: f64,
}

impl Default for VoxelizeConfig {
    fn default() -> Self {
        let g = GridSpec::desk();
        Self {
            origin: g.origin,
            voxel_size: g.voxel_size,
            dims: g.dims,
            tau_free: 0.3,
            kappa: 10.0,
            truncation: 6.0,
        }
    }
}

impl VoxelizeConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            origin: self.origin,
            voxel_size: self.voxel_size,
            dims: self.dims,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n: Vec<usize>,
    pub inducing: usize,
    pub latent: usize,
    pub heads: usize,
    pub repeats: usize,
    pub full_cap: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: vec![1000, 2000, 4000],
            inducing: 500,
            latent: 64,
            heads: 4,
            repeats: 1,
            full_cap: 4096,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub render: RenderConfig,
    pub voxelize: VoxelizeConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(self.data.frames)?;
        self.voxelize.grid().validate()?;
        if self.data.classes == 0 {
            return Err(config_err("data.classes", "must be positive"));
        }
        Ok(())
    }
}
