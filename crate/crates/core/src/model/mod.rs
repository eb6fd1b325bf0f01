//! Encoder, Gaussian transformer and heads assembled into one model.

pub mod encoder;
pub mod heads;
pub mod nn;
pub mod transformer;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgo_diff::{Array, Binding, ParamId, ParamStore, Scalar, Tape, Var};

pub use encoder::{im2col, Encoder};
pub use heads::{advance_memory, DecodedVars, FlowHead, GaussianSet, Heads, TemporalMemory};
pub use nn::{Init, LayerNorm, Linear, MhaBlock, Mlp};
pub use transformer::{deform_sample, full_self_attention, reference_points, GaussTransformer, GaussianState, Gica, Isa, PosEnc, SampleRef};

use crate::config::{ModelConfig, ParamSubset};
use crate::error::Result;
use crate::scene::CameraRig;

/// Jittered grid of `n` points inside `extent`.
pub fn initial_means<R: Rng>(rng: &mut R, n: usize, extent: [f64; 6]) -> Vec<f64> {
    let len = [0, 1, 2].map(|a| (extent[2 * a + 1] - extent[2 * a]).max(1e-6));
    let cell = (len.iter().product::<f64>() / n.max(1) as f64).cbrt();
    let dims = len.map(|l| ((l / cell).ceil() as usize).max(1));
    let mut cells: Vec<usize> = (0..dims.iter().product()).collect();
    cells.shuffle(rng);
    let mut out = Vec::with_capacity(3 * n);
    for &c in cells.iter().take(n) {
        let idx = [c / (dims[1] * dims[2]), (c / dims[2]) % dims[1], c % dims[2]];
        for a in 0..3 {
            let step = len[a] / dims[a] as f64;
            let j: f64 = rng.random_range(-0.25..0.25);
            out.push(extent[2 * a] + (idx[a] as f64 + 0.5 + j) * step);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub classes: usize,
    pub encoder: Encoder,
    pub transformer: GaussTransformer,
    pub heads: Heads,
    pub flow: FlowHead,
    pub init_means: ParamId,
    pub init_features: ParamId,
}

/// Model outputs for one frame.
#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    pub decoded: DecodedVars,
    /// Encoder feature maps `[L, Hf, Wf, D]`.
    pub feature_maps: Var,
}

impl Model {
    /// Registers all parameters in `ps`, initialised from `seed`.
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, cfg: &ModelConfig, classes: usize, horizon: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = initial_means(&mut rng, cfg.gaussians, cfg.init_extent);
        let init_means = ps.add("gaussians.means", Array::new(vec![cfg.gaussians, 3], means.into_iter().map(T::lit).collect()))?;
        let init_features = ps.add("gaussians.features", nn::init_array(&mut rng, &[cfg.gaussians, cfg.latent], Init::Normal(cfg.feature_std)))?;
        let encoder = Encoder::new(ps, &mut rng, &cfg.encoder_channels)?;
        let transformer = GaussTransformer::new(ps, &mut rng, cfg)?;
        let heads = Heads::new(ps, &mut rng, cfg.latent, classes, cfg.scale_min, cfg.scale_init)?;
        let flow = FlowHead::new(ps, &mut rng, cfg.latent, cfg.flow_hidden, horizon)?;
        Ok(Self { cfg: cfg.clone(), classes, encoder, transformer, heads, flow, init_means, init_features })
    }

    /// Images `[L, H, W, 3]` to decoded Gaussians.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        t: &Tape<T>,
        p: &Binding,
        images: Var,
        rig: &CameraRig,
        memory: Option<&TemporalMemory<T>>,
        subset: ParamSubset,
        fixed: (f64, f64),
    ) -> Result<Prediction> {
        let feature_maps = self.encoder.forward(t, p, images)?;
        let init = GaussianState { means: p.var(self.init_means), features: p.var(self.init_features) };
        let mem = memory.map(|m| t.constant(m.features.clone()));
        let s = self.transformer.run_blocks(t, p, init, feature_maps, rig, mem)?;
        let decoded = self.heads.decode(t, p, s.means, s.features, subset, fixed.0, fixed.1);
        Ok(Prediction { decoded, feature_maps })
    }
}
