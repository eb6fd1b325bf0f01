//! Gaussian transformer blocks: positional encoding, induced temporal and
//! self attention, image cross attention and mean rectification.

use rand::Rng;
use sgo_diff::{Array, Binding, DiffError, ParamId, ParamStore, Scalar, Tape, Var};

use super::nn::{init_array, Init, LayerNorm, Linear, MhaBlock, Mlp};
use crate::config::{AttentionKind, BlockModule, ModelConfig};
use crate::error::{CoreError, Result};
use crate::scene::CameraRig;

/// Bilinear sampling location on one camera's feature map, in cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRef {
    pub camera: usize,
    pub x: f64,
    pub y: f64,
}

/// Valid projections of every mean into the rig, in feature cells.
pub fn reference_points(means: &[f64], rig: &CameraRig, stride: usize, near: f64) -> Vec<Vec<SampleRef>> {
    means
        .chunks(3)
        .map(|m| {
            let p = nalgebra::Vector3::new(m[0], m[1], m[2]);
            rig.cameras
                .iter()
                .enumerate()
                .filter_map(|(ci, cam)| {
                    let (u, v, _) = cam.project(&p, near)?;
                    let inside = u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64;
                    inside.then(|| SampleRef { camera: ci, x: u / stride as f64 - 0.5, y: v / stride as f64 - 0.5 })
                })
                .collect()
        })
        .collect()
}

struct Corners<T> {
    idx: [usize; 4],
    w: [T; 4],
    /// ∂w/∂x and ∂w/∂y for the four corners.
    dx: [T; 4],
    dy: [T; 4],
}

/// Bilinear corners at `(x, y)` with border clamping; derivatives vanish
/// along a clamped axis.
fn corners<T: Scalar>(x: f64, y: f64, hf: usize, wf: usize) -> Corners<T> {
    let axis = |v: f64, n: usize| -> (usize, usize, f64, bool) {
        let hi = (n - 1) as f64;
        if v <= 0.0 || n == 1 {
            (0, 0, 0.0, true)
        } else if v >= hi {
            (n - 1, n - 1, 0.0, true)
        } else {
            let f = v.floor();
            (f as usize, f as usize + 1, v - f, false)
        }
    };
    let (x0, x1, fx, cx) = axis(x, wf);
    let (y0, y1, fy, cy) = axis(y, hf);
    let idx = [y0 * wf + x0, y0 * wf + x1, y1 * wf + x0, y1 * wf + x1];
    let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
    let dx = if cx { [0.0; 4] } else { [-(1.0 - fy), 1.0 - fy, -fy, fy] };
    let dy = if cy { [0.0; 4] } else { [-(1.0 - fx), -fx, 1.0 - fx, fx] };
    Corners { idx, w: w.map(T::lit), dx: dx.map(T::lit), dy: dy.map(T::lit) }
}

/// Deformable multi-camera sampling. `values: [L, Hf, Wf, D]`,
/// `offsets: [N, h·K·2]` in cells, `weights: [N, h·K]` (softmaxed per head);
/// output `[N, D]` averaged over each Gaussian's valid cameras.
pub fn deform_sample<T: Scalar>(
    t: &Tape<T>,
    values: Var,
    offsets: Var,
    weights: Var,
    refs: Vec<Vec<SampleRef>>,
    heads: usize,
    points: usize,
) -> Var {
    let vs = t.shape(values);
    let (hf, wf, d) = (vs[1], vs[2], vs[3]);
    let n = refs.len();
    let dh = d / heads;
    let plane = hf * wf * d;
    let each = move |off: &[T], f: &mut dyn FnMut(usize, usize, usize, T, &Corners<T>)| {
        for (i, r) in refs.iter().enumerate() {
            if r.is_empty() {
                continue;
            }
            let inv = T::lit(1.0 / r.len() as f64);
            for s in r {
                for e in 0..heads {
                    for j in 0..points {
                        let k = e * points + j;
                        let x = s.x + off[i * heads * points * 2 + 2 * k].f64();
                        let y = s.y + off[i * heads * points * 2 + 2 * k + 1].f64();
                        let c = corners::<T>(x, y, hf, wf);
                        f(i, s.camera, k, inv, &c);
                    }
                }
            }
        }
    };
    let each = std::rc::Rc::new(each);
    let out = {
        let (v, o, w) = (t.value(values), t.value(offsets), t.value(weights));
        let vd = v.data();
        let mut out = vec![T::zero(); n * d];
        let wd = w.data();
        each(o.data(), &mut |i, cam, k, inv, c| {
            let e = k / points;
            let wt = inv * wd[i * heads * points + k];
            for q in 0..4 {
                let base = cam * plane + c.idx[q] * d + e * dh;
                let a = wt * c.w[q];
                for ch in 0..dh {
                    out[i * d + e * dh + ch] += a * vd[base + ch];
                }
            }
        });
        Array::new(vec![n, d], out)
    };
    let flops = (n * heads * points * dh * 8 * 2) as u64;
    let each_b = each.clone();
    t.custom("deform_sample", &[values, offsets, weights], out, flops, move |a| {
        let (v, o, w, g) = (a.inputs[0].data(), a.inputs[1].data(), a.inputs[2].data(), a.grad.data());
        let mut gv = vec![T::zero(); v.len()];
        let mut go = vec![T::zero(); o.len()];
        let mut gw = vec![T::zero(); w.len()];
        each_b(o, &mut |i, cam, k, inv, c| {
            let e = k / points;
            let wt = inv * w[i * heads * points + k];
            let go_row = &g[i * d + e * dh..i * d + (e + 1) * dh];
            let mut dot = T::zero();
            let (mut ddx, mut ddy) = (T::zero(), T::zero());
            for q in 0..4 {
                let base = cam * plane + c.idx[q] * d + e * dh;
                let mut vg = T::zero();
                for ch in 0..dh {
                    gv[base + ch] += wt * c.w[q] * go_row[ch];
                    vg += v[base + ch] * go_row[ch];
                }
                dot += c.w[q] * vg;
                ddx += c.dx[q] * vg;
                ddy += c.dy[q] * vg;
            }
            gw[i * heads * points + k] += inv * dot;
            go[i * heads * points * 2 + 2 * k] += wt * ddx;
            go[i * heads * points * 2 + 2 * k + 1] += wt * ddy;
        });
        vec![
            Some(Array::new(a.inputs[0].shape().to_vec(), gv)),
            Some(Array::new(a.inputs[1].shape().to_vec(), go)),
            Some(Array::new(a.inputs[2].shape().to_vec(), gw)),
        ]
    })
}

/// Means and features of the Gaussian set at one point of the pipeline.
#[derive(Debug, Clone, Copy)]
pub struct GaussianState {
    /// `[N, 3]`
    pub means: Var,
    /// `[N, D]`
    pub features: Var,
}

/// Row-wise MLP of normalised means, zero at initialisation.
#[derive(Debug, Clone)]
pub struct PosEnc {
    pub mlp: Mlp,
    pub center: [f64; 3],
    pub half: [f64; 3],
}

impl PosEnc {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, name: &str, dim: usize, extent: [f64; 6]) -> Result<Self> {
        let center = [0, 1, 2].map(|a| 0.5 * (extent[2 * a] + extent[2 * a + 1]));
        let half = [0, 1, 2].map(|a| 0.5 * (extent[2 * a + 1] - extent[2 * a]).max(1e-6));
        Ok(Self { mlp: Mlp::new(ps, rng, name, &[3, dim, dim], Init::Zero)?, center, half })
    }

    pub fn forward<T: Scalar>(&self, t: &Tape<T>, p: &Binding, means: Var) -> Var {
        let c = t.constant(Array::from_fn(&[3], |a| T::lit(-self.center[a])));
        let s = t.constant(Array::from_fn(&[3], |a| T::lit(1.0 / self.half[a])));
        let x = t.add(means, c);
        let x = t.mul(x, s);
        self.mlp.forward(t, p, x)
    }
}

/// Induced self attention: `H = MHA(P, X)`, `out = MHA(X, H)`.
#[derive(Debug, Clone)]
pub struct Isa {
    pub inducing: ParamId,
    pub first: MhaBlock,
    pub second: MhaBlock,
}

impl Isa {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, name: &str, m: usize, dim: usize, heads: usize, ffn_mult: usize) -> Result<Self> {
        Ok(Self {
            inducing: ps.add(&format!("{name}.inducing"), init_array(rng, &[m, dim], Init::Normal(1.0)))?,
            first: MhaBlock::new(ps, rng, &format!("{name}.first"), dim, heads, ffn_mult)?,
            second: MhaBlock::new(ps, rng, &format!("{name}.second"), dim, heads, ffn_mult)?,
        })
    }

    /// Bottleneck `H: [M, D]` built from `source`.
    pub fn bottleneck<T: Scalar>(&self, t: &Tape<T>, p: &Binding, source: Var) -> Var {
        self.first.forward(t, p, p.var(self.inducing), source)
    }

    pub fn forward<T: Scalar>(&self, t: &Tape<T>, p: &Binding, x: Var) -> Var {
        let h = self.bottleneck(t, p, x);
        self.second.forward(t, p, x, h)
    }

    /// Temporal variant: the bottleneck reads memory features; without
    /// memory only the feed-forward path of the second stage runs.
    pub fn forward_temporal<T: Scalar>(&self, t: &Tape<T>, p: &Binding, x: Var, memory: Option<Var>) -> Var {
        match memory {
            Some(m) => {
                let z = self.bottleneck(t, p, m);
                self.second.forward(t, p, x, z)
            }
            None => self.second.feed_forward(t, p, x),
        }
    }
}

/// Standard self attention over all Gaussians.
pub fn full_self_attention<T: Scalar>(t: &Tape<T>, p: &Binding, block: &MhaBlock, x: Var, cap: usize) -> Result<Var> {
    let n = t.shape(x)[0];
    if n > cap {
        return Err(CoreError::CapExceeded { what: "full self-attention (use induced attention)", n, cap });
    }
    Ok(block.forward(t, p, x, x))
}

/// Deformable cross attention from Gaussians to image features.
#[derive(Debug, Clone)]
pub struct Gica {
    pub heads: usize,
    pub points: usize,
    pub ln: LayerNorm,
    pub value: Linear,
    pub offset: Linear,
    pub weight: Linear,
    pub out: Linear,
    pub ln_ffn: LayerNorm,
    pub ffn: Mlp,
}

impl Gica {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, name: &str, dim: usize, heads: usize, points: usize, ffn_mult: usize) -> Result<Self> {
        Ok(Self {
            heads,
            points,
            ln: LayerNorm::new(ps, &format!("{name}.ln"), dim)?,
            value: Linear::new(ps, rng, &format!("{name}.value"), dim, dim, Init::Xavier)?,
            offset: Linear::new(ps, rng, &format!("{name}.offset"), dim, heads * points * 2, Init::Zero)?,
            weight: Linear::new(ps, rng, &format!("{name}.weight"), dim, heads * points, Init::Xavier)?,
            out: Linear::new(ps, rng, &format!("{name}.out"), dim, dim, Init::Xavier)?,
            ln_ffn: LayerNorm::new(ps, &format!("{name}.ln_ffn"), dim)?,
            ffn: Mlp::new(ps, rng, &format!("{name}.ffn"), &[dim, ffn_mult * dim, dim], Init::Xavier)?,
        })
    }

    /// Cross-attention update before the residual add, masked to zero for
    /// Gaussians no camera sees.
    pub fn attend<T: Scalar>(&self, t: &Tape<T>, p: &Binding, x: Var, feats: Var, refs: Vec<Vec<SampleRef>>) -> Var {
        let n = refs.len();
        let mask = t.constant(Array::from_fn(&[n, 1], |i| if refs[i].is_empty() { T::zero() } else { T::one() }));
        let q = self.ln.forward(t, p, x);
        let v = self.value.forward(t, p, feats);
        let off = self.offset.forward(t, p, q);
        let w = self.weight.forward(t, p, q);
        let w = t.reshape(w, &[n, self.heads, self.points]);
        let w = t.softmax(w);
        let w = t.reshape(w, &[n, self.heads * self.points]);
        let s = deform_sample(t, v, off, w, refs, self.heads, self.points);
        let o = self.out.forward(t, p, s);
        t.mul(o, mask)
    }

    pub fn forward<T: Scalar>(&self, t: &Tape<T>, p: &Binding, x: Var, feats: Var, refs: Vec<Vec<SampleRef>>) -> Var {
        let a = self.attend(t, p, x, feats, refs);
        let h = t.add(x, a);
        let n = self.ln_ffn.forward(t, p, h);
        let f = self.ffn.forward(t, p, n);
        t.add(h, f)
    }
}

/// One transformer block.
#[derive(Debug, Clone)]
pub struct Block {
    pub posenc: PosEnc,
    pub ita: Isa,
    pub isa: Isa,
    /// Used instead of `isa` when the model runs full attention.
    pub full: Option<MhaBlock>,
    pub gica: Gica,
    pub rect: Mlp,
}

#[derive(Debug, Clone)]
pub struct GaussTransformer {
    pub blocks: Vec<Block>,
    pub order: Vec<BlockModule>,
    pub attention: AttentionKind,
    pub full_cap: usize,
    pub stride: usize,
    pub near: f64,
}

impl GaussTransformer {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.latent;
        let mut blocks = Vec::new();
        for b in 0..cfg.blocks {
            let name = format!("block{b}");
            blocks.push(Block {
                posenc: PosEnc::new(ps, rng, &format!("{name}.posenc"), d, cfg.scene_extent)?,
                ita: Isa::new(ps, rng, &format!("{name}.ita"), cfg.inducing, d, cfg.heads, cfg.ffn_mult)?,
                isa: Isa::new(ps, rng, &format!("{name}.isa"), cfg.inducing, d, cfg.heads, cfg.ffn_mult)?,
                full: match cfg.attention {
                    AttentionKind::Full => Some(MhaBlock::new(ps, rng, &format!("{name}.full"), d, cfg.heads, cfg.ffn_mult)?),
                    AttentionKind::Induced => None,
                },
                gica: Gica::new(ps, rng, &format!("{name}.gica"), d, cfg.heads, cfg.offsets, cfg.ffn_mult)?,
                rect: Mlp::new(ps, rng, &format!("{name}.rect"), &[d, d, 3], Init::Zero)?,
            });
        }
        Ok(Self {
            blocks,
            order: cfg.block_order.clone(),
            attention: cfg.attention,
            full_cap: cfg.full_attention_cap,
            stride: cfg.stride(),
            near: cfg.near,
        })
    }

    /// Runs every block in the configured module order.
    pub fn run_blocks<T: Scalar>(
        &self,
        t: &Tape<T>,
        p: &Binding,
        init: GaussianState,
        feats: Var,
        rig: &CameraRig,
        memory: Option<Var>,
    ) -> Result<GaussianState> {
        let mut s = init;
        for (bi, b) in self.blocks.iter().enumerate() {
            for &m in &self.order {
                match m {
                    BlockModule::Posenc => {
                        let e = b.posenc.forward(t, p, s.means);
                        s.features = t.add(s.features, e);
                    }
                    BlockModule::Ita => s.features = b.ita.forward_temporal(t, p, s.features, memory),
                    BlockModule::Isa => {
                        s.features = match &b.full {
                            Some(full) => full_self_attention(t, p, full, s.features, self.full_cap)?,
                            None => b.isa.forward(t, p, s.features),
                        }
                    }
                    BlockModule::Gica => {
                        let means: Vec<f64> = t.value(s.means).data().iter().map(|v| v.f64()).collect();
                        let refs = reference_points(&means, rig, self.stride, self.near);
                        s.features = b.gica.forward(t, p, s.features, feats, refs);
                    }
                    BlockModule::Rect => {
                        let d = b.rect.forward(t, p, s.features);
                        s.means = t.add(s.means, d);
                    }
                }
                let out = if m == BlockModule::Rect { s.means } else { s.features };
                if !t.value(out).is_finite() {
                    return Err(CoreError::BlockNonFinite {
                        block: bi,
                        module: m.name(),
                        source: DiffError::NonFinite { index: out.index(), op: t.op_name(out) },
                    });
                }
            }
        }
        Ok(s)
    }
}
