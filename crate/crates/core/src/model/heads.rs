//! Gaussian property heads, temporal flow and recurrent memory.

use rand::Rng;
use sgo_diff::{Array, Binding, ParamId, ParamStore, Scalar, Tape, Var};

use super::nn::{init_array, Init, Linear, Mlp};
use crate::config::ParamSubset;
use crate::error::{CoreError, Result};
use crate::export::PlyRow;
use crate::geometry::Rigid;
use crate::splat::{inverse_covariance, normalize_quat, quat_to_rotmat, GaussianVars};

/// Single linear layers from features to opacity, scale, rotation, classes.
#[derive(Debug, Clone)]
pub struct Heads {
    pub opacity: Linear,
    pub scale: Linear,
    pub rotation: Linear,
    pub classes: Linear,
    pub scale_min: f64,
}

/// Decoded Gaussians on the tape.
#[derive(Debug, Clone, Copy)]
pub struct DecodedVars {
    pub means: Var,
    /// `[N]`
    pub opacity: Var,
    /// `[N, 3]`
    pub scale: Var,
    /// `[N, 4]` unit quaternions.
    pub rotation: Var,
    /// `[N, 9]`
    pub rotm: Var,
    /// `[N, C]` semantic logits.
    pub logits: Var,
    pub features: Var,
}

impl DecodedVars {
    /// Splatting inputs with `colors` derived from the logits by the caller.
    pub fn splat(&self, colors: Var) -> GaussianVars {
        GaussianVars { means: self.means, rotm: self.rotm, scale: self.scale, opacity: self.opacity, colors }
    }

    /// `[N, 6]` inverse covariance entries.
    pub fn inv_cov<T: Scalar>(&self, t: &Tape<T>) -> Var {
        inverse_covariance(t, self.rotm, self.scale)
    }
}

/// Bias at which `s_min + softplus(b) = s`.
fn softplus_inverse(v: f64) -> f64 {
    if v > 20.0 { v } else { v.exp_m1().ln() }
}

impl Heads {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, dim: usize, classes: usize, scale_min: f64, scale_init: f64) -> Result<Self> {
        let h = Self {
            opacity: Linear::new(ps, rng, "head.opacity", dim, 1, Init::Normal(0.01))?,
            scale: Linear::new(ps, rng, "head.scale", dim, 3, Init::Normal(0.01))?,
            rotation: Linear::new(ps, rng, "head.rotation", dim, 4, Init::Normal(0.01))?,
            classes: Linear::new(ps, rng, "head.classes", dim, classes, Init::Normal(0.01))?,
            scale_min,
        };
        let b = softplus_inverse((scale_init - scale_min).max(1e-6));
        *ps.get_mut(h.scale.b) = Array::full(&[3], T::lit(b));
        *ps.get_mut(h.rotation.b) = Array::new(vec![4], vec![T::one(), T::zero(), T::zero(), T::zero()]);
        Ok(h)
    }

    /// Decodes final means and features. Properties outside `subset` are
    /// fixed: opacity `fixed_opacity`, isotropic scale `fixed_scale`,
    /// identity rotation.
    #[allow(clippy::too_many_arguments)]
    pub fn decode<T: Scalar>(
        &self,
        t: &Tape<T>,
        p: &Binding,
        means: Var,
        features: Var,
        subset: ParamSubset,
        fixed_opacity: f64,
        fixed_scale: f64,
    ) -> DecodedVars {
        let n = t.shape(features)[0];
        let opacity = if subset >= ParamSubset::MeanOpacity {
            let o = self.opacity.forward(t, p, features);
            let o = t.sigmoid(o);
            t.reshape(o, &[n])
        } else {
            t.constant(Array::full(&[n], T::lit(fixed_opacity)))
        };
        let scale = if subset >= ParamSubset::MeanOpacityScale {
            let s = self.scale.forward(t, p, features);
            let s = t.softplus(s);
            t.add_scalar(s, T::lit(self.scale_min))
        } else {
            t.constant(Array::full(&[n, 3], T::lit(fixed_scale)))
        };
        let rotation = if subset >= ParamSubset::All {
            let r = self.rotation.forward(t, p, features);
            normalize_quat(t, r)
        } else {
            t.constant(Array::from_fn(&[n, 4], |k| if k % 4 == 0 { T::one() } else { T::zero() }))
        };
        let rotm = quat_to_rotmat(t, rotation);
        let logits = self.classes.forward(t, p, features);
        DecodedVars { means, opacity, scale, rotation, rotm, logits, features }
    }
}

/// Per-Gaussian 3D offsets `v(t) = MLP(f ⊕ Ψ(t))`.
#[derive(Debug, Clone)]
pub struct FlowHead {
    pub tokens: ParamId,
    pub horizon: usize,
    pub mlp: Mlp,
}

impl FlowHead {
    /// Tokens for steps `-horizon..=horizon` without 0; at least `±1`.
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, dim: usize, hidden: usize, horizon: usize) -> Result<Self> {
        let horizon = horizon.max(1);
        Ok(Self {
            tokens: ps.add("flow.tokens", init_array(rng, &[2 * horizon, dim], Init::Normal(1.0)))?,
            horizon,
            mlp: Mlp::new(ps, rng, "flow.mlp", &[2 * dim, hidden, hidden, 3], Init::Zero)?,
        })
    }

    pub fn token_row(&self, step: i32) -> Result<usize> {
        let h = self.horizon as i32;
        if step == 0 || step.abs() > h {
            return Err(CoreError::Horizon { t: step, horizon: self.horizon });
        }
        Ok(if step < 0 { (step + h) as usize } else { (step + h - 1) as usize })
    }

    pub fn forward<T: Scalar>(&self, t: &Tape<T>, p: &Binding, features: Var, step: i32) -> Result<Var> {
        let row = self.token_row(step)?;
        let n = t.shape(features)[0];
        let tok = t.gather_rows(p.var(self.tokens), &vec![row; n]);
        let x = t.concat(&[features, tok], 1);
        Ok(self.mlp.forward(t, p, x))
    }
}

/// Plain snapshot of a decoded Gaussian set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub means: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
    pub scale: Vec<[f64; 3]>,
    pub rotation: Vec<[f64; 4]>,
    pub logits: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
}

fn rows<T: Scalar, const K: usize>(a: &Array<T>) -> Vec<[f64; K]> {
    a.data().chunks(K).map(|r| std::array::from_fn(|i| r[i].f64())).collect()
}

fn vec_rows<T: Scalar>(a: &Array<T>) -> Vec<Vec<f64>> {
    let w = a.shape().get(1).copied().unwrap_or(1).max(1);
    a.data().chunks(w).map(|r| r.iter().map(|v| v.f64()).collect()).collect()
}

impl GaussianSet {
    pub fn from_vars<T: Scalar>(t: &Tape<T>, d: &DecodedVars) -> Self {
        Self {
            means: rows::<T, 3>(&t.value(d.means)),
            opacity: t.value(d.opacity).data().iter().map(|v| v.f64()).collect(),
            scale: rows::<T, 3>(&t.value(d.scale)),
            rotation: rows::<T, 4>(&t.value(d.rotation)),
            logits: vec_rows(&t.value(d.logits)),
            features: vec_rows(&t.value(d.features)),
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.logits.first().map_or(0, Vec::len)
    }

    /// Copy with means moved by `flow` (`[N, 3]`).
    pub fn apply_flow(&self, flow: &[[f64; 3]]) -> Result<Self> {
        if flow.len() != self.len() {
            return Err(CoreError::Shape { what: "flow", expected: vec![self.len(), 3], got: vec![flow.len(), 3] });
        }
        let mut out = self.clone();
        for (m, v) in out.means.iter_mut().zip(flow) {
            for a in 0..3 {
                m[a] += v[a];
            }
        }
        Ok(out)
    }

    /// Violations of the opacity, scale and unit-rotation invariants.
    pub fn check(&self, scale_min: f64) -> Option<String> {
        for i in 0..self.len() {
            let o = self.opacity[i];
            if !(0.0..=1.0).contains(&o) {
                return Some(format!("opacity {o} of gaussian {i}"));
            }
            if self.scale[i].iter().any(|&s| !(s >= scale_min)) {
                return Some(format!("scale {:?} of gaussian {i}", self.scale[i]));
            }
            let n = self.rotation[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Some(format!("rotation norm {n} of gaussian {i}"));
            }
        }
        None
    }

    pub fn ply_rows(&self) -> Vec<PlyRow> {
        (0..self.len())
            .map(|i| {
                let (class, class_logit) = self.logits[i]
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
                PlyRow { mean: self.means[i], opacity: self.opacity[i], scale: self.scale[i], rotation: self.rotation[i], class, class_logit }
            })
            .collect()
    }
}

/// State carried from one frame to the next; gradients stop here.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMemory<T> {
    /// `[N, 3]` in the current ego frame.
    pub means: Array<T>,
    /// `[N, D]`
    pub features: Array<T>,
    /// Previous step's `v(+1)`.
    pub flow: Array<T>,
}

/// Moves `μ + v(+1)` of the previous frame into the current ego frame.
/// `curr_from_prev` maps previous ego coordinates to current ones.
pub fn advance_memory<T: Scalar>(means: &Array<T>, features: &Array<T>, flow_next: &Array<T>, curr_from_prev: &Rigid) -> TemporalMemory<T> {
    let moved: Vec<T> = means
        .data()
        .chunks(3)
        .zip(flow_next.data().chunks(3))
        .flat_map(|(m, v)| {
            let p = nalgebra::Vector3::new((m[0] + v[0]).f64(), (m[1] + v[1]).f64(), (m[2] + v[2]).f64());
            let q = curr_from_prev.apply(&p);
            [T::lit(q.x), T::lit(q.y), T::lit(q.z)]
        })
        .collect();
    TemporalMemory { means: Array::new(means.shape().to_vec(), moved), features: features.clone(), flow: flow_next.clone() }
}
