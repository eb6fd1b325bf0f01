//! Parameterised layers over the tape.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sgo_diff::{Array, Binding, ParamId, ParamStore, Scalar, Tape, Var};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (in + out)).
    Xavier,
    Zero,
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
}

pub fn init_array<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], init: Init) -> Array<T> {
    match init {
        Init::Zero => Array::zeros(shape),
        Init::Xavier => {
            let fan = shape.iter().rev().take(2).sum::<usize>().max(1) as f64;
            let a = (6.0 / fan).sqrt();
            Array::from_fn(shape, |_| T::lit(rng.random_range(-a..=a)))
        }
        Init::Normal(std) => {
            let n = Normal::new(0.0, std).expect("finite std");
            Array::from_fn(shape, |_| T::lit(n.sample(rng)))
        }
    }
}

/// `y = x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, name: &str, in_dim: usize, out_dim: usize, init: Init) -> Result<Self> {
        let w = ps.add(&format!("{name}.w"), init_array(rng, &[in_dim, out_dim], init))?;
        let b = ps.add(&format!("{name}.b"), Array::zeros(&[out_dim]))?;
        Ok(Self { w, b, in_dim, out_dim })
    }

    pub fn forward<T: Scalar>(&self, t: &Tape<T>, p: &Binding, x: Var) -> Var {
        t.linear(x, p.var(self.w), Some(p.var(self.b)))
    }
}

/// Layer normalisation over the last axis with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gain = ps.add(&format!("{name}.g"), Array::full(&[dim], T::one()))?;
        let bias = ps.add(&format!("{name}.b"), Array::zeros(&[dim]))?;
        Ok(Self { gain, bias })
    }

    pub fn forward<T: Scalar>(&self, t: &Tape<T>, p: &Binding, x: Var) -> Var {
        let n = t.layer_norm(x, T::lit(1e-5));
        let g = t.mul(n, p.var(self.gain));
        t.add(g, p.var(self.bias))
    }
}

/// Linear layers with SiLU in between; the last layer uses `last`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, name: &str, dims: &[usize], last: Init) -> Result<Self> {
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let init = if i + 2 == dims.len() { last } else { Init::Xavier };
            layers.push(Linear::new(ps, rng, &format!("{name}.{i}"), dims[i], dims[i + 1], init)?);
        }
        Ok(Self { layers })
    }

    pub fn forward<T: Scalar>(&self, t: &Tape<T>, p: &Binding, x: Var) -> Var {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(t, p, h);
            if i + 1 < self.layers.len() {
                h = t.silu(h);
            }
        }
        h
    }
}

/// Splits `[N, D]` into heads `[h, N, D/h]`.
pub fn split_heads<T: Scalar>(t: &Tape<T>, x: Var, heads: usize) -> Var {
    let s = t.shape(x);
    let r = t.reshape(x, &[s[0], heads, s[1] / heads]);
    t.permute(r, &[1, 0, 2])
}

/// Inverse of [`split_heads`].
pub fn merge_heads<T: Scalar>(t: &Tape<T>, x: Var) -> Var {
    let s = t.shape(x);
    let p = t.permute(x, &[1, 0, 2]);
    t.reshape(p, &[s[1], s[0] * s[2]])
}

/// Multi-head attention block with pre-normalisation:
/// `h = q + O(MHA(LN(q), LN(kv)))`, `out = h + FFN(LN(h))`.
#[derive(Debug, Clone)]
pub struct MhaBlock {
    pub heads: usize,
    pub dim: usize,
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln_ffn: LayerNorm,
    pub ffn: Mlp,
}

impl MhaBlock {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, name: &str, dim: usize, heads: usize, ffn_mult: usize) -> Result<Self> {
        Ok(Self {
            heads,
            dim,
            ln_q: LayerNorm::new(ps, &format!("{name}.ln_q"), dim)?,
            ln_kv: LayerNorm::new(ps, &format!("{name}.ln_kv"), dim)?,
            q: Linear::new(ps, rng, &format!("{name}.q"), dim, dim, Init::Xavier)?,
            k: Linear::new(ps, rng, &format!("{name}.k"), dim, dim, Init::Xavier)?,
            v: Linear::new(ps, rng, &format!("{name}.v"), dim, dim, Init::Xavier)?,
            o: Linear::new(ps, rng, &format!("{name}.o"), dim, dim, Init::Xavier)?,
            ln_ffn: LayerNorm::new(ps, &format!("{name}.ln_ffn"), dim)?,
            ffn: Mlp::new(ps, rng, &format!("{name}.ffn"), &[dim, ffn_mult * dim, dim], Init::Xavier)?,
        })
    }

    /// Attention weights `[h, Nq, Nk]` and merged head outputs `[Nq, D]`.
    pub fn attend<T: Scalar>(&self, t: &Tape<T>, p: &Binding, query: Var, kv: Var) -> (Var, Var) {
        let qn = self.ln_q.forward(t, p, query);
        let kn = self.ln_kv.forward(t, p, kv);
        let scale = 1.0 / ((self.dim / self.heads) as f64).sqrt();
        let q = self.q.forward(t, p, qn);
        let q = t.mul_scalar(q, T::lit(scale));
        let k = self.k.forward(t, p, kn);
        let v = self.v.forward(t, p, kn);
        let (q, k, v) = (split_heads(t, q, self.heads), split_heads(t, k, self.heads), split_heads(t, v, self.heads));
        let scores = t.bmm(q, k, true);
        let w = t.softmax(scores);
        let o = t.bmm(w, v, false);
        (w, merge_heads(t, o))
    }

    pub fn forward<T: Scalar>(&self, t: &Tape<T>, p: &Binding, query: Var, kv: Var) -> Var {
        let (_, o) = self.attend(t, p, query, kv);
        let o = self.o.forward(t, p, o);
        let h = t.add(query, o);
        self.feed_forward(t, p, h)
    }

    /// `h + FFN(LN(h))`.
    pub fn feed_forward<T: Scalar>(&self, t: &Tape<T>, p: &Binding, h: Var) -> Var {
        let n = self.ln_ffn.forward(t, p, h);
        let f = self.ffn.forward(t, p, n);
        t.add(h, f)
    }
}
