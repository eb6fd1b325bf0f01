//! Rendering losses against image labels.

use sgo_diff::{Array, Scalar, Tape, Var};

use crate::config::SegLoss;
use crate::error::{CoreError, Result};
use crate::scene::SKY;

/// Probability clamp for the segmentation losses.
pub const PROB_EPS: f64 = 1e-6;

/// Labels of one camera view; pixels labelled [`SKY`] are ignored.
#[derive(Debug, Clone, Copy)]
pub struct ViewLabels<'a> {
    pub semantics: &'a [u8],
    pub depth: &'a [f32],
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub depth: f64,
    pub seg: f64,
    pub seg_loss: SegLoss,
}

/// Depth and segmentation terms of one frame, kept separately.
#[derive(Debug, Clone, Copy)]
pub struct FrameLoss {
    pub depth: Var,
    pub seg: Var,
    pub total: Var,
}

/// Loss of a frame rendered into several cameras: `w_d·MSE(D̂, D)` plus
/// `w_s·Σ_c BCE(Ŝ_c, y_c)` (or `-log Ŝ_y` for softmax CE), both averaged over
/// the valid pixels of all views. `None` when no pixel is valid.
pub fn frame_loss<T: Scalar>(t: &Tape<T>, images: &[Var], labels: &[ViewLabels<'_>], classes: usize, w: &LossWeights) -> Result<Option<FrameLoss>> {
    if images.len() != labels.len() {
        return Err(CoreError::Shape { what: "rendered views", expected: vec![labels.len()], got: vec![images.len()] });
    }
    let valid: usize = labels.iter().map(|l| l.semantics.iter().filter(|&&s| s != SKY).count()).sum();
    if valid == 0 {
        return Ok(None);
    }
    let inv = T::lit(1.0 / valid as f64);
    let mut depth_terms = Vec::new();
    let mut seg_terms = Vec::new();
    for (&img, lab) in images.iter().zip(labels) {
        let s = t.shape(img);
        let (h, wd) = (s[0], s[1]);
        if s[2] != classes + 2 || lab.semantics.len() != h * wd || lab.depth.len() != h * wd {
            return Err(CoreError::Shape { what: "view labels", expected: vec![h, wd, classes + 2], got: s });
        }
        let mask: Vec<T> = lab.semantics.iter().map(|&l| if l == SKY { T::zero() } else { T::one() }).collect();
        let m2 = t.constant(Array::new(vec![h, wd], mask.clone()));
        let gt = t.constant(Array::new(vec![h, wd], lab.depth.iter().map(|&d| T::lit(d as f64)).collect()));
        let d = t.slice(img, 2, classes, classes + 1);
        let d = t.reshape(d, &[h, wd]);
        let e = t.sub(d, gt);
        let e = t.square(e);
        let e = t.mul(e, m2);
        depth_terms.push(t.sum(e));

        let sem = t.slice(img, 2, 0, classes);
        let p = t.clamp(sem, T::lit(PROB_EPS), T::lit(1.0 - PROB_EPS));
        let onehot = Array::from_fn(&[h, wd, classes], |k| if lab.semantics[k / classes] as usize == k % classes { T::one() } else { T::zero() });
        let m3 = Array::from_fn(&[h, wd, 1], |k| mask[k]);
        let m3 = t.constant(m3);
        let term = match w.seg_loss {
            SegLoss::Bce => {
                let y = t.constant(onehot.clone());
                let ny = t.constant(onehot.map(|v| T::one() - v));
                let lp = t.ln(p);
                let one = t.neg(p);
                let one = t.add_scalar(one, T::one());
                let lq = t.ln(one);
                let a = t.mul(y, lp);
                let b = t.mul(ny, lq);
                let s = t.add(a, b);
                t.mul(s, m3)
            }
            SegLoss::SoftmaxCe => {
                let y = t.constant(onehot);
                let lp = t.ln(p);
                let a = t.mul(y, lp);
                t.mul(a, m3)
            }
        };
        let s = t.sum(term);
        seg_terms.push(t.neg(s));
    }
    let sum_all = |v: Vec<Var>| v.into_iter().reduce(|a, b| t.add(a, b)).expect("non-empty");
    let depth = t.mul_scalar(sum_all(depth_terms), inv);
    let seg = t.mul_scalar(sum_all(seg_terms), inv);
    let a = t.mul_scalar(depth, T::lit(w.depth));
    let b = t.mul_scalar(seg, T::lit(w.seg));
    Ok(Some(FrameLoss { depth, seg, total: t.add(a, b) }))
}

/// Per-class colours fed to the compositor: sigmoid for BCE, softmax for CE.
pub fn class_colors<T: Scalar>(t: &Tape<T>, logits: Var, seg_loss: SegLoss) -> Var {
    match seg_loss {
        SegLoss::Bce => t.sigmoid(logits),
        SegLoss::SoftmaxCe => t.softmax(logits),
    }
}
