//! Strided convolution stack producing one feature map per camera.

use rand::Rng;
use sgo_diff::{Array, Binding, ParamStore, Scalar, Tape, Var};

use super::nn::{Init, LayerNorm, Linear};
use crate::error::{CoreError, Result};

/// 3×3 patches with stride 2 and zero padding 1:
/// `[L, H, W, C]` → `[L, ceil(H/2), ceil(W/2), 9·C]`.
pub fn im2col<T: Scalar>(t: &Tape<T>, x: Var) -> Var {
    let shape = t.shape(x);
    let (l, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    // source offset of each output element, or None for padding
    let src = move |idx: usize| -> Option<usize> {
        let ch = idx % c;
        let tap = (idx / c) % 9;
        let ox = (idx / (9 * c)) % wo;
        let oy = (idx / (9 * c * wo)) % ho;
        let cam = idx / (9 * c * wo * ho);
        let iy = (2 * oy + tap / 3) as isize - 1;
        let ix = (2 * ox + tap % 3) as isize - 1;
        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
            return None;
        }
        Some(((cam * h + iy as usize) * w + ix as usize) * c + ch)
    };
    let n_out = l * ho * wo * 9 * c;
    let out = {
        let xv = t.value(x);
        let d = xv.data();
        Array::new(vec![l, ho, wo, 9 * c], (0..n_out).map(|i| src(i).map_or(T::zero(), |s| d[s])).collect())
    };
    t.custom("im2col", &[x], out, 0, move |a| {
        let mut g = vec![T::zero(); l * h * w * c];
        for (i, &gi) in a.grad.data().iter().enumerate() {
            if let Some(s) = src(i) {
                g[s] += gi;
            }
        }
        vec![Some(Array::new(vec![l, h, w, c], g))]
    })
}

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Linear,
    pub norm: LayerNorm,
}

/// Per-camera feature maps `[L, Hf, Wf, D]` with stride `2^blocks`.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub blocks: Vec<ConvBlock>,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng>(ps: &mut ParamStore<T>, rng: &mut R, channels: &[usize]) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut cin = 3;
        for (i, &c) in channels.iter().enumerate() {
            blocks.push(ConvBlock {
                conv: Linear::new(ps, rng, &format!("encoder.{i}.conv"), 9 * cin, c, Init::Xavier)?,
                norm: LayerNorm::new(ps, &format!("encoder.{i}.norm"), c)?,
            });
            cin = c;
        }
        Ok(Self { blocks })
    }

    pub fn stride(&self) -> usize {
        1 << self.blocks.len()
    }

    pub fn forward<T: Scalar>(&self, t: &Tape<T>, p: &Binding, images: Var) -> Result<Var> {
        let s = t.shape(images);
        if s.len() != 4 || s[3] != 3 {
            return Err(CoreError::Shape { what: "encoder images", expected: vec![0, 0, 0, 3], got: s });
        }
        let mut x = images;
        for b in &self.blocks {
            let cols = im2col(t, x);
            let y = b.conv.forward(t, p, cols);
            let y = t.silu(y);
            x = b.norm.forward(t, p, y);
        }
        Ok(x)
    }
}
