//! Front-to-back alpha compositing of screen-space Gaussians.
//!
//! Output images are `[H, W, C + 2]`: `C` semantic channels, normalized
//! depth, accumulated alpha. The tile renderer and the reference renderer
//! share the sort key `(depth, index)` and the per-pair alpha function.

use rayon::prelude::*;
use sgo_diff::{Array, Scalar, Tape, Var};

use crate::config::RenderConfig;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy)]
pub struct RasterSettings {
    pub tile: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub eps_acc: f64,
    pub normalize_depth: bool,
    pub background_depth: f64,
    pub reference_cap: usize,
}

impl From<&RenderConfig> for RasterSettings {
    fn from(c: &RenderConfig) -> Self {
        Self {
            tile: c.tile.max(1),
            alpha_min: c.alpha_min,
            alpha_max: c.alpha_max,
            eps_acc: c.eps_acc,
            normalize_depth: c.normalize_depth,
            background_depth: c.background_depth,
            reference_cap: c.reference_cap,
        }
    }
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self::from(&RenderConfig::default())
    }
}

/// Screen-space Gaussians of one camera, as flat slices.
#[derive(Clone, Copy)]
pub struct ScreenGaussians<'a, T> {
    /// `[N, 2]`
    pub mean2d: &'a [T],
    /// `[N, 3]` Σ'⁻¹ entries `(a, b, c)`.
    pub conic: &'a [T],
    /// `[N, 3]` Σ' entries `(xx, xy, yy)`, used only for binning.
    pub cov: &'a [T],
    /// `[N]`
    pub depth: &'a [T],
    /// `[N]`
    pub opacity: &'a [T],
    /// `[N, C]`
    pub colors: &'a [T],
    /// Culling flags; `false` for Gaussians behind the near plane.
    pub visible: &'a [bool],
    pub channels: usize,
}

struct Eval<T> {
    alpha: T,
    clamped: bool,
    dx: T,
    dy: T,
}

impl<T: Scalar> ScreenGaussians<'_, T> {
    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    /// Visible Gaussians sorted front to back by `(depth, index)`.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.visible[i]).collect();
        idx.sort_by(|&a, &b| self.depth[a].partial_cmp(&self.depth[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        idx
    }

    fn eval(&self, i: usize, px: T, py: T, s: &RasterSettings) -> Option<Eval<T>> {
        let dx = px - self.mean2d[2 * i];
        let dy = py - self.mean2d[2 * i + 1];
        let (a, b, c) = (self.conic[3 * i], self.conic[3 * i + 1], self.conic[3 * i + 2]);
        let q = a * dx * dx + T::lit(2.0) * b * dx * dy + c * dy * dy;
        let raw = self.opacity[i] * (T::lit(-0.5) * q).exp();
        let amax = T::lit(s.alpha_max);
        let (alpha, clamped) = if raw > amax { (amax, true) } else { (raw, false) };
        (alpha >= T::lit(s.alpha_min)).then_some(Eval { alpha, clamped, dx, dy })
    }

    /// Half-extents of the screen box outside which alpha < `alpha_min`.
    fn extent(&self, i: usize, s: &RasterSettings) -> (f64, f64) {
        let o = self.opacity[i].f64();
        let r2 = if o > s.alpha_min { 2.0 * (o / s.alpha_min).ln() } else { 0.0 };
        let r = (r2 + 0.01).sqrt().max(3.0);
        (r * self.cov[3 * i].f64().sqrt(), r * self.cov[3 * i + 2].f64().sqrt())
    }

    /// Composites `list` at pixel `(x, y)` into `out` (`C + 2` channels).
    fn composite(&self, list: &[usize], x: usize, y: usize, s: &RasterSettings, out: &mut [T]) {
        let c = self.channels;
        let px = T::lit(x as f64 + 0.5);
        let py = T::lit(y as f64 + 0.5);
        let mut trans = T::one();
        let mut dacc = T::zero();
        let mut acc = T::zero();
        out[..c].iter_mut().for_each(|v| *v = T::zero());
        for &i in list {
            let Some(e) = self.eval(i, px, py, s) else { continue };
            let w = trans * e.alpha;
            for k in 0..c {
                out[k] += w * self.colors[i * c + k];
            }
            dacc += w * self.depth[i];
            acc += w;
            trans *= T::one() - e.alpha;
        }
        out[c] = finalize_depth(dacc, acc, s);
        out[c + 1] = acc;
    }

    fn tiles(&self, h: usize, w: usize, s: &RasterSettings) -> Vec<(usize, usize, Vec<usize>)> {
        let ts = s.tile;
        let (tx, ty) = (w.div_ceil(ts), h.div_ceil(ts));
        let order = self.order();
        let mut bins: Vec<Vec<usize>> = vec![Vec::new(); tx * ty];
        for &i in &order {
            let (ex, ey) = self.extent(i, s);
            let (mx, my) = (self.mean2d[2 * i].f64(), self.mean2d[2 * i + 1].f64());
            // pixel x is touched when its centre x + 0.5 lies within [mx - ex, mx + ex]
            let px_lo = (mx - ex - 0.5).ceil();
            let px_hi = (mx + ex - 0.5).floor();
            let py_lo = (my - ey - 0.5).ceil();
            let py_hi = (my + ey - 0.5).floor();
            if !(px_lo <= px_hi && py_lo <= py_hi) || px_hi < 0.0 || py_hi < 0.0 || px_lo >= w as f64 || py_lo >= h as f64 {
                continue;
            }
            let lo_x = px_lo.max(0.0) as usize / ts;
            let lo_y = py_lo.max(0.0) as usize / ts;
            let hi_x = px_hi as usize / ts;
            let hi_y = py_hi as usize / ts;
            for by in lo_y..=hi_y.min(ty - 1) {
                for bx in lo_x..=hi_x.min(tx - 1) {
                    bins[by * tx + bx].push(i);
                }
            }
        }
        bins.into_iter()
            .enumerate()
            .map(|(k, list)| (k % tx, k / tx, list))
            .collect()
    }

    /// Tile-based forward pass, `[H · W · (C + 2)]`.
    pub fn render_tiles(&self, h: usize, w: usize, s: &RasterSettings) -> Vec<T> {
        let ch = self.channels + 2;
        let ts = s.tile;
        let tiles = self.tiles(h, w, s);
        let parts: Vec<(usize, usize, Vec<T>)> = tiles
            .par_iter()
            .map(|(bx, by, list)| {
                let (x0, y0) = (bx * ts, by * ts);
                let (x1, y1) = ((x0 + ts).min(w), (y0 + ts).min(h));
                let mut buf = vec![T::zero(); (x1 - x0) * (y1 - y0) * ch];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let o = ((y - y0) * (x1 - x0) + (x - x0)) * ch;
                        self.composite(list, x, y, s, &mut buf[o..o + ch]);
                    }
                }
                (*bx, *by, buf)
            })
            .collect();
        let mut out = vec![T::zero(); h * w * ch];
        for (bx, by, buf) in parts {
            let (x0, y0) = (bx * ts, by * ts);
            let (x1, y1) = ((x0 + ts).min(w), (y0 + ts).min(h));
            for y in y0..y1 {
                let src = (y - y0) * (x1 - x0) * ch;
                let dst = (y * w + x0) * ch;
                out[dst..dst + (x1 - x0) * ch].copy_from_slice(&buf[src..src + (x1 - x0) * ch]);
            }
        }
        out
    }

    /// Brute-force forward pass over the full sorted list at every pixel.
    pub fn render_reference(&self, h: usize, w: usize, s: &RasterSettings) -> Result<Vec<T>> {
        if self.len() > s.reference_cap {
            return Err(CoreError::CapExceeded { what: "reference renderer", n: self.len(), cap: s.reference_cap });
        }
        let ch = self.channels + 2;
        let order = self.order();
        let mut out = vec![T::zero(); h * w * ch];
        for y in 0..h {
            for x in 0..w {
                let o = (y * w + x) * ch;
                self.composite(&order, x, y, s, &mut out[o..o + ch]);
            }
        }
        Ok(out)
    }

    fn check_finite(&self) -> Result<()> {
        let c = self.channels;
        for i in 0..self.len() {
            let ok = self.mean2d[2 * i..2 * i + 2].iter()
                .chain(&self.conic[3 * i..3 * i + 3])
                .chain(&self.cov[3 * i..3 * i + 3])
                .chain(&self.colors[i * c..(i + 1) * c])
                .chain([&self.depth[i], &self.opacity[i]])
                .all(|v| v.is_finite());
            if !ok {
                return Err(CoreError::NonFiniteGaussian { index: i });
            }
        }
        Ok(())
    }

    /// Gradients w.r.t. `(mean2d, conic, depth, opacity, colors)` given the
    /// forward output and its gradient.
    fn backward(&self, h: usize, w: usize, s: &RasterSettings, out: &[T], grad: &[T]) -> [Vec<T>; 5] {
        let n = self.len();
        let c = self.channels;
        let ch = c + 2;
        let ts = s.tile;
        let stride = 7 + c;
        let tiles = self.tiles(h, w, s);
        let parts: Vec<Vec<T>> = tiles
            .par_iter()
            .map(|(bx, by, list)| {
                let mut g = vec![T::zero(); n * stride];
                if list.is_empty() {
                    return g;
                }
                let (x0, y0) = (bx * ts, by * ts);
                let (x1, y1) = ((x0 + ts).min(w), (y0 + ts).min(h));
                let mut stack: Vec<(usize, Eval<T>, T)> = Vec::with_capacity(list.len());
                for y in y0..y1 {
                    for x in x0..x1 {
                        let o = (y * w + x) * ch;
                        self.pixel_backward(list, x, y, s, &out[o..o + ch], &grad[o..o + ch], &mut stack, &mut g);
                    }
                }
                g
            })
            .collect();
        let mut total = vec![T::zero(); n * stride];
        for p in parts {
            for (a, b) in total.iter_mut().zip(p) {
                *a += b;
            }
        }
        let mut gm = vec![T::zero(); 2 * n];
        let mut gc = vec![T::zero(); 3 * n];
        let mut gd = vec![T::zero(); n];
        let mut go = vec![T::zero(); n];
        let mut gcol = vec![T::zero(); c * n];
        for i in 0..n {
            let r = &total[i * stride..(i + 1) * stride];
            gm[2 * i..2 * i + 2].copy_from_slice(&r[0..2]);
            gc[3 * i..3 * i + 3].copy_from_slice(&r[2..5]);
            gd[i] = r[5];
            go[i] = r[6];
            gcol[i * c..(i + 1) * c].copy_from_slice(&r[7..]);
        }
        [gm, gc, gd, go, gcol]
    }

    #[allow(clippy::too_many_arguments)]
    fn pixel_backward(
        &self,
        list: &[usize],
        x: usize,
        y: usize,
        s: &RasterSettings,
        out: &[T],
        grad: &[T],
        stack: &mut Vec<(usize, Eval<T>, T)>,
        g: &mut [T],
    ) {
        let c = self.channels;
        let stride = 7 + c;
        let px = T::lit(x as f64 + 0.5);
        let py = T::lit(y as f64 + 0.5);
        stack.clear();
        let mut trans = T::one();
        for &i in list {
            if let Some(e) = self.eval(i, px, py, s) {
                let a = e.alpha;
                stack.push((i, e, trans));
                trans *= T::one() - a;
            }
        }
        if stack.is_empty() {
            return;
        }
        let acc = out[c + 1];
        let g_sem = &grad[..c];
        let (g_dacc, g_acc) = depth_grads(out[c], acc, grad[c], grad[c + 1], s);
        let mut suffix = T::zero();
        for (i, e, ti) in stack.iter().rev() {
            let i = *i;
            let wsum = (0..c).map(|k| g_sem[k] * self.colors[i * c + k]).sum::<T>() + g_dacc * self.depth[i] + g_acc;
            let contrib = *ti * e.alpha;
            let g_alpha = *ti * wsum - suffix / (T::one() - e.alpha);
            suffix += contrib * wsum;
            let r = &mut g[i * stride..(i + 1) * stride];
            for k in 0..c {
                r[7 + k] += g_sem[k] * contrib;
            }
            r[5] += g_dacc * contrib;
            if e.clamped {
                continue;
            }
            let o = self.opacity[i];
            let gauss = e.alpha / o;
            r[6] += g_alpha * gauss;
            // α = o·exp(-q/2): ∂α/∂q = -α/2
            let g_q = g_alpha * e.alpha * T::lit(-0.5);
            let (a, b, cc) = (self.conic[3 * i], self.conic[3 * i + 1], self.conic[3 * i + 2]);
            let two = T::lit(2.0);
            r[0] += g_q * -(two * a * e.dx + two * b * e.dy);
            r[1] += g_q * -(two * b * e.dx + two * cc * e.dy);
            r[2] += g_q * e.dx * e.dx;
            r[3] += g_q * two * e.dx * e.dy;
            r[4] += g_q * e.dy * e.dy;
        }
    }
}

fn finalize_depth<T: Scalar>(dacc: T, acc: T, s: &RasterSettings) -> T {
    if !s.normalize_depth {
        dacc
    } else if acc > T::lit(s.eps_acc) {
        dacc / acc
    } else {
        T::lit(s.background_depth)
    }
}

/// Gradients of accumulated depth and alpha from those of the outputs.
fn depth_grads<T: Scalar>(depth_out: T, acc: T, g_depth: T, g_acc: T, s: &RasterSettings) -> (T, T) {
    if !s.normalize_depth {
        (g_depth, g_acc)
    } else if acc > T::lit(s.eps_acc) {
        (g_depth / acc, g_acc - g_depth * depth_out / acc)
    } else {
        (T::zero(), g_acc)
    }
}

/// Records the tile rasterizer on the tape. Inputs: `mean2d [N,2]`,
/// `conic [N,3]`, `depth [N]`, `opacity [N]`, `colors [N,C]`; `cov` and
/// `visible` are taken as constants. Output `[H, W, C+2]`.
#[allow(clippy::too_many_arguments)]
pub fn rasterize<T: Scalar>(
    t: &Tape<T>,
    mean2d: Var,
    conic: Var,
    cov: Var,
    depth: Var,
    opacity: Var,
    colors: Var,
    visible: Vec<bool>,
    size: (usize, usize),
    s: RasterSettings,
) -> Result<Var> {
    let (h, w) = size;
    let channels = t.shape(colors).get(1).copied().unwrap_or(0);
    let cov_vals = t.value(cov).data().to_vec();
    let (out, pairs) = {
        let (m, cn, d, o, col) = (t.value(mean2d), t.value(conic), t.value(depth), t.value(opacity), t.value(colors));
        let sg = ScreenGaussians {
            mean2d: m.data(),
            conic: cn.data(),
            cov: &cov_vals,
            depth: d.data(),
            opacity: o.data(),
            colors: col.data(),
            visible: &visible,
            channels,
        };
        sg.check_finite()?;
        let pairs: usize = sg.tiles(h, w, &s).iter().map(|(_, _, l)| l.len()).sum::<usize>() * s.tile * s.tile;
        (sg.render_tiles(h, w, &s), pairs)
    };
    let out = Array::new(vec![h, w, channels + 2], out);
    let flops = (pairs * (15 + 2 * channels)) as u64;
    Ok(t.custom("rasterize", &[mean2d, conic, depth, opacity, colors], out, flops, move |a| {
        let sg = ScreenGaussians {
            mean2d: a.inputs[0].data(),
            conic: a.inputs[1].data(),
            cov: &cov_vals,
            depth: a.inputs[2].data(),
            opacity: a.inputs[3].data(),
            colors: a.inputs[4].data(),
            visible: &visible,
            channels,
        };
        let [gm, gc, gd, go, gcol] = sg.backward(h, w, &s, a.output.data(), a.grad.data());
        vec![
            Some(Array::new(a.inputs[0].shape().to_vec(), gm)),
            Some(Array::new(a.inputs[1].shape().to_vec(), gc)),
            Some(Array::new(a.inputs[2].shape().to_vec(), gd)),
            Some(Array::new(a.inputs[3].shape().to_vec(), go)),
            Some(Array::new(a.inputs[4].shape().to_vec(), gcol)),
        ]
    }))
}
