//! Voxel grids and analytic voxelization of Gaussian sets.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sgo_diff::container::{write_container, NamedTensor};
use sgo_diff::{Array, Scalar, Tape, Var};

use crate::error::{config_err, io_err, CoreError, Result};
use crate::export::write_xyz;

/// Label of unoccupied voxels.
pub const FREE: u8 = 255;

/// Axis-aligned grid in ego coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Corner of voxel (0, 0, 0).
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl GridSpec {
    /// 40×40×8 voxels of 0.4 m over 16×16×3.2 m around the ego. The
    /// bottom layer lies just under the ground so that voxel faces, not
    /// centres, sit on z = 0.
    pub fn desk() -> Self {
        Self {
            origin: [-8.0, -8.0, -0.4],
            voxel_size: 0.4,
            dims: [40, 40, 8],
        }
    }

    /// 200×200×16 voxels of 0.4 m spanning [-40, 40]² × [-1, 5.4].
    pub fn full_scale() -> Self {
        Self {
            origin: [-40.0, -40.0, -1.0],
            voxel_size: 0.4,
            dims: [200, 200, 16],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(config_err("voxelize.dims", "dims must be positive"));
        }
        if !(self.voxel_size > 0.0) {
            return Err(config_err("voxelize.voxel_size", "must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.voxel_size,
            self.origin[1] + (j as f64 + 0.5) * self.voxel_size,
            self.origin[2] + (k as f64 + 0.5) * self.voxel_size,
        ]
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn locate(&self, p: &[f64; 3]) -> Option<(usize, usize, usize)> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = f as usize;
        }
        Some((idx[0], idx[1], idx[2]))
    }

    /// Upper corner of the grid.
    pub fn max_corner(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + self.dims[a] as f64 * self.voxel_size)
    }
}

/// Gaussians in flat slices, as consumed by the voxelizer.
#[derive(Clone, Copy)]
pub struct VoxelInputs<'a, T> {
    /// `[N, 3]`
    pub means: &'a [T],
    /// `[N, 6]` Σ⁻¹ entries `(xx, xy, xz, yy, yz, zz)`.
    pub inv_cov: &'a [T],
    /// `[N]` truncation radius in metres.
    pub radius: &'a [f64],
    /// `[N]`
    pub opacity: &'a [T],
    /// `[N, C]`
    pub colors: &'a [T],
    pub channels: usize,
}

/// Gaussians per partial grid; fixed so sums do not depend on thread count.
const CHUNK: usize = 32;

impl<T: Scalar> VoxelInputs<'_, T> {
    pub fn len(&self) -> usize {
        self.opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity.is_empty()
    }

    /// Voxel index ranges covered by Gaussian `i` along each axis.
    fn window(&self, i: usize, grid: &GridSpec) -> Option<[(usize, usize); 3]> {
        let mut w = [(0, 0); 3];
        for a in 0..3 {
            let m = self.means[3 * i + a].f64();
            let r = self.radius[i];
            // centres c_k = origin + (k + 0.5)·size within [m - r, m + r]
            let lo = ((m - r - grid.origin[a]) / grid.voxel_size - 0.5).ceil().max(0.0);
            let hi = ((m + r - grid.origin[a]) / grid.voxel_size - 0.5).floor();
            if !(lo <= hi) || hi < 0.0 || lo >= grid.dims[a] as f64 {
                return None;
            }
            w[a] = (lo as usize, (hi as usize).min(grid.dims[a] - 1));
        }
        Some(w)
    }

    fn visit(&self, i: usize, grid: &GridSpec, mut f: impl FnMut(usize, [T; 3], T)) {
        let Some(w) = self.window(i, grid) else { return };
        let p = &self.inv_cov[6 * i..6 * i + 6];
        let two = T::lit(2.0);
        for x in w[0].0..=w[0].1 {
            for y in w[1].0..=w[1].1 {
                for z in w[2].0..=w[2].1 {
                    let c = grid.center(x, y, z);
                    let d = [0, 1, 2].map(|a| T::lit(c[a]) - self.means[3 * i + a]);
                    let q = p[0] * d[0] * d[0]
                        + p[3] * d[1] * d[1]
                        + p[5] * d[2] * d[2]
                        + two * (p[1] * d[0] * d[1] + p[2] * d[0] * d[2] + p[4] * d[1] * d[2]);
                    f(grid.index(x, y, z), d, (T::lit(-0.5) * q).exp());
                }
            }
        }
    }

    /// Per-voxel `[v_c (C), v_o]` accumulations, `[V · (C + 1)]`.
    pub fn accumulate(&self, grid: &GridSpec) -> Vec<T> {
        let c = self.channels;
        let stride = c + 1;
        let starts: Vec<usize> = (0..self.len()).step_by(CHUNK).collect();
        let parts: Vec<Vec<T>> = starts
            .par_iter()
            .map(|&s| {
                let mut acc = vec![T::zero(); grid.len() * stride];
                for i in s..(s + CHUNK).min(self.len()) {
                    self.visit(i, grid, |v, _, k| {
                        let row = &mut acc[v * stride..(v + 1) * stride];
                        for ch in 0..c {
                            row[ch] += k * self.colors[i * c + ch];
                        }
                        row[c] += k * self.opacity[i];
                    });
                }
                acc
            })
            .collect();
        let mut out = vec![T::zero(); grid.len() * stride];
        for p in parts {
            for (a, b) in out.iter_mut().zip(p) {
                *a += b;
            }
        }
        out
    }

    /// Gradients w.r.t. `(means, inv_cov, opacity, colors)`.
    fn backward(&self, grid: &GridSpec, grad: &[T]) -> [Vec<T>; 4] {
        let n = self.len();
        let c = self.channels;
        let stride = c + 1;
        let per: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| {
                // [μ (3), Σ⁻¹ (6), o, c (C)]
                let mut g = vec![T::zero(); 10 + c];
                let p = &self.inv_cov[6 * i..6 * i + 6];
                self.visit(i, grid, |v, d, k| {
                    let gv = &grad[v * stride..(v + 1) * stride];
                    let mut gk = gv[c] * self.opacity[i];
                    for ch in 0..c {
                        gk += gv[ch] * self.colors[i * c + ch];
                        g[10 + ch] += gv[ch] * k;
                    }
                    g[9] += gv[c] * k;
                    let gq = gk * k * T::lit(-0.5);
                    // q = Δᵀ P Δ with Δ = p - μ, so ∂q/∂μ = -2 P Δ
                    let pd = [
                        p[0] * d[0] + p[1] * d[1] + p[2] * d[2],
                        p[1] * d[0] + p[3] * d[1] + p[4] * d[2],
                        p[2] * d[0] + p[4] * d[1] + p[5] * d[2],
                    ];
                    let m2 = T::lit(-2.0);
                    for a in 0..3 {
                        g[a] += gq * m2 * pd[a];
                    }
                    let two = T::lit(2.0);
                    g[3] += gq * d[0] * d[0];
                    g[4] += gq * two * d[0] * d[1];
                    g[5] += gq * two * d[0] * d[2];
                    g[6] += gq * d[1] * d[1];
                    g[7] += gq * two * d[1] * d[2];
                    g[8] += gq * d[2] * d[2];
                });
                g
            })
            .collect();
        let mut gm = Vec::with_capacity(3 * n);
        let mut gp = Vec::with_capacity(6 * n);
        let mut go = Vec::with_capacity(n);
        let mut gc = Vec::with_capacity(c * n);
        for g in per {
            gm.extend_from_slice(&g[0..3]);
            gp.extend_from_slice(&g[3..9]);
            go.push(g[9]);
            gc.extend_from_slice(&g[10..]);
        }
        [gm, gp, go, gc]
    }
}

/// Records the voxelizer on the tape. Inputs `means [N,3]`, `inv_cov [N,6]`,
/// `opacity [N]`, `colors [N,C]`; `radius` is constant. Output `[V, C+1]`
/// with `v_o` in the last column.
pub fn voxelize_vars<T: Scalar>(
    t: &Tape<T>,
    means: Var,
    inv_cov: Var,
    opacity: Var,
    colors: Var,
    radius: Vec<f64>,
    grid: &GridSpec,
) -> Var {
    let channels = t.shape(colors).get(1).copied().unwrap_or(0);
    let grid = grid.clone();
    let out = {
        let (m, p, o, c) = (t.value(means), t.value(inv_cov), t.value(opacity), t.value(colors));
        let inp = VoxelInputs { means: m.data(), inv_cov: p.data(), radius: &radius, opacity: o.data(), colors: c.data(), channels };
        inp.accumulate(&grid)
    };
    let flops = radius.iter().map(|r| (2.0 * r / grid.voxel_size + 1.0).powi(3)).sum::<f64>() as u64 * (20 + 2 * channels as u64);
    let out = Array::new(vec![grid.len(), channels + 1], out);
    t.custom("voxelize", &[means, inv_cov, opacity, colors], out, flops, move |a| {
        let inp = VoxelInputs {
            means: a.inputs[0].data(),
            inv_cov: a.inputs[1].data(),
            radius: &radius,
            opacity: a.inputs[2].data(),
            colors: a.inputs[3].data(),
            channels,
        };
        let g = inp.backward(&grid, a.grad.data());
        g.into_iter()
            .zip(a.inputs)
            .map(|(g, x)| Some(Array::new(x.shape().to_vec(), g)))
            .collect()
    })
}

/// Softmax cross-entropy of per-voxel logits `[v_c, κ(τ - v_o)]` against
/// `gt` labels (`FREE` maps to the last class). Averaged over voxels.
pub fn voxel_ce_loss<T: Scalar>(t: &Tape<T>, acc: Var, gt: &[u8], classes: usize, tau: f64, kappa: f64) -> Result<Var> {
    let shape = t.shape(acc);
    if shape.len() != 2 || shape[1] != classes + 1 || shape[0] != gt.len() {
        return Err(CoreError::Shape { what: "voxel labels", expected: vec![gt.len(), classes + 1], got: shape });
    }
    let v = gt.len();
    let vc = t.slice(acc, 1, 0, classes);
    let vo = t.slice(acc, 1, classes, classes + 1);
    let free = t.mul_scalar(vo, T::lit(-kappa));
    let free = t.add_scalar(free, T::lit(kappa * tau));
    let logits = t.concat(&[vc, free], 1);
    let ls = t.log_softmax(logits);
    let mut onehot = vec![T::zero(); v * (classes + 1)];
    for (i, &l) in gt.iter().enumerate() {
        let k = if l == FREE { classes } else { l as usize };
        if k > classes {
            return Err(CoreError::Format(format!("voxel label {l} out of range for {classes} classes")));
        }
        onehot[i * (classes + 1) + k] = T::one();
    }
    let oh = t.constant(Array::new(vec![v, classes + 1], onehot));
    let picked = t.mul(ls, oh);
    let s = t.sum(picked);
    Ok(t.mul_scalar(s, T::lit(-1.0 / v.max(1) as f64)))
}

/// Evaluated occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub classes: usize,
    /// `v_o` per voxel.
    pub occupancy: Vec<f64>,
    /// Argmax class, or [`FREE`] where `v_o <= τ`.
    pub labels: Vec<u8>,
    /// `v_c` per voxel, `[V, C]`.
    pub logits: Vec<f64>,
}

impl VoxelGrid {
    /// Builds a grid from `[V, C + 1]` accumulations.
    pub fn from_accumulation<T: Scalar>(spec: &GridSpec, classes: usize, acc: &[T], tau: f64) -> Self {
        let stride = classes + 1;
        let mut occupancy = Vec::with_capacity(spec.len());
        let mut labels = Vec::with_capacity(spec.len());
        let mut logits = Vec::with_capacity(spec.len() * classes);
        for row in acc.chunks(stride) {
            let vo = row[classes].f64();
            let cls = &row[..classes];
            logits.extend(cls.iter().map(|v| v.f64()));
            occupancy.push(vo);
            labels.push(if vo > tau { argmax(cls) as u8 } else { FREE });
        }
        Self { spec: spec.clone(), classes, occupancy, labels, logits }
    }

    pub fn voxelize<T: Scalar>(inp: &VoxelInputs<'_, T>, spec: &GridSpec, tau: f64) -> Self {
        Self::from_accumulation(spec, inp.channels, &inp.accumulate(spec), tau)
    }

    pub fn occupied(&self) -> Vec<([f64; 3], u8)> {
        let [nx, ny, nz] = self.spec.dims;
        let mut out = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let l = self.labels[self.spec.index(i, j, k)];
                    if l != FREE {
                        out.push((self.spec.center(i, j, k), l));
                    }
                }
            }
        }
        out
    }

    /// Writes `voxels.bin`, `voxels.json` and `voxels.xyz` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let [nx, ny, nz] = self.spec.dims;
        let entries = vec![
            NamedTensor::from_array("occupancy", &Array::new(vec![nx, ny, nz], self.occupancy.clone())),
            NamedTensor::u8("labels", &[nx, ny, nz], self.labels.clone()),
            NamedTensor::from_array("logits", &Array::new(vec![nx, ny, nz, self.classes], self.logits.clone())),
        ];
        let path = dir.join("voxels.bin");
        let f = std::fs::File::create(&path).map_err(io_err(&path))?;
        write_container(std::io::BufWriter::new(f), &entries)?;
        let meta = serde_json::json!({
            "grid": self.spec,
            "classes": self.classes,
            "free_label": FREE,
            "occupied": self.labels.iter().filter(|&&l| l != FREE).count(),
        });
        let path = dir.join("voxels.json");
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(io_err(&path))?;
        write_xyz(&dir.join("voxels.xyz"), &self.occupied())
    }
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-Gaussian truncation radius `factor · max(s)` from `[N, 3]` scales.
pub fn truncation_radius<T: Scalar>(scale: &[T], factor: f64) -> Vec<f64> {
    scale.chunks(3).map(|s| factor * s.iter().map(|v| v.f64()).fold(0.0, f64::max)).collect()
}
