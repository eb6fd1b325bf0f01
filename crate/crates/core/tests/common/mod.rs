//! Fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sgo_core::model::nn::init_array;
use sgo_core::model::Init;
use sgo_core::scene::Camera;
use sgo_core::splat::{build_covariance, inverse_covariance, normalize_quat, quat_to_rotmat, GaussianVars, ScreenGaussians};
use sgo_core::voxel::{truncation_radius, GridSpec, VoxelInputs};
use sgo_diff::{Array, ParamStore, Tape};

pub struct Scene {
    pub means: Vec<f64>,
    pub quats: Vec<f64>,
    pub scales: Vec<f64>,
    pub opacity: Vec<f64>,
    pub colors: Vec<f64>,
    pub channels: usize,
}

pub fn random_scene(rng: &mut ChaCha8Rng, n: usize, channels: usize) -> Scene {
    let mut s = Scene { means: vec![], quats: vec![], scales: vec![], opacity: vec![], colors: vec![], channels };
    for _ in 0..n {
        let x = rng.random_range(2.0..8.0);
        s.means.extend([x, rng.random_range(-0.6..0.6) * x, rng.random_range(-0.4..0.4) * x]);
        for _ in 0..4 {
            s.quats.push(rng.random_range(-1.0..1.0));
        }
        for _ in 0..3 {
            s.scales.push(rng.random_range(0.1..0.7));
        }
        s.opacity.push(rng.random_range(0.1..0.9));
        for _ in 0..channels {
            s.colors.push(rng.random_range(0.0..1.0));
        }
    }
    s
}

pub fn camera(h: usize, w: usize) -> Camera {
    Camera::looking("front", 0.0, [0.0, 0.0, 0.0], 90.0, h, w)
}

pub fn arrays(s: &Scene) -> Vec<Array<f64>> {
    let n = s.opacity.len();
    vec![
        Array::new(vec![n, 3], s.means.clone()),
        Array::new(vec![n, 4], s.quats.clone()),
        Array::new(vec![n, 3], s.scales.clone()),
        Array::new(vec![n], s.opacity.clone()),
        Array::new(vec![n, s.channels], s.colors.clone()),
    ]
}

pub fn vars(t: &Tape<f64>, v: &[sgo_diff::Var]) -> GaussianVars {
    GaussianVars { means: v[0], rotm: { let u = normalize_quat(t, v[1]); quat_to_rotmat(t, u) }, scale: v[2], opacity: v[3], colors: v[4] }
}

/// Screen-space values of a scene, evaluated once on a throwaway tape.
pub struct Screen {
    pub mean2d: Vec<f64>,
    pub conic: Vec<f64>,
    pub cov: Vec<f64>,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
    pub colors: Vec<f64>,
    pub visible: Vec<bool>,
    pub channels: usize,
}

impl Screen {
    pub fn new(s: &Scene, cam: &Camera, near: f64) -> Self {
        let t = Tape::<f64>::new();
        let v: Vec<_> = arrays(s).into_iter().map(|a| t.constant(a)).collect();
        let g = vars(&t, &v);
        let p = sgo_core::splat::project(&t, g.means, g.rotm, g.scale, cam, near, 0.3);
        let val = |x| t.value(x).data().to_vec();
        Self {
            mean2d: val(p.mean2d),
            conic: val(p.conic),
            cov: val(p.cov),
            depth: val(p.depth),
            opacity: s.opacity.clone(),
            colors: s.colors.clone(),
            visible: p.z.iter().map(|&z| z > near).collect(),
            channels: s.channels,
        }
    }

    pub fn view(&self) -> ScreenGaussians<'_, f64> {
        ScreenGaussians {
            mean2d: &self.mean2d,
            conic: &self.conic,
            cov: &self.cov,
            depth: &self.depth,
            opacity: &self.opacity,
            colors: &self.colors,
            visible: &self.visible,
            channels: self.channels,
        }
    }

    /// Alpha of Gaussian `i` at pixel `(x, y)` before clamping.
    pub fn raw_alpha(&self, i: usize, x: usize, y: usize) -> f64 {
        let dx = x as f64 + 0.5 - self.mean2d[2 * i];
        let dy = y as f64 + 0.5 - self.mean2d[2 * i + 1];
        let (a, b, c) = (self.conic[3 * i], self.conic[3 * i + 1], self.conic[3 * i + 2]);
        self.opacity[i] * (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp()
    }
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}


pub struct VoxSet {
    pub means: Vec<f64>,
    pub quats: Vec<f64>,
    pub scales: Vec<f64>,
    pub opacity: Vec<f64>,
    pub colors: Vec<f64>,
    pub channels: usize,
}

impl VoxSet {
    pub fn len(&self) -> usize {
        self.opacity.len()
    }

    pub fn inv_cov(&self) -> Vec<f64> {
        let t = Tape::<f64>::new();
        let q = t.constant(Array::new(vec![self.len(), 4], self.quats.clone()));
        let s = t.constant(Array::new(vec![self.len(), 3], self.scales.clone()));
        let u = normalize_quat(&t, q);
        let r = quat_to_rotmat(&t, u);
        let p = inverse_covariance(&t, r, s);
        let v = t.value(p).data().to_vec();
        v
    }

    pub fn accumulate(&self, grid: &GridSpec, factor: f64) -> Vec<f64> {
        let p = self.inv_cov();
        let radius = truncation_radius(&self.scales, factor);
        VoxelInputs { means: &self.means, inv_cov: &p, radius: &radius, opacity: &self.opacity, colors: &self.colors, channels: self.channels }
            .accumulate(grid)
    }
}

pub fn random_set(rng: &mut ChaCha8Rng, n: usize, channels: usize, grid: &GridSpec) -> VoxSet {
    let hi = grid.max_corner();
    let mut s = VoxSet { means: vec![], quats: vec![], scales: vec![], opacity: vec![], colors: vec![], channels };
    for _ in 0..n {
        for a in 0..3 {
            s.means.push(rng.random_range(grid.origin[a]..hi[a]));
        }
        for _ in 0..4 {
            s.quats.push(rng.random_range(-1.0..1.0));
        }
        for _ in 0..3 {
            s.scales.push(rng.random_range(0.05..0.5));
        }
        s.opacity.push(rng.random_range(0.05..1.0));
        for _ in 0..channels {
            s.colors.push(rng.random_range(-2.0..2.0));
        }
    }
    s
}

/// Kernel sums over every voxel with Σ built and inverted independently.
pub fn full_oracle(s: &VoxSet, grid: &GridSpec) -> Vec<f64> {
    let c = s.channels;
    let mut out = vec![0.0; grid.len() * (c + 1)];
    for i in 0..s.len() {
        let q = [s.quats[4 * i], s.quats[4 * i + 1], s.quats[4 * i + 2], s.quats[4 * i + 3]];
        let sc = [s.scales[3 * i], s.scales[3 * i + 1], s.scales[3 * i + 2]];
        let inv = build_covariance(sc, q).try_inverse().unwrap();
        let mu = Vector3::new(s.means[3 * i], s.means[3 * i + 1], s.means[3 * i + 2]);
        for x in 0..grid.dims[0] {
            for y in 0..grid.dims[1] {
                for z in 0..grid.dims[2] {
                    let d = Vector3::from(grid.center(x, y, z)) - mu;
                    let k = (-0.5 * (d.transpose() * inv * d)[0]).exp();
                    let v = grid.index(x, y, z) * (c + 1);
                    for ch in 0..c {
                        out[v + ch] += k * s.colors[i * c + ch];
                    }
                    out[v + c] += k * s.opacity[i];
                }
            }
        }
    }
    out
}

pub fn small_grid(n: usize) -> GridSpec {
    GridSpec { origin: [-1.0, 0.5, -0.3], voxel_size: 0.4, dims: [n, n, n] }
}

/// Redraws every parameter under `prefix` from N(0, std²).
pub fn randomize(ps: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, prefix: &str, std: f64) {
    let ids: Vec<_> = ps.ids().filter(|&id| ps.name(id).starts_with(prefix)).collect();
    assert!(!ids.is_empty(), "no params under {prefix}");
    for id in ids {
        let shape = ps.get(id).shape().to_vec();
        *ps.get_mut(id) = init_array(rng, &shape, Init::Normal(std));
    }
}

pub fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array<f64> {
    Array::from_fn(shape, |_| rng.random_range(lo..hi))
}
