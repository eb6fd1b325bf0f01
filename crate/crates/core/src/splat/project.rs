//! Perspective projection of 3D Gaussians to screen-space ellipses.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use sgo_diff::{Array, Scalar, Tape, Var};

use super::covariance::build_covariance;
use crate::geometry::Rigid;
use crate::scene::Camera;

/// Screen-space Gaussian from the plain projection route.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    /// Σ' including the low-pass term.
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub index: usize,
    pub opacity: f64,
}

/// Perspective Jacobian of `(fx x/z + cx, fy y/z + cy)` at a camera point,
/// with x/z and y/z clamped to 1.3× the half field of view.
pub fn perspective_jacobian(cam: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let lx = 1.3 * 0.5 * cam.width as f64 / cam.fx;
    let ly = 1.3 * 0.5 * cam.height as f64 / cam.fy;
    let xj = (p.x * iz).clamp(-lx, lx);
    let yj = (p.y * iz).clamp(-ly, ly);
    Matrix2x3::new(cam.fx * iz, 0.0, -cam.fx * xj * iz, 0.0, cam.fy * iz, -cam.fy * yj * iz)
}

/// EWA projection `Σ' = J W Σ Wᵀ Jᵀ + λ I` of one Gaussian given in ego
/// coordinates. Culled behind `near` or when the 3σ ellipse misses the image.
#[allow(clippy::too_many_arguments)]
pub fn project_gaussian(
    index: usize,
    mean: [f64; 3],
    scale: [f64; 3],
    rotation: [f64; 4],
    opacity: f64,
    cam: &Camera,
    near: f64,
    lowpass: f64,
) -> Option<ProjectedGaussian> {
    let w: &Rigid = &cam.cam_from_ego;
    let pc = w.apply(&Vector3::from(mean));
    if pc.z <= near {
        return None;
    }
    let j = perspective_jacobian(cam, &pc);
    let sigma = build_covariance(scale, rotation);
    let cov_cam: Matrix3<f64> = w.rotation * sigma * w.rotation.transpose();
    let cov2d = j * cov_cam * j.transpose() + Matrix2::identity() * lowpass;
    let mean2d = Vector2::new(cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy);
    let ex = 3.0 * cov2d[(0, 0)].sqrt();
    let ey = 3.0 * cov2d[(1, 1)].sqrt();
    if mean2d.x + ex < 0.0 || mean2d.x - ex > cam.width as f64 || mean2d.y + ey < 0.0 || mean2d.y - ey > cam.height as f64 {
        return None;
    }
    Some(ProjectedGaussian { mean2d, cov2d, depth: pc.z, index, opacity })
}

/// Projected quantities recorded on the tape.
pub struct ProjectedVars {
    /// `[N, 2]` pixel coordinates.
    pub mean2d: Var,
    /// `[N, 3]` entries `(xx, xy, yy)` of Σ'.
    pub cov: Var,
    /// `[N, 3]` entries `(a, b, c)` of Σ'⁻¹.
    pub conic: Var,
    /// `[N]` z-depth clamped below at the near plane.
    pub depth: Var,
    /// Raw camera z per Gaussian, used for culling.
    pub z: Vec<f64>,
}

/// Tape version of [`project_gaussian`] for all Gaussians at once, from
/// means `[N, 3]`, rotation matrices `[N, 9]` and scales `[N, 3]`.
pub fn project<T: Scalar>(t: &Tape<T>, means: Var, rotm: Var, scale: Var, cam: &Camera, near: f64, lowpass: f64) -> ProjectedVars {
    let n = t.shape(means)[0];
    let w = cam.cam_from_ego.rotation;
    let wt = t.constant(Array::from_fn(&[3, 3], |k| T::lit(w[(k % 3, k / 3)])));
    let tc = t.constant(Array::from_fn(&[3], |k| T::lit(cam.cam_from_ego.translation[k])));
    let pm = t.matmul(means, wt);
    let pc = t.add(pm, tc);
    let z = t.value(pc).data().chunks(3).map(|r| r[2].f64()).collect();
    let x = t.col(pc, 0);
    let y = t.col(pc, 1);
    let zc = t.col(pc, 2);
    let zs = t.clamp(zc, T::lit(near), T::infinity());
    let iz = t.recip(zs);
    let xi = t.mul(x, iz);
    let yi = t.mul(y, iz);
    let u = t.mul_scalar(xi, T::lit(cam.fx));
    let u = t.add_scalar(u, T::lit(cam.cx));
    let v = t.mul_scalar(yi, T::lit(cam.fy));
    let v = t.add_scalar(v, T::lit(cam.cy));
    let mean2d = t.stack_cols(&[u, v]);

    // M = R diag(s), then W M via a 9×9 constant acting on the flat rows.
    let s3 = t.concat(&[scale, scale, scale], 1);
    let m = t.mul(rotm, s3);
    let k = Array::from_fn(&[9, 9], |idx| {
        let (src, dst) = (idx / 9, idx % 9);
        let (j, kk) = (src / 3, src % 3);
        let (i, kk2) = (dst / 3, dst % 3);
        if kk == kk2 { T::lit(w[(i, j)]) } else { T::zero() }
    });
    let k = t.constant(k);
    let wm = t.matmul(m, k);
    let r0 = t.slice(wm, 1, 0, 3);
    let r1 = t.slice(wm, 1, 3, 6);
    let r2 = t.slice(wm, 1, 6, 9);
    let col = |a: Var| t.reshape(a, &[n, 1]);
    // The Jacobian sees x/z and y/z clamped to 1.3× the half field of view,
    // which bounds the footprint of Gaussians far outside the image.
    let lx = 1.3 * 0.5 * cam.width as f64 / cam.fx;
    let ly = 1.3 * 0.5 * cam.height as f64 / cam.fy;
    let xj = t.clamp(xi, T::lit(-lx), T::lit(lx));
    let yj = t.clamp(yi, T::lit(-ly), T::lit(ly));
    let a0 = col(t.mul_scalar(iz, T::lit(cam.fx)));
    let xiz2 = t.mul(xj, iz);
    let b0 = col(t.mul_scalar(xiz2, T::lit(-cam.fx)));
    let a1 = col(t.mul_scalar(iz, T::lit(cam.fy)));
    let yiz2 = t.mul(yj, iz);
    let b1 = col(t.mul_scalar(yiz2, T::lit(-cam.fy)));
    let t0 = {
        let p = t.mul(r0, a0);
        let q = t.mul(r2, b0);
        t.add(p, q)
    };
    let t1 = {
        let p = t.mul(r1, a1);
        let q = t.mul(r2, b1);
        t.add(p, q)
    };
    let dot = |a: Var, b: Var| {
        let p = t.mul(a, b);
        t.sum_axis(p, 1)
    };
    let xx = t.add_scalar(dot(t0, t0), T::lit(lowpass));
    let xy = dot(t0, t1);
    let yy = t.add_scalar(dot(t1, t1), T::lit(lowpass));
    let det = {
        let p = t.mul(xx, yy);
        let q = t.square(xy);
        t.sub(p, q)
    };
    let idet = t.recip(det);
    let ca = t.mul(yy, idet);
    let cb = {
        let p = t.mul(xy, idet);
        t.neg(p)
    };
    let cc = t.mul(xx, idet);
    ProjectedVars {
        mean2d,
        cov: t.stack_cols(&[xx, xy, yy]),
        conic: t.stack_cols(&[ca, cb, cc]),
        depth: zs,
        z,
    }
}
