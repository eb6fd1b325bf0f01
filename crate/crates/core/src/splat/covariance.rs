//! 3D covariances from scale and rotation, plain and on the tape.

use nalgebra::Matrix3;
use sgo_diff::{Array, Scalar, Tape, Var};

use crate::geometry::quat_to_matrix;

/// `Σ = R diag(s)² Rᵀ` for a quaternion `(w, x, y, z)`.
pub fn build_covariance(scale: [f64; 3], rotation: [f64; 4]) -> Matrix3<f64> {
    let r = quat_to_matrix(rotation);
    let s2 = Matrix3::from_diagonal(&nalgebra::Vector3::from(scale.map(|v| v * v)));
    r * s2 * r.transpose()
}

/// Row-major rotation matrices `[N, 9]` of unit quaternions `[N, 4]`.
/// The polynomial form assumes unit length; callers normalize first.
pub fn quat_to_rotmat<T: Scalar>(t: &Tape<T>, q: Var) -> Var {
    let out = {
        let qv = t.value(q);
        let n = qv.shape()[0];
        let two = T::lit(2.0);
        let one = T::one();
        let mut d = Vec::with_capacity(n * 9);
        for i in 0..n {
            let r = qv.row(i);
            let (w, x, y, z) = (r[0], r[1], r[2], r[3]);
            d.extend_from_slice(&[
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ]);
        }
        Array::new(vec![n, 9], d)
    };
    let n = out.shape()[0] as u64;
    t.custom("quat_to_rotmat", &[q], out, 40 * n, |a| {
        let qv = a.inputs[0];
        let g = a.grad.data();
        let n = qv.shape()[0];
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        let mut gq = Vec::with_capacity(n * 4);
        for i in 0..n {
            let r = qv.row(i);
            let (w, x, y, z) = (r[0], r[1], r[2], r[3]);
            let gr = &g[i * 9..i * 9 + 9];
            // ∂R_k/∂(w, x, y, z) for the nine entries in row-major order
            let dw = [T::zero(), -two * z, two * y, two * z, T::zero(), -two * x, -two * y, two * x, T::zero()];
            let dx = [T::zero(), two * y, two * z, two * y, -four * x, -two * w, two * z, two * w, -four * x];
            let dy = [-four * y, two * x, two * w, two * x, T::zero(), two * z, -two * w, two * z, -four * y];
            let dz = [-four * z, -two * w, two * x, two * w, -four * z, two * y, two * x, two * y, T::zero()];
            let dot = |d: &[T; 9]| (0..9).map(|k| gr[k] * d[k]).sum::<T>();
            gq.extend_from_slice(&[dot(&dw), dot(&dx), dot(&dy), dot(&dz)]);
        }
        vec![Some(Array::new(vec![n, 4], gq))]
    })
}

/// Unit quaternions from raw `[N, 4]` values. Rows with norm below `1e-8`
/// become the identity `(1, 0, 0, 0)`.
pub fn normalize_quat<T: Scalar>(t: &Tape<T>, q: Var) -> Var {
    let n = t.shape(q)[0];
    let small: Vec<bool> = t.value(q).data().chunks(4).map(|r| r.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt() < 1e-8).collect();
    let q = if small.iter().any(|&b| b) {
        let keep = t.constant(Array::from_fn(&[n, 4], |k| if small[k / 4] { T::zero() } else { T::one() }));
        let fill = t.constant(Array::from_fn(&[n, 4], |k| if small[k / 4] && k % 4 == 0 { T::one() } else { T::zero() }));
        let kept = t.mul(q, keep);
        t.add(kept, fill)
    } else {
        q
    };
    let sq = t.square(q);
    let ss = t.sum_axis(sq, 1);
    let norm = t.sqrt(ss);
    let norm = t.reshape(norm, &[n, 1]);
    t.div(q, norm)
}

/// Upper-triangle entries `(xx, xy, xz, yy, yz, zz)` of `Σ⁻¹ = R diag(s)⁻² Rᵀ`
/// as `[N, 6]`, from rotation matrices `[N, 9]` and scales `[N, 3]`.
pub fn inverse_covariance<T: Scalar>(t: &Tape<T>, rotm: Var, scale: Var) -> Var {
    let inv = t.recip(scale);
    let inv3 = t.concat(&[inv, inv, inv], 1);
    // A = R diag(1/s); Σ⁻¹ = A Aᵀ
    let a = t.mul(rotm, inv3);
    let row = |i: usize| t.slice(a, 1, 3 * i, 3 * i + 3);
    let rows = [row(0), row(1), row(2)];
    let dot = |i: usize, j: usize| {
        let p = t.mul(rows[i], rows[j]);
        t.sum_axis(p, 1)
    };
    let entries = [dot(0, 0), dot(0, 1), dot(0, 2), dot(1, 1), dot(1, 2), dot(2, 2)];
    t.stack_cols(&entries)
}
