//! Rigid transforms and quaternion helpers in plain `f64`.

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid transform `p ↦ R p + t`, serialized as a row-major 4×4 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[[f64; 4]; 4]", try_from = "[[f64; 4]; 4]")]
pub struct Rigid {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self::new(Matrix3::identity(), Vector3::from(t))
    }

    /// Rotation about +z by `yaw` followed by translation `t`.
    pub fn yaw(yaw: f64, t: [f64; 3]) -> Self {
        Self::new(rot_z(yaw), Vector3::from(t))
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vec(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Rigid) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// ‖RᵀR − I‖ in the Frobenius norm.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn max_abs_diff(&self, other: &Rigid) -> f64 {
        (self.to_matrix() - other.to_matrix()).abs().max()
    }
}

impl From<Rigid> for [[f64; 4]; 4] {
    fn from(r: Rigid) -> Self {
        let m = r.to_matrix();
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
        }
        out
    }
}

impl TryFrom<[[f64; 4]; 4]> for Rigid {
    type Error = String;

    fn try_from(m: [[f64; 4]; 4]) -> Result<Self, String> {
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(format!("last row of a rigid transform must be 0 0 0 1, got {:?}", m[3]));
        }
        let r = Matrix3::from_fn(|i, j| m[i][j]);
        let t = Vector3::new(m[0][3], m[1][3], m[2][3]);
        let rigid = Rigid::new(r, t);
        if rigid.orthonormality_error() > 1e-6 {
            return Err("rotation block is not orthonormal".into());
        }
        Ok(rigid)
    }
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation matrix of a quaternion `(w, x, y, z)`; normalizes first.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Quaternion `(w, x, y, z)` of a rotation about `axis` by `angle`.
pub fn quat_axis_angle(axis: [f64; 3], angle: f64) -> [f64; 4] {
    let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::from(axis)), angle);
    [q.w, q.i, q.j, q.k]
}
