//! Pinhole cameras mounted on the ego vehicle.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::geometry::{rot_z, Rigid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-from-ego transform. Camera axes: x right, y down, z forward.
    pub cam_from_ego: Rigid,
}

/// Ego axes (x forward, y left, z up) to camera axes for a forward camera.
pub fn ego_to_optical() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

impl Camera {
    /// Camera at ego position `pos` with heading `yaw` about ego z.
    pub fn looking(name: &str, yaw: f64, pos: [f64; 3], fov_deg: f64, height: usize, width: usize) -> Self {
        let f = width as f64 / 2.0 / (fov_deg.to_radians() / 2.0).tan();
        // world_from_cam rotation: ego yaw ∘ optical→ego
        let ego_from_cam_r = rot_z(yaw) * ego_to_optical().transpose();
        let ego_from_cam = Rigid::new(ego_from_cam_r, Vector3::from(pos));
        Self {
            name: name.to_string(),
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            cam_from_ego: ego_from_cam.inverse(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(config_err("rig.intrinsics", format!("camera {}: focal lengths must be positive", self.name)));
        }
        if self.cam_from_ego.orthonormality_error() > 1e-9 {
            return Err(config_err("rig.extrinsic", format!("camera {}: rotation not orthonormal", self.name)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(config_err("rig.size", "image size must be positive"));
        }
        Ok(())
    }

    /// Pixel coordinates and z-depth of an ego point, or `None` behind `near`.
    pub fn project(&self, p_ego: &Vector3<f64>, near: f64) -> Option<(f64, f64, f64)> {
        let pc = self.cam_from_ego.apply(p_ego);
        (pc.z > near).then(|| (self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy, pc.z))
    }

    /// Ray through pixel coordinates `(u, v)` in ego coordinates. The
    /// direction has unit camera-z component so the ray parameter is z-depth.
    pub fn ray(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let ego_from_cam = self.cam_from_ego.inverse();
        let dc = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (ego_from_cam.translation, ego_from_cam.apply_vec(&dc))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

impl CameraRig {
    /// Front, back, left and right cameras at `mount_height` above ground.
    pub fn surround(height: usize, width: usize, fov_deg: f64, mount_height: f64) -> Self {
        let names = [("front", 0.0), ("back", std::f64::consts::PI), ("left", std::f64::consts::FRAC_PI_2), ("right", -std::f64::consts::FRAC_PI_2)];
        Self {
            cameras: names
                .iter()
                .map(|&(n, yaw)| Camera::looking(n, yaw, [0.0, 0.0, mount_height], fov_deg, height, width))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.cameras.first().map_or((0, 0), |c| (c.height, c.width))
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(config_err("rig.cameras", "at least one camera"));
        }
        let size = self.image_size();
        for c in &self.cameras {
            c.validate()?;
            if (c.height, c.width) != size {
                return Err(config_err("rig.size", "all cameras share one image size"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rig_is_valid_with_expected_focal() {
        let rig = CameraRig::surround(48, 88, 90.0, 1.5);
        rig.validate().unwrap();
        assert!((rig.cameras[0].fx - 44.0).abs() < 1e-12);
    }

    #[test]
    fn front_camera_projects_forward_points_to_principal_point() {
        let rig = CameraRig::surround(48, 88, 90.0, 0.0);
        let (u, v, z) = rig.cameras[0].project(&Vector3::new(10.0, 0.0, 0.0), 0.1).unwrap();
        assert!((u - 44.0).abs() < 1e-12 && (v - 24.0).abs() < 1e-12 && (z - 10.0).abs() < 1e-12);
        // a point to the left lands left of centre
        let (u, _, _) = rig.cameras[0].project(&Vector3::new(10.0, 2.0, 0.0), 0.1).unwrap();
        assert!((u - (44.0 - 44.0 * 0.2)).abs() < 1e-12);
        assert!(rig.cameras[1].project(&Vector3::new(10.0, 0.0, 0.0), 0.1).is_none());
    }

    #[test]
    fn ray_round_trips_through_projection() {
        let rig = CameraRig::surround(48, 88, 90.0, 1.5);
        for cam in &rig.cameras {
            let (o, d) = cam.ray(10.3, 30.7);
            let p = o + d * 4.0;
            let (u, v, z) = cam.project(&p, 0.1).unwrap();
            assert!((u - 10.3).abs() < 1e-9 && (v - 30.7).abs() < 1e-9 && (z - 4.0).abs() < 1e-9);
        }
    }
}
