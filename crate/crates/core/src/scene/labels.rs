//! Oracle label rendering by analytic ray casting.

use nalgebra::Vector3;
use sgo_diff::Array;

use super::rig::{Camera, CameraRig};
use super::trajectory::EgoPose;
use super::world::{cast_ray, Primitive};

/// Semantic label of pixels whose ray misses every primitive.
pub const SKY: u8 = 255;

const SKY_COLOR: [f32; 3] = [0.55, 0.70, 0.90];

/// Labels and images of all cameras at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub pose: EgoPose,
    /// `[L, H, W, 3]` in [0, 1].
    pub images: Array<f32>,
    /// `[L, H, W]` z-depth in meters, 0 where invalid.
    pub depth: Array<f32>,
    /// `L·H·W` class ids, [`SKY`] where invalid.
    pub semantics: Vec<u8>,
    /// Oracle voxel labels in this frame's ego coordinates.
    pub voxels: Vec<u8>,
}

impl FrameRecord {
    pub fn cameras(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.images.shape()[1], self.images.shape()[2])
    }

    pub fn camera_semantics(&self, l: usize) -> &[u8] {
        let (h, w) = self.size();
        &self.semantics[l * h * w..(l + 1) * h * w]
    }

    pub fn camera_depth(&self, l: usize) -> &[f32] {
        let (h, w) = self.size();
        &self.depth.data()[l * h * w..(l + 1) * h * w]
    }
}

fn light() -> Vector3<f64> {
    Vector3::new(0.4, 0.3, 0.85).normalize()
}

pub struct CameraLabels {
    pub image: Vec<f32>,
    pub depth: Vec<f32>,
    pub semantics: Vec<u8>,
}

/// Renders one camera: first hit per pixel centre, flat shading with a
/// fixed light and distance falloff.
pub fn render_camera(world: &[Primitive], cam: &Camera, pose: &EgoPose, time: f64) -> CameraLabels {
    let (h, w) = (cam.height, cam.width);
    let world_from_ego = pose.world_from_ego();
    let mut image = Vec::with_capacity(h * w * 3);
    let mut depth = Vec::with_capacity(h * w);
    let mut semantics = Vec::with_capacity(h * w);
    let l = light();
    for y in 0..h {
        for x in 0..w {
            let (o, d) = cam.ray(x as f64 + 0.5, y as f64 + 0.5);
            let ow = world_from_ego.apply(&o);
            let dw = world_from_ego.apply_vec(&d);
            match cast_ray(world, &ow, &dw, time) {
                Some((i, hit)) => {
                    let p = &world[i];
                    let dist = hit.t * dw.norm();
                    let shade = 0.55 + 0.45 * hit.normal.dot(&l).max(0.0);
                    let falloff = 1.0 / (1.0 + 0.03 * dist);
                    image.extend(p.albedo.map(|c| (c * shade * falloff) as f32));
                    depth.push(hit.t as f32);
                    semantics.push(p.class_id);
                }
                None => {
                    image.extend(SKY_COLOR);
                    depth.push(0.0);
                    semantics.push(SKY);
                }
            }
        }
    }
    CameraLabels { image, depth, semantics }
}

/// Images, z-depth and semantics for every camera of the rig.
pub fn render_labels(world: &[Primitive], rig: &CameraRig, pose: &EgoPose, time: f64) -> FrameRecord {
    let (h, w) = rig.image_size();
    let l = rig.len();
    let mut images = Vec::with_capacity(l * h * w * 3);
    let mut depth = Vec::with_capacity(l * h * w);
    let mut semantics = Vec::with_capacity(l * h * w);
    for cam in &rig.cameras {
        let c = render_camera(world, cam, pose, time);
        images.extend(c.image);
        depth.extend(c.depth);
        semantics.extend(c.semantics);
    }
    FrameRecord {
        index: pose.index,
        pose: *pose,
        images: Array::new(vec![l, h, w, 3], images),
        depth: Array::new(vec![l, h, w], depth),
        semantics,
        voxels: Vec::new(),
    }
}
