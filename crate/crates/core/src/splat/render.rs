//! Camera views of a Gaussian set on the tape.

use sgo_diff::{Scalar, Tape, Var};

use super::project::project;
use super::raster::{rasterize, RasterSettings};
use crate::error::Result;
use crate::geometry::Rigid;
use crate::scene::Camera;

/// Tape handles of activated Gaussian parameters.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    /// `[N, 3]` ego-frame means.
    pub means: Var,
    /// `[N, 9]` row-major rotation matrices.
    pub rotm: Var,
    /// `[N, 3]` positive scales.
    pub scale: Var,
    /// `[N]` opacities in (0, 1).
    pub opacity: Var,
    /// `[N, C]` per-class colour values fed to the compositor.
    pub colors: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ViewSettings {
    pub near: f64,
    pub lowpass: f64,
    pub raster: RasterSettings,
}

impl ViewSettings {
    pub fn new(near: f64, render: &crate::config::RenderConfig) -> Self {
        Self { near, lowpass: render.lowpass, raster: RasterSettings::from(render) }
    }
}

/// Renders `g` into `cam`, `[H, W, C + 2]`.
pub fn render_view<T: Scalar>(t: &Tape<T>, g: &GaussianVars, cam: &Camera, vs: &ViewSettings) -> Result<Var> {
    let p = project(t, g.means, g.rotm, g.scale, cam, vs.near, vs.lowpass);
    let visible = p.z.iter().map(|&z| z > vs.near).collect();
    rasterize(t, p.mean2d, p.conic, p.cov, p.depth, g.opacity, g.colors, visible, (cam.height, cam.width), vs.raster)
}

/// Renders `g`, expressed in the ego frame of frame 0, into `cam` of frame
/// `t`. `rel` maps ego(0) coordinates to ego(t); `offset` (`[N, 3]`, ego(0)
/// frame) moves the means before projection.
pub fn render_at<T: Scalar>(
    t: &Tape<T>,
    g: &GaussianVars,
    offset: Option<Var>,
    rel: &Rigid,
    cam: &Camera,
    vs: &ViewSettings,
) -> Result<Var> {
    let mut moved = *g;
    if let Some(o) = offset {
        moved.means = t.add(g.means, o);
    }
    let mut c = cam.clone();
    c.cam_from_ego = cam.cam_from_ego.compose(rel);
    render_view(t, &moved, &c, vs)
}
