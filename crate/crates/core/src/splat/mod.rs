//! Differentiable Gaussian splatting: covariance, projection, rasterization.

pub mod covariance;
pub mod project;
pub mod raster;
pub mod render;

pub use covariance::{build_covariance, inverse_covariance, normalize_quat, quat_to_rotmat};
pub use project::{perspective_jacobian, project, project_gaussian, ProjectedGaussian, ProjectedVars};
pub use raster::{rasterize, RasterSettings, ScreenGaussians};
pub use render::{render_at, render_view, GaussianVars, ViewSettings};
