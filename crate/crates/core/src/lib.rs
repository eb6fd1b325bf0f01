//! Sparse Gaussian occupancy estimation at desk scale.
//!
//! A small image encoder and a Gaussian transformer predict a set of 3D
//! Gaussians from surround cameras. Training renders the Gaussians into the
//! current and neighbouring frames with a differentiable splatting
//! rasterizer; a per-Gaussian flow moves them between frames. Predictions
//! are voxelized analytically for evaluation.
//!
//! The numeric core is generic over [`sgo_diff::Scalar`] (`f32`/`f64`);
//! aliases for the `f64` default live at the crate root.

pub mod config;
pub mod error;
pub mod export;
pub mod geometry;
pub mod model;
pub mod scene;
pub mod splat;
pub mod train;
pub mod voxel;

pub use error::{CoreError, Result};

/// Default scalar of the aliases below.
pub type Real = f64;
pub type Tape = sgo_diff::Tape<Real>;
pub type ParamStore = sgo_diff::ParamStore<Real>;
pub type Trainer = train::Trainer<Real>;
pub type TemporalMemory = model::TemporalMemory<Real>;
