//! Ego trajectories: smooth forward motion at a fixed frame interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::geometry::Rigid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    pub index: usize,
    pub ego_from_world: Rigid,
    pub timestamp: f64,
}

impl EgoPose {
    pub fn world_from_ego(&self) -> Rigid {
        self.ego_from_world.inverse()
    }
}

/// `ego_to ← ego_from`: maps coordinates in the `from` ego frame into `to`.
pub fn relative_pose(from: &EgoPose, to: &EgoPose) -> Rigid {
    to.ego_from_world.compose(&from.ego_from_world.inverse())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub frames: usize,
    /// Seconds between frames.
    pub dt: f64,
    /// m/s along the heading.
    pub speed: f64,
    /// Bound on |yaw rate| in rad/s; 0 gives a straight line.
    pub max_yaw_rate: f64,
    /// World position of the first frame (x, y).
    pub start: [f64; 2],
    pub start_yaw: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            frames: 10,
            dt: 0.5,
            speed: 1.0,
            max_yaw_rate: 0.0,
            start: [-2.0, 0.0],
            start_yaw: 0.0,
        }
    }
}

/// Poses of a constant-speed drive with a seeded constant yaw rate in
/// `[-max, max]`. Needs at least `2·horizon + 1` frames.
pub fn sample_trajectory(seed: u64, cfg: &TrajectoryConfig, horizon: usize) -> Result<Vec<EgoPose>> {
    if cfg.frames < 2 * horizon + 1 {
        return Err(config_err(
            "data.trajectory.frames",
            format!("{} frames cannot hold horizon {horizon} (need {})", cfg.frames, 2 * horizon + 1),
        ));
    }
    if cfg.dt <= 0.0 {
        return Err(config_err("data.trajectory.dt", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6a65);
    let omega = if cfg.max_yaw_rate > 0.0 {
        rng.random_range(-cfg.max_yaw_rate..cfg.max_yaw_rate)
    } else {
        0.0
    };
    let (x0, y0, psi0) = (cfg.start[0], cfg.start[1], cfg.start_yaw);
    let poses = (0..cfg.frames)
        .map(|i| {
            let t = i as f64 * cfg.dt;
            let psi = psi0 + omega * t;
            let (x, y) = if omega.abs() < 1e-12 {
                (x0 + cfg.speed * t * psi0.cos(), y0 + cfg.speed * t * psi0.sin())
            } else {
                let r = cfg.speed / omega;
                (x0 + r * (psi.sin() - psi0.sin()), y0 - r * (psi.cos() - psi0.cos()))
            };
            let world_from_ego = Rigid::yaw(psi, [x, y, 0.0]);
            EgoPose {
                index: i,
                ego_from_world: world_from_ego.inverse(),
                timestamp: t,
            }
        })
        .collect();
    Ok(poses)
}
