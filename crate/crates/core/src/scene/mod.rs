//! Deterministic synthetic sequences standing in for recorded drives.

pub mod dataset;
pub mod labels;
pub mod oracle;
pub mod rig;
pub mod trajectory;
pub mod world;

use rayon::prelude::*;

pub use dataset::{load_dataset, write_dataset, Dataset, DatasetMeta, Sequence, DATASET_VERSION};
pub use labels::{render_labels, FrameRecord, SKY};
pub use oracle::oracle_grid;
pub use rig::{Camera, CameraRig};
pub use trajectory::{relative_pose, sample_trajectory, EgoPose, TrajectoryConfig};
pub use world::{generate_world, Primitive, PrimitiveKind, WorldConfig, DEFAULT_CLASS_NAMES};

use crate::config::DataConfig;
use crate::error::{config_err, Result};
use crate::voxel::GridSpec;

impl DataConfig {
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            classes: self.classes,
            extents: self.extents,
            ground_half_extent: self.ground_half_extent,
            boxes: self.boxes,
            movers: self.movers,
            poles: self.poles,
            vegetation: self.vegetation,
            walls: self.walls,
            mover_speed: self.mover_speed,
            corridor: self.corridor,
            placement_half_length: self.placement_half_length,
        }
    }

    pub fn trajectory_config(&self) -> TrajectoryConfig {
        TrajectoryConfig {
            frames: self.frames,
            dt: self.dt,
            speed: self.speed,
            max_yaw_rate: self.max_yaw_rate,
            start: self.start,
            start_yaw: 0.0,
        }
    }

    pub fn rig(&self) -> Result<CameraRig> {
        if self.cameras == 0 || self.cameras > 4 {
            return Err(config_err("data.cameras", "between 1 and 4 surround cameras"));
        }
        let mut rig = CameraRig::surround(self.height, self.width, self.fov_deg, self.mount_height);
        rig.cameras.truncate(self.cameras);
        rig.validate()?;
        Ok(rig)
    }
}

/// World, trajectory, labels and oracle voxel grids for one sequence.
pub fn generate_sequence(cfg: &DataConfig, grid: &GridSpec, horizon: usize) -> Result<Sequence> {
    grid.validate()?;
    let world = generate_world(cfg.seed, &cfg.world_config())?;
    let poses = sample_trajectory(cfg.seed, &cfg.trajectory_config(), horizon)?;
    let rig = cfg.rig()?;
    let frames: Vec<FrameRecord> = poses
        .par_iter()
        .map(|p| {
            let mut f = render_labels(&world, &rig, p, p.timestamp);
            f.voxels = oracle_grid(&world, p, p.timestamp, grid, cfg.classes);
            f
        })
        .collect();
    let meta = DatasetMeta {
        version: DATASET_VERSION,
        seed: cfg.seed,
        classes: cfg.classes,
        class_names: (0..cfg.classes)
            .map(|c| DEFAULT_CLASS_NAMES.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string()))
            .collect(),
        cameras: rig.len(),
        height: cfg.height,
        width: cfg.width,
        dt: cfg.dt,
        extents: cfg.extents,
        frames: poses.len(),
        rig,
        poses,
        grid: grid.clone(),
        world,
    };
    Ok(Sequence { meta, frames })
}
