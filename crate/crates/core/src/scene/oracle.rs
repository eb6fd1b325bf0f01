//! Oracle occupancy grids computed from the analytic world.

use nalgebra::Vector3;

use super::trajectory::EgoPose;
use super::world::{occupant, Primitive};
use crate::voxel::{GridSpec, FREE};

/// Sub-samples per axis inside each voxel.
const SUB: usize = 3;
/// Fraction of occupied sub-samples needed to call a voxel occupied.
const MIN_FILL: f64 = 0.25;

/// Labels in the ego frame of `pose`: the majority class among occupied
/// sub-samples when enough of them are occupied, else [`FREE`].
pub fn oracle_grid(world: &[Primitive], pose: &EgoPose, time: f64, spec: &GridSpec, classes: usize) -> Vec<u8> {
    let world_from_ego = pose.world_from_ego();
    let [nx, ny, nz] = spec.dims;
    let mut out = vec![FREE; nx * ny * nz];
    let total = (SUB * SUB * SUB) as f64;
    let mut counts = vec![0usize; classes];
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                counts.iter_mut().for_each(|c| *c = 0);
                let mut occupied = 0;
                for a in 0..SUB {
                    for b in 0..SUB {
                        for c in 0..SUB {
                            let f = |n: usize| (n as f64 + 0.5) / SUB as f64;
                            let p = Vector3::new(
                                spec.origin[0] + (i as f64 + f(a)) * spec.voxel_size,
                                spec.origin[1] + (j as f64 + f(b)) * spec.voxel_size,
                                spec.origin[2] + (k as f64 + f(c)) * spec.voxel_size,
                            );
                            if let Some(class) = occupant(world, &world_from_ego.apply(&p), time) {
                                counts[class as usize] += 1;
                                occupied += 1;
                            }
                        }
                    }
                }
                if occupied as f64 >= MIN_FILL * total {
                    let best = (0..classes).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
                    out[spec.index(i, j, k)] = best as u8;
                }
            }
        }
    }
    out
}
