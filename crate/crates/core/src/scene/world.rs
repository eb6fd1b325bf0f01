//! Synthetic worlds built from analytic primitives.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::geometry::Rigid;

pub const GROUND: u8 = 0;
pub const BOX: u8 = 1;
pub const MOVER: u8 = 2;
pub const POLE: u8 = 3;
pub const VEGETATION: u8 = 4;
pub const WALL: u8 = 5;

pub const DEFAULT_CLASS_NAMES: [&str; 6] = ["ground", "box", "mover", "pole", "vegetation", "wall"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimitiveKind {
    /// Finite square at z = 0 in its local frame; half-extents x, y.
    GroundPlane,
    Box,
    Ellipsoid,
    /// Vertical cylinder, radius = half-extent x, half height = half-extent z.
    VerticalPole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    /// World-from-local pose at time 0.
    pub pose: Rigid,
    pub half_extents: [f64; 3],
    pub class_id: u8,
    /// World-frame velocity in m/s.
    pub velocity: [f64; 3],
    pub albedo: [f64; 3],
}

/// Ray-hit record: distance in units of the ray direction, world normal.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub normal: Vector3<f64>,
}

const HIT_EPS: f64 = 1e-9;

impl Primitive {
    /// Pose at time `time`, displaced by velocity.
    pub fn pose_at(&self, time: f64) -> Rigid {
        let mut p = self.pose;
        p.translation += Vector3::from(self.velocity) * time;
        p
    }

    pub fn center_at(&self, time: f64) -> Vector3<f64> {
        self.pose_at(time).translation
    }

    /// World-axis bounding box `(min, max)` at `time`.
    pub fn aabb(&self, time: f64) -> (Vector3<f64>, Vector3<f64>) {
        let pose = self.pose_at(time);
        let h = Vector3::from(self.half_extents);
        let h = match self.kind {
            PrimitiveKind::GroundPlane => Vector3::new(h.x, h.y, 0.0),
            PrimitiveKind::VerticalPole => Vector3::new(h.x, h.x, h.z),
            _ => h,
        };
        let abs_r = pose.rotation.abs();
        let e = abs_r * h;
        (pose.translation - e, pose.translation + e)
    }

    pub fn is_static(&self) -> bool {
        self.velocity == [0.0; 3]
    }

    /// First intersection of the world ray `o + t d` with `t > 0`.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>, time: f64) -> Option<Hit> {
        let pose = self.pose_at(time);
        let inv = pose.inverse();
        let lo = inv.apply(o);
        let ld = inv.apply_vec(d);
        let h = Vector3::from(self.half_extents);
        let local = match self.kind {
            PrimitiveKind::GroundPlane => {
                if ld.z.abs() < 1e-15 {
                    return None;
                }
                let t = -lo.z / ld.z;
                let p = lo + ld * t;
                (t > HIT_EPS && p.x.abs() <= h.x && p.y.abs() <= h.y)
                    .then(|| (t, Vector3::new(0.0, 0.0, lo.z.signum())))
            }
            PrimitiveKind::Box => slab(&lo, &ld, &h),
            PrimitiveKind::Ellipsoid => {
                let so = lo.component_div(&h);
                let sd = ld.component_div(&h);
                let a = sd.dot(&sd);
                let b = so.dot(&sd);
                let c = so.dot(&so) - 1.0;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > HIT_EPS)?;
                let p = lo + ld * t;
                Some((t, p.component_div(&h.component_mul(&h))))
            }
            PrimitiveKind::VerticalPole => cylinder(&lo, &ld, h.x, h.z),
        }?;
        let normal = pose.apply_vec(&local.1).normalize();
        Some(Hit { t: local.0, normal })
    }

    /// Whether the world point lies inside the solid at `time`. The ground
    /// plane counts as the half-space `z ≤ 0` over its square footprint.
    pub fn contains(&self, p: &Vector3<f64>, time: f64) -> bool {
        let lp = self.pose_at(time).inverse().apply(p);
        let h = self.half_extents;
        match self.kind {
            PrimitiveKind::GroundPlane => lp.z <= 0.0 && lp.x.abs() <= h[0] && lp.y.abs() <= h[1],
            PrimitiveKind::Box => lp.x.abs() <= h[0] && lp.y.abs() <= h[1] && lp.z.abs() <= h[2],
            PrimitiveKind::Ellipsoid => (lp.x / h[0]).powi(2) + (lp.y / h[1]).powi(2) + (lp.z / h[2]).powi(2) <= 1.0,
            PrimitiveKind::VerticalPole => lp.x * lp.x + lp.y * lp.y <= h[0] * h[0] && lp.z.abs() <= h[2],
        }
    }
}

fn slab(o: &Vector3<f64>, d: &Vector3<f64>, h: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut n0 = Vector3::zeros();
    let mut n1 = Vector3::zeros();
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a].abs() > h[a] {
                return None;
            }
            continue;
        }
        let mut ta = (-h[a] - o[a]) / d[a];
        let mut tb = (h[a] - o[a]) / d[a];
        let mut na = Vector3::zeros();
        na[a] = -1.0;
        let mut nb = Vector3::zeros();
        nb[a] = 1.0;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
            std::mem::swap(&mut na, &mut nb);
        }
        if ta > t0 {
            t0 = ta;
            n0 = na;
        }
        if tb < t1 {
            t1 = tb;
            n1 = nb;
        }
    }
    if t0 > t1 {
        return None;
    }
    if t0 > HIT_EPS {
        Some((t0, n0))
    } else if t1 > HIT_EPS {
        Some((t1, n1))
    } else {
        None
    }
}

fn cylinder(o: &Vector3<f64>, d: &Vector3<f64>, r: f64, hz: f64) -> Option<(f64, Vector3<f64>)> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let mut consider = |t: f64, n: Vector3<f64>| {
        if t > HIT_EPS && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-15 {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / a, (-b + sq) / a] {
                let p = o + d * t;
                if p.z.abs() <= hz {
                    consider(t, Vector3::new(p.x, p.y, 0.0));
                }
            }
        }
    }
    if d.z.abs() > 1e-15 {
        for (z, nz) in [(hz, 1.0), (-hz, -1.0)] {
            let t = (z - o.z) / d.z;
            let p = o + d * t;
            if p.x * p.x + p.y * p.y <= r * r {
                consider(t, Vector3::new(0.0, 0.0, nz));
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub classes: usize,
    /// `[xmin, xmax, ymin, ymax, zmin, zmax]` in world meters.
    pub extents: [f64; 6],
    pub ground_half_extent: f64,
    pub boxes: usize,
    pub movers: usize,
    pub poles: usize,
    pub vegetation: usize,
    pub walls: usize,
    /// Mover speed range in m/s along world x.
    pub mover_speed: [f64; 2],
    /// Half-width of the lane along world y = 0 kept free of static objects.
    pub corridor: f64,
    /// Static objects are placed within this distance of the world origin in x.
    pub placement_half_length: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            classes: 6,
            extents: [-12.0, 12.0, -12.0, 12.0, -1.0, 5.4],
            ground_half_extent: 11.0,
            boxes: 5,
            movers: 0,
            poles: 4,
            vegetation: 3,
            walls: 2,
            mover_speed: [2.0, 2.0],
            corridor: 2.2,
            placement_half_length: 8.0,
        }
    }
}

impl WorldConfig {
    /// The full-size preset spanning the benchmark grid.
    pub fn full_scale() -> Self {
        Self {
            extents: [-40.0, 40.0, -40.0, 40.0, -1.0, 5.4],
            ground_half_extent: 40.0,
            boxes: 40,
            movers: 4,
            poles: 30,
            vegetation: 20,
            walls: 8,
            placement_half_length: 36.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.extents;
        if !(e[1] > e[0] && e[3] > e[2] && e[5] > e[4]) {
            return Err(config_err("world.extents", format!("non-positive extents {e:?}")));
        }
        if self.classes < 6 {
            return Err(config_err("world.classes", "the generator emits six classes"));
        }
        if self.ground_half_extent <= 0.0
            || self.ground_half_extent > e[1].min(-e[0]).min(e[3]).min(-e[2])
            || e[4] > 0.0
        {
            return Err(config_err("world.ground_half_extent", "ground must fit inside the extents"));
        }
        if self.mover_speed[0] > self.mover_speed[1] {
            return Err(config_err("world.mover_speed", "empty range"));
        }
        Ok(())
    }
}

fn albedo(class: u8, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let base = match class {
        GROUND => [0.45, 0.42, 0.40],
        BOX => [0.80, 0.35, 0.20],
        MOVER => [0.20, 0.35, 0.85],
        POLE => [0.85, 0.85, 0.25],
        VEGETATION => [0.20, 0.70, 0.25],
        _ => [0.70, 0.70, 0.75],
    };
    base.map(|c: f64| (c + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0))
}

/// Deterministic world under `seed`: a ground square at z = 0 and the
/// configured counts of objects, none overlapping and none inside the lane.
pub fn generate_world(seed: u64, cfg: &WorldConfig) -> Result<Vec<Primitive>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = cfg.ground_half_extent;
    let mut world = vec![Primitive {
        kind: PrimitiveKind::GroundPlane,
        pose: Rigid::identity(),
        half_extents: [g, g, 0.0],
        class_id: GROUND,
        velocity: [0.0; 3],
        albedo: albedo(GROUND, &mut rng),
    }];
    let e = cfg.extents;
    let lx = cfg.placement_half_length.min(e[1] - 1.0).min(-e[0] - 1.0);
    let ly = (g - 1.0).min(e[3] - 1.0).min(-e[2] - 1.0);
    let mut footprints: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
    let fits = |lo: &Vector3<f64>, hi: &Vector3<f64>, fp: &[(Vector3<f64>, Vector3<f64>)]| {
        let m = 0.3;
        fp.iter()
            .all(|(a, b)| lo.x > b.x + m || hi.x < a.x - m || lo.y > b.y + m || hi.y < a.y - m)
    };

    let place = |rng: &mut ChaCha8Rng, kind: PrimitiveKind, class: u8, half: [f64; 3], yaw: f64, y_sign: Option<f64>, footprints: &mut Vec<_>| {
        for _ in 0..200 {
            let x = rng.random_range(-lx..lx);
            let y = match y_sign {
                Some(s) => s * rng.random_range(cfg.corridor + 0.2..ly.max(cfg.corridor + 0.5)),
                None => {
                    let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    s * rng.random_range(cfg.corridor..ly.max(cfg.corridor + 0.3))
                }
            };
            let z = match kind {
                PrimitiveKind::Ellipsoid => half[2] * 0.9,
                _ => half[2],
            };
            let p = Primitive {
                kind,
                pose: Rigid::yaw(yaw, [x, y, z]),
                half_extents: half,
                class_id: class,
                velocity: [0.0; 3],
                albedo: albedo(class, rng),
            };
            let (lo, hi) = p.aabb(0.0);
            if lo.y < cfg.corridor && hi.y > -cfg.corridor {
                continue;
            }
            if lo.x < e[0] || hi.x > e[1] || lo.y < e[2] || hi.y > e[3] || hi.z > e[5] {
                continue;
            }
            if fits(&lo, &hi, footprints) {
                footprints.push((lo, hi));
                return Some(p);
            }
        }
        None
    };

    for i in 0..cfg.walls {
        let half = [rng.random_range(2.5..4.0), 0.2, rng.random_range(0.9..1.3)];
        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
        if let Some(p) = place(&mut rng, PrimitiveKind::Box, WALL, half, 0.0, Some(side), &mut footprints) {
            world.push(p);
        }
    }
    for _ in 0..cfg.boxes {
        let half = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.4..0.9)];
        let yaw = rng.random_range(-0.6..0.6);
        if let Some(p) = place(&mut rng, PrimitiveKind::Box, BOX, half, yaw, None, &mut footprints) {
            world.push(p);
        }
    }
    for _ in 0..cfg.vegetation {
        let r = rng.random_range(0.6..1.0);
        let half = [r, r * rng.random_range(0.8..1.2), rng.random_range(0.8..1.3)];
        if let Some(p) = place(&mut rng, PrimitiveKind::Ellipsoid, VEGETATION, half, 0.0, None, &mut footprints) {
            world.push(p);
        }
    }
    for _ in 0..cfg.poles {
        let half = [rng.random_range(0.12..0.2), 0.0, rng.random_range(1.2..1.5)];
        if let Some(p) = place(&mut rng, PrimitiveKind::VerticalPole, POLE, half, 0.0, None, &mut footprints) {
            world.push(p);
        }
    }
    for i in 0..cfg.movers {
        // Movers drive along a lane parallel to the ego path, starting behind.
        let speed = if cfg.mover_speed[1] > cfg.mover_speed[0] {
            rng.random_range(cfg.mover_speed[0]..cfg.mover_speed[1])
        } else {
            cfg.mover_speed[0]
        };
        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
        let half = [1.0, 0.6, 0.6];
        let y = side * (cfg.corridor + 1.0 + 2.5 * (i / 2) as f64);
        let x = rng.random_range(-3.0..-1.0);
        world.push(Primitive {
            kind: PrimitiveKind::Box,
            pose: Rigid::yaw(0.0, [x, y, half[2]]),
            half_extents: half,
            class_id: MOVER,
            velocity: [speed, 0.0, 0.0],
            albedo: albedo(MOVER, &mut rng),
        });
    }
    Ok(world)
}

/// Closest hit among all primitives: `(primitive index, hit)`.
pub fn cast_ray(world: &[Primitive], o: &Vector3<f64>, d: &Vector3<f64>, time: f64) -> Option<(usize, Hit)> {
    let mut best: Option<(usize, Hit)> = None;
    for (i, p) in world.iter().enumerate() {
        if let Some(h) = p.intersect(o, d, time) {
            if best.is_none_or(|(_, b)| h.t < b.t) {
                best = Some((i, h));
            }
        }
    }
    best
}

/// Class of the solid containing `p`, preferring non-ground solids.
pub fn occupant(world: &[Primitive], p: &Vector3<f64>, time: f64) -> Option<u8> {
    let mut ground = None;
    for prim in world {
        if prim.contains(p, time) {
            if prim.kind == PrimitiveKind::GroundPlane {
                ground = Some(prim.class_id);
            } else {
                return Some(prim.class_id);
            }
        }
    }
    ground
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let cfg = WorldConfig { boxes: 3, movers: 1, ..WorldConfig::default() };
        assert_eq!(generate_world(0, &cfg).unwrap(), generate_world(0, &cfg).unwrap());
        assert_ne!(generate_world(0, &cfg).unwrap(), generate_world(1, &cfg).unwrap());
    }

    #[test]
    fn mover_displacement_is_linear() {
        let cfg = WorldConfig { boxes: 3, movers: 1, mover_speed: [2.0, 2.0], ..WorldConfig::default() };
        let w = generate_world(0, &cfg).unwrap();
        let m = w.iter().find(|p| p.class_id == MOVER).unwrap();
        let d = m.center_at(1.0) - m.center_at(0.0);
        assert_eq!(d, Vector3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn full_scale_primitives_stay_inside_extents() {
        let cfg = WorldConfig::full_scale();
        for seed in 0..5 {
            let w = generate_world(seed, &cfg).unwrap();
            assert!(w.iter().any(|p| p.kind == PrimitiveKind::GroundPlane && p.pose.translation.z == 0.0));
            for p in &w {
                let (lo, hi) = p.aabb(0.0);
                assert!(lo.x >= -40.0 && hi.x <= 40.0 && lo.y >= -40.0 && hi.y <= 40.0);
                assert!(lo.z >= -1.0 && hi.z <= 5.4, "{p:?}");
                assert!(p.half_extents.iter().take(if p.kind == PrimitiveKind::VerticalPole { 1 } else { 2 }).all(|&h| h > 0.0));
            }
        }
    }

    #[test]
    fn non_positive_extents_are_rejected() {
        let cfg = WorldConfig { extents: [1.0, -1.0, -1.0, 1.0, -1.0, 1.0], ..WorldConfig::default() };
        assert!(generate_world(0, &cfg).is_err());
    }

    #[test]
    fn ray_hits_match_closed_forms() {
        let sphere = Primitive {
            kind: PrimitiveKind::Ellipsoid,
            pose: Rigid::translation([5.0, 0.0, 0.0]),
            half_extents: [1.0, 1.0, 1.0],
            class_id: VEGETATION,
            velocity: [0.0; 3],
            albedo: [0.5; 3],
        };
        let h = sphere.intersect(&Vector3::zeros(), &Vector3::x(), 0.0).unwrap();
        assert!((h.t - 4.0).abs() < 1e-12);
        assert!((h.normal - (-Vector3::x())).norm() < 1e-12);
        let pole = Primitive { kind: PrimitiveKind::VerticalPole, half_extents: [0.5, 0.0, 2.0], ..sphere.clone() };
        let h = pole.intersect(&Vector3::zeros(), &Vector3::x(), 0.0).unwrap();
        assert!((h.t - 4.5).abs() < 1e-12);
        let bx = Primitive { kind: PrimitiveKind::Box, half_extents: [1.0, 1.0, 1.0], ..sphere };
        let h = bx.intersect(&Vector3::new(0.0, 0.0, 0.5), &Vector3::new(1.0, 0.0, 0.0), 0.0).unwrap();
        assert!((h.t - 4.0).abs() < 1e-12);
        assert!(bx.contains(&Vector3::new(5.5, 0.2, -0.9), 0.0));
    }
}
