//! Occupancy, depth and pixel metrics.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::voxel::FREE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    /// IoU per class; `None` for classes absent from the ground truth.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the classes present in the ground truth.
    pub miou: f64,
    /// Occupied-vs-free IoU.
    pub iou: f64,
}

/// Confusion counts accumulated over frames.
#[derive(Debug, Clone, Default)]
pub struct OccupancyAccumulator {
    classes: usize,
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
    present: Vec<bool>,
    occ: [u64; 3],
}

impl OccupancyAccumulator {
    pub fn new(classes: usize) -> Self {
        Self { classes, tp: vec![0; classes], fp: vec![0; classes], fn_: vec![0; classes], present: vec![false; classes], occ: [0; 3] }
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(CoreError::Shape { what: "occupancy grids", expected: vec![gt.len()], got: vec![pred.len()] });
        }
        let cls = |l: u8| (l != FREE && (l as usize) < self.classes).then_some(l as usize);
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (cls(p), cls(g));
            if let Some(g) = g {
                self.present[g] = true;
            }
            match (p, g) {
                (Some(a), Some(b)) if a == b => self.tp[a] += 1,
                (a, b) => {
                    if let Some(a) = a {
                        self.fp[a] += 1;
                    }
                    if let Some(b) = b {
                        self.fn_[b] += 1;
                    }
                }
            }
            match (p.is_some(), g.is_some()) {
                (true, true) => self.occ[0] += 1,
                (true, false) => self.occ[1] += 1,
                (false, true) => self.occ[2] += 1,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn report(&self) -> OccupancyReport {
        let iou = |tp: u64, fp: u64, fn_: u64| {
            let d = tp + fp + fn_;
            if d == 0 { 0.0 } else { tp as f64 / d as f64 }
        };
        let per_class: Vec<Option<f64>> = (0..self.classes).map(|c| self.present[c].then(|| iou(self.tp[c], self.fp[c], self.fn_[c]))).collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let miou = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
        OccupancyReport { per_class, miou, iou: iou(self.occ[0], self.occ[1], self.occ[2]) }
    }
}

pub fn evaluate_occupancy(pred: &[u8], gt: &[u8], classes: usize) -> Result<OccupancyReport> {
    let mut acc = OccupancyAccumulator::new(classes);
    acc.add(pred, gt)?;
    Ok(acc.report())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub pixels: u64,
}

#[derive(Debug, Clone, Default)]
pub struct DepthAccumulator {
    n: u64,
    abs_rel: f64,
    sq_rel: f64,
    sq: f64,
    sq_log: f64,
    d: [u64; 3],
}

impl DepthAccumulator {
    /// Adds pixels where `valid` holds and both depths are positive.
    pub fn add(&mut self, pred: &[f64], gt: &[f64], valid: impl Fn(usize) -> bool) {
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if !valid(i) || !(g > 0.0) {
                continue;
            }
            let p = p.max(1e-3);
            self.n += 1;
            self.abs_rel += (p - g).abs() / g;
            self.sq_rel += (p - g) * (p - g) / g;
            self.sq += (p - g) * (p - g);
            self.sq_log += (p.ln() - g.ln()).powi(2);
            let r = (p / g).max(g / p);
            for (k, th) in [1.25, 1.25f64.powi(2), 1.25f64.powi(3)].iter().enumerate() {
                if r < *th {
                    self.d[k] += 1;
                }
            }
        }
    }

    pub fn report(&self) -> Result<DepthReport> {
        if self.n == 0 {
            return Err(CoreError::NoValidPixels("depth metrics"));
        }
        let n = self.n as f64;
        Ok(DepthReport {
            abs_rel: self.abs_rel / n,
            sq_rel: self.sq_rel / n,
            rmse: (self.sq / n).sqrt(),
            rmse_log: (self.sq_log / n).sqrt(),
            delta1: self.d[0] as f64 / n,
            delta2: self.d[1] as f64 / n,
            delta3: self.d[2] as f64 / n,
            pixels: self.n,
        })
    }
}

pub fn evaluate_depth(pred: &[f64], gt: &[f64]) -> Result<DepthReport> {
    let mut a = DepthAccumulator::default();
    a.add(pred, gt, |_| true);
    a.report()
}
