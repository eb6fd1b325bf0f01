//! Sequential training over a sequence with recurrent memory, and evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sgo_diff::{AdamConfig, Array, Binding, ParamStore, Scalar, Tape, Var};

use super::loss::{class_colors, frame_loss, LossWeights, ViewLabels};
use super::metrics::{DepthAccumulator, DepthReport, OccupancyAccumulator, OccupancyReport};
use crate::config::{RunConfig, Supervision};
use crate::error::{config_err, CoreError, Result};
use crate::model::{advance_memory, GaussianSet, Model, Prediction, TemporalMemory};
use crate::scene::{relative_pose, Sequence, SKY};
use crate::splat::{render_at, ViewSettings};
use crate::voxel::{truncation_radius, voxel_ce_loss, voxelize_vars, GridSpec, VoxelGrid, VoxelInputs};

/// Relative steps supervised for frame `f` of `frames`, clipped at the ends.
pub fn window(f: usize, frames: usize, horizon: usize, include_current: bool) -> Vec<i32> {
    let h = horizon as i32;
    (-h..=h)
        .filter(|&tau| tau != 0 || include_current)
        .filter(|&tau| {
            let g = f as i64 + tau as i64;
            g >= 0 && g < frames as i64
        })
        .collect()
}

/// Learning rate after linear warm-up and cosine decay to `lr · lr_final`.
pub fn learning_rate(cfg: &crate::config::TrainConfig, step: usize) -> f64 {
    if step < cfg.warmup {
        return cfg.lr * (step + 1) as f64 / cfg.warmup as f64;
    }
    let span = cfg.steps.saturating_sub(cfg.warmup).max(1) as f64;
    let x = ((step - cfg.warmup) as f64 / span).min(1.0);
    let c = 0.5 * (1.0 + (std::f64::consts::PI * x).cos());
    cfg.lr * (cfg.lr_final + (1.0 - cfg.lr_final) * c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub frame: usize,
    pub loss: f64,
    pub depth: f64,
    pub seg: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Rendered views of one relative step.
struct WindowViews {
    tau: i32,
    views: Vec<Var>,
}

/// Graph of one frame: prediction, views over the window and `v(+1)`.
struct FrameGraph {
    pred: Prediction,
    windows: Vec<WindowViews>,
    flow_next: Option<Var>,
}

/// Loss tallies of one frame.
#[derive(Debug, Clone, Copy, Default)]
struct LossParts {
    total: Option<Var>,
    depth: f64,
    seg: f64,
    skipped: usize,
}

pub struct Trainer<T: Scalar> {
    pub cfg: RunConfig,
    pub ps: ParamStore<T>,
    pub model: Model,
    pub step: usize,
    pub curve: Vec<StepLog>,
    /// Views with no valid pixel, which contribute nothing.
    pub skipped_views: usize,
    /// Estimated flops of all training steps.
    pub flops: u64,
    memory: Option<TemporalMemory<T>>,
    cursor: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new();
        let model = Model::new(&mut ps, &cfg.model, cfg.data.classes, cfg.train.horizon, cfg.train.seed)?;
        Ok(Self { cfg: cfg.clone(), ps, model, step: 0, curve: Vec::new(), skipped_views: 0, flops: 0, memory: None, cursor: 0 })
    }

    /// A trainer whose parameters come from a checkpoint.
    pub fn from_checkpoint(cfg: &RunConfig, path: &Path) -> Result<Self> {
        let mut tr = Self::new(cfg)?;
        if !path.exists() {
            return Err(CoreError::Missing(path.display().to_string()));
        }
        tr.ps.load(path)?;
        Ok(tr)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.ps.save(path)?)
    }

    fn check_sequence(&self, seq: &Sequence) -> Result<()> {
        if seq.meta.classes != self.model.classes {
            return Err(config_err("data.classes", format!("model has {} classes, dataset {}", self.model.classes, seq.meta.classes)));
        }
        if seq.frames.len() < 2 * self.cfg.train.horizon + 1 {
            return Err(config_err("train.horizon", format!("sequence has {} frames", seq.frames.len())));
        }
        Ok(())
    }

    fn weights(&self) -> LossWeights {
        LossWeights { depth: self.cfg.train.depth_weight, seg: self.cfg.train.seg_weight, seg_loss: self.cfg.train.seg_loss }
    }

    fn view_settings(&self) -> ViewSettings {
        ViewSettings::new(self.model.cfg.near, &self.cfg.render)
    }

    /// Forward pass of frame `f` rendering every step in `taus`.
    fn frame_graph(&self, t: &Tape<T>, p: &Binding, seq: &Sequence, f: usize, memory: Option<&TemporalMemory<T>>, taus: &[i32], flow: bool) -> Result<FrameGraph> {
        let frame = &seq.frames[f];
        let images = t.constant(frame.images.cast::<T>());
        let tc = &self.cfg.train;
        let pred = self.model.forward(t, p, images, &seq.meta.rig, memory, tc.params, (tc.fixed_opacity, tc.fixed_scale))?;
        let colors = class_colors(t, pred.decoded.logits, tc.seg_loss);
        let g = pred.decoded.splat(colors);
        let vs = self.view_settings();
        let mut windows = Vec::with_capacity(taus.len());
        for &tau in taus {
            let target = (f as i64 + tau as i64) as usize;
            let rel = relative_pose(&frame.pose, &seq.frames[target].pose);
            let offset = if tau != 0 && flow { Some(self.model.flow.forward(t, p, pred.decoded.features, tau)?) } else { None };
            let views = seq
                .meta
                .rig
                .cameras
                .iter()
                .map(|cam| render_at(t, &g, offset, &rel, cam, &vs))
                .collect::<Result<Vec<_>>>()?;
            windows.push(WindowViews { tau, views });
        }
        let flow_next = if flow && f + 1 < seq.frames.len() { Some(self.model.flow.forward(t, p, pred.decoded.features, 1)?) } else { None };
        Ok(FrameGraph { pred, windows, flow_next })
    }

    fn window_loss(&self, t: &Tape<T>, seq: &Sequence, f: usize, w: &WindowViews) -> Result<Option<super::loss::FrameLoss>> {
        let target = &seq.frames[(f as i64 + w.tau as i64) as usize];
        let labels: Vec<ViewLabels<'_>> = (0..target.cameras())
            .map(|l| ViewLabels { semantics: target.camera_semantics(l), depth: target.camera_depth(l) })
            .collect();
        frame_loss(t, &w.views, &labels, self.model.classes, &self.weights())
    }

    fn loss_parts(&self, t: &Tape<T>, seq: &Sequence, f: usize, g: &FrameGraph) -> Result<LossParts> {
        let mut out = LossParts::default();
        for w in &g.windows {
            match self.window_loss(t, seq, f, w)? {
                Some(l) => {
                    out.depth += t.value(l.depth).item().f64();
                    out.seg += t.value(l.seg).item().f64();
                    out.total = Some(match out.total {
                        Some(a) => t.add(a, l.total),
                        None => l.total,
                    });
                }
                None => out.skipped += 1,
            }
        }
        Ok(out)
    }

    fn grid(&self, seq: &Sequence) -> Result<GridSpec> {
        let g = self.cfg.voxelize.grid();
        if g != seq.meta.grid {
            return Err(config_err("voxelize", "grid differs from the one the dataset labels were built on"));
        }
        Ok(g)
    }

    fn voxel_loss(&self, t: &Tape<T>, seq: &Sequence, f: usize, pred: &Prediction) -> Result<Var> {
        let d = &pred.decoded;
        let grid = self.grid(seq)?;
        let colors = class_colors(t, d.logits, self.cfg.train.seg_loss);
        let radius = truncation_radius(t.value(d.scale).data(), self.cfg.voxelize.truncation);
        let acc = voxelize_vars(t, d.means, d.inv_cov(t), d.opacity, colors, radius, &grid);
        let v = &self.cfg.voxelize;
        voxel_ce_loss(t, acc, &seq.frames[f].voxels, self.model.classes, v.tau_free, v.kappa)
    }

    fn memory_after(&self, t: &Tape<T>, seq: &Sequence, f: usize, g: &FrameGraph) -> Option<TemporalMemory<T>> {
        if f + 1 >= seq.frames.len() {
            return None;
        }
        let d = &g.pred.decoded;
        let means = t.value(d.means);
        let flow = match g.flow_next {
            Some(v) => t.value(v).clone(),
            None => Array::zeros(means.shape()),
        };
        let rel = relative_pose(&seq.frames[f].pose, &seq.frames[f + 1].pose);
        Some(advance_memory(&means, &t.value(d.features), &flow, &rel))
    }

    /// One optimizer step on the next frame of the cycle.
    pub fn train_step(&mut self, seq: &Sequence) -> Result<StepLog> {
        self.check_sequence(seq)?;
        let step = self.step;
        let diverged = |loss: f64| CoreError::Diverged { step, loss };
        let f = self.cursor;
        if f == 0 {
            self.memory = None;
        }
        let tc = self.cfg.train.clone();
        let t = Tape::new();
        let p = self.ps.bind(&t);
        let guard = |e: CoreError| match e {
            CoreError::BlockNonFinite { .. } | CoreError::NonFiniteGaussian { .. } => diverged(f64::NAN),
            e => e,
        };
        let (loss, depth, seg, mem) = match tc.supervision {
            Supervision::Render => {
                let taus = window(f, seq.frames.len(), tc.horizon, tc.include_current);
                let g = self.frame_graph(&t, &p, seq, f, self.memory.as_ref(), &taus, tc.temporal_module).map_err(guard)?;
                let parts = self.loss_parts(&t, seq, f, &g).map_err(guard)?;
                self.skipped_views += parts.skipped;
                (parts.total, parts.depth, parts.seg, self.memory_after(&t, seq, f, &g))
            }
            Supervision::Voxel => {
                let g = self.frame_graph(&t, &p, seq, f, self.memory.as_ref(), &[], tc.temporal_module).map_err(guard)?;
                let l = self.voxel_loss(&t, seq, f, &g.pred).map_err(guard)?;
                let v = t.value(l).item().f64();
                (Some(l), 0.0, v, self.memory_after(&t, seq, f, &g))
            }
        };
        let mut log = StepLog { step, frame: f, loss: 0.0, depth, seg, grad_norm: 0.0, lr: learning_rate(&tc, step) };
        if let Some(loss) = loss {
            log.loss = t.value(loss).item().f64();
            if !log.loss.is_finite() {
                return Err(diverged(log.loss));
            }
            let grads = t.grad(loss)?;
            self.ps.zero_grad();
            self.ps.accumulate(&p, &grads);
            log.grad_norm = self.ps.clip_grad_norm(tc.clip_norm);
            if !log.grad_norm.is_finite() {
                return Err(diverged(log.loss));
            }
            self.ps.adam_step(&AdamConfig { lr: log.lr, beta1: tc.beta1, beta2: tc.beta2, eps: tc.adam_eps });
        }
        self.flops += t.flops();
        self.memory = mem;
        self.cursor = (f + 1) % seq.frames.len();
        self.step += 1;
        self.curve.push(log.clone());
        Ok(log)
    }

    /// Runs the remaining steps of the budget. `on_step` sees every log and
    /// may write checkpoints.
    pub fn train(&mut self, seq: &Sequence, mut on_step: impl FnMut(&Self, &StepLog) -> Result<()>) -> Result<()> {
        while self.step < self.cfg.train.steps {
            let log = self.train_step(seq)?;
            on_step(self, &log)?;
        }
        Ok(())
    }

    /// Mean training loss over the last `k` steps.
    pub fn recent_loss(&self, k: usize) -> f64 {
        let tail = &self.curve[self.curve.len().saturating_sub(k)..];
        tail.iter().map(|l| l.loss).sum::<f64>() / tail.len().max(1) as f64
    }

    /// Forward pass of every frame in order, with memory carried as in training.
    fn predict_sequence(&self, seq: &Sequence, mut visit: impl FnMut(usize, &Tape<T>, &FrameGraph) -> Result<()>) -> Result<()> {
        self.check_sequence(seq)?;
        let tc = &self.cfg.train;
        let mut memory: Option<TemporalMemory<T>> = None;
        for f in 0..seq.frames.len() {
            let t = Tape::new();
            let p = self.ps.bind(&t);
            let taus = window(f, seq.frames.len(), tc.horizon, true);
            let g = self.frame_graph(&t, &p, seq, f, memory.as_ref(), &taus, tc.temporal_module)?;
            visit(f, &t, &g)?;
            memory = self.memory_after(&t, seq, f, &g);
        }
        Ok(())
    }

    pub fn evaluate(&self, seq: &Sequence) -> Result<EvalReport> {
        let grid = self.grid(seq)?;
        let classes = self.model.classes;
        let mut occ = OccupancyAccumulator::new(classes);
        let mut depth = DepthAccumulator::default();
        let (mut correct, mut pixels) = (0u64, 0u64);
        let (mut current, mut temporal) = (Vec::new(), Vec::new());
        let mut skipped = 0;
        self.predict_sequence(seq, |f, t, g| {
            let pv = self.voxel_grid(t, &g.pred, &grid);
            occ.add(&pv.labels, &seq.frames[f].voxels)?;
            let mut tsum = Vec::new();
            for w in &g.windows {
                match self.window_loss(t, seq, f, w)? {
                    Some(l) => {
                        let v = t.value(l.total).item().f64();
                        if w.tau == 0 { current.push(v) } else { tsum.push(v) }
                    }
                    None => skipped += 1,
                }
                if w.tau != 0 {
                    continue;
                }
                let frame = &seq.frames[f];
                for (l, &img) in w.views.iter().enumerate() {
                    let img = t.value(img);
                    let ch = classes + 2;
                    let sem = frame.camera_semantics(l);
                    let gt: Vec<f64> = frame.camera_depth(l).iter().map(|&d| d as f64).collect();
                    let pd: Vec<f64> = img.data().chunks(ch).map(|px| px[classes].f64()).collect();
                    depth.add(&pd, &gt, |i| sem[i] != SKY);
                    for (px, &y) in img.data().chunks(ch).zip(sem) {
                        if y == SKY {
                            continue;
                        }
                        pixels += 1;
                        if argmax(&px[..classes]) == y as usize {
                            correct += 1;
                        }
                    }
                }
            }
            if !tsum.is_empty() {
                temporal.push(tsum.iter().sum::<f64>() / tsum.len() as f64);
            }
            Ok(())
        })?;
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Ok(EvalReport {
            frames: seq.frames.len(),
            occupancy: occ.report(),
            depth: depth.report()?,
            pixel_accuracy: if pixels == 0 { 0.0 } else { correct as f64 / pixels as f64 },
            current_loss: mean(&current),
            temporal_loss: mean(&temporal),
            skipped_views: skipped,
        })
    }

    /// Thresholded occupancy grid of a prediction.
    pub fn voxel_grid(&self, t: &Tape<T>, pred: &Prediction, grid: &GridSpec) -> VoxelGrid {
        let d = &pred.decoded;
        let probs = class_colors(t, d.logits, self.cfg.train.seg_loss);
        let inv = d.inv_cov(t);
        let (m, o, c, s, inv) = (t.value(d.means), t.value(d.opacity), t.value(probs), t.value(d.scale), t.value(inv));
        let radius = truncation_radius(s.data(), self.cfg.voxelize.truncation);
        let inp = VoxelInputs { means: m.data(), inv_cov: inv.data(), radius: &radius, opacity: o.data(), colors: c.data(), channels: self.model.classes };
        VoxelGrid::voxelize(&inp, grid, self.cfg.voxelize.tau_free)
    }

    /// Gaussians of frame `f` after running the sequence up to it.
    pub fn frame_gaussians(&self, seq: &Sequence, f: usize) -> Result<(GaussianSet, VoxelGrid, Vec<(i32, Vec<[f64; 3]>)>)> {
        if f >= seq.frames.len() {
            return Err(config_err("frame", format!("{f} outside sequence of {} frames", seq.frames.len())));
        }
        let grid = self.grid(seq)?;
        let mut out = None;
        self.predict_sequence_until(seq, f, |t, g, p| {
            let set = GaussianSet::from_vars(t, &g.pred.decoded);
            let vox = self.voxel_grid(t, &g.pred, &grid);
            let mut flows = Vec::new();
            for tau in 1..=self.model.flow.horizon as i32 {
                for s in [-tau, tau] {
                    let v = t.value(self.model.flow.forward(t, p, g.pred.decoded.features, s)?);
                    flows.push((s, v.data().chunks(3).map(|c| [c[0].f64(), c[1].f64(), c[2].f64()]).collect()));
                }
            }
            flows.sort_by_key(|(s, _)| *s);
            out = Some((set, vox, flows));
            Ok(())
        })?;
        out.ok_or_else(|| CoreError::Missing(format!("frame {f}")))
    }

    fn predict_sequence_until(&self, seq: &Sequence, last: usize, mut visit: impl FnMut(&Tape<T>, &FrameGraph, &Binding) -> Result<()>) -> Result<()> {
        self.check_sequence(seq)?;
        let mut memory: Option<TemporalMemory<T>> = None;
        for f in 0..=last {
            let t = Tape::new();
            let p = self.ps.bind(&t);
            let g = self.frame_graph(&t, &p, seq, f, memory.as_ref(), &[], self.cfg.train.temporal_module)?;
            if f == last {
                return visit(&t, &g, &p);
            }
            memory = self.memory_after(&t, seq, f, &g);
        }
        Ok(())
    }

    /// Views of frame `f` rendered at relative step `tau`, with or without
    /// the predicted flow, as `[H, W, C + 2]` per camera.
    pub fn render_offsets(&self, seq: &Sequence, f: usize, taus: &[i32], flows: &[bool]) -> Result<Vec<RenderedSet>> {
        if f >= seq.frames.len() {
            return Err(config_err("frame", format!("{f} outside sequence of {} frames", seq.frames.len())));
        }
        for &tau in taus {
            let g = f as i64 + tau as i64;
            if g < 0 || g >= seq.frames.len() as i64 {
                return Err(config_err("t", format!("frame {f} + {tau} outside the sequence")));
            }
            if tau != 0 && tau.unsigned_abs() as usize > self.model.flow.horizon {
                return Err(CoreError::Horizon { t: tau, horizon: self.model.flow.horizon });
            }
        }
        let mut out = Vec::new();
        self.predict_sequence_until(seq, f, |t, g, p| {
            let colors = class_colors(t, g.pred.decoded.logits, self.cfg.train.seg_loss);
            let gv = g.pred.decoded.splat(colors);
            let vs = self.view_settings();
            for &flow in flows {
                for &tau in taus {
                    let target = (f as i64 + tau as i64) as usize;
                    let rel = relative_pose(&seq.frames[f].pose, &seq.frames[target].pose);
                    let offset = if tau != 0 && flow { Some(self.model.flow.forward(t, p, g.pred.decoded.features, tau)?) } else { None };
                    let views = seq
                        .meta
                        .rig
                        .cameras
                        .iter()
                        .map(|cam| render_at(t, &gv, offset, &rel, cam, &vs).map(|v| t.value(v).cast::<f64>()))
                        .collect::<Result<Vec<_>>>()?;
                    out.push(RenderedSet { tau, flow, views });
                }
            }
            Ok(())
        })?;
        Ok(out)
    }
}

/// Rasterized views of one `(tau, flow)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSet {
    pub tau: i32,
    pub flow: bool,
    pub views: Vec<Array<f64>>,
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub occupancy: OccupancyReport,
    pub depth: DepthReport,
    /// Rendered argmax class against image labels on valid pixels.
    pub pixel_accuracy: f64,
    /// Mean current-frame rendering loss.
    pub current_loss: Option<f64>,
    /// Mean rendering loss over the other frames of the window.
    pub temporal_loss: Option<f64>,
    pub skipped_views: usize,
}
