use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sgo_core::config::{Precision, RunConfig};
use sgo_core::export::{write_depth_pgm, write_label_png, write_ply};
use sgo_core::scene::{generate_sequence, load_dataset, write_dataset, Sequence, SKY};
use sgo_core::train::{bench_attention, doubling_ratios, write_bench_csv, AttentionVariant, EvalReport, StepLog, Trainer};
use sgo_diff::Scalar;

use crate::manifest::Manifest;
use crate::settings::ConfigError;
use crate::{Cli, Command};

/// Output directory is non-empty and `--overwrite` was not given.
#[derive(Debug)]
pub struct OutputExists(pub PathBuf);

impl std::fmt::Display for OutputExists {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} is not empty; pass --overwrite to replace it", self.0.display())
    }
}

impl std::error::Error for OutputExists {}

fn prepare_out(out: &Path, overwrite: bool, inputs: &[&Path]) -> Result<()> {
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        if !overwrite {
            return Err(OutputExists(out.to_path_buf()).into());
        }
        let o = out.canonicalize()?;
        for i in inputs {
            if i.canonicalize().is_ok_and(|i| i.starts_with(&o)) {
                anyhow::bail!("refusing to overwrite {}: it contains input {}", out.display(), i.display());
            }
        }
        fs::remove_dir_all(out).with_context(|| out.display().to_string())?;
    }
    fs::create_dir_all(out).with_context(|| out.display().to_string())
}

fn require(p: &Path) -> Result<()> {
    if !p.exists() {
        return Err(sgo_core::CoreError::Missing(p.display().to_string()).into());
    }
    Ok(())
}

fn inputs<'a>(cli: &'a Cli, files: &[&'a Path]) -> Vec<&'a Path> {
    let mut v: Vec<&Path> = files.to_vec();
    if let Some(c) = &cli.config {
        v.push(c);
    }
    v
}

pub fn run(cli: &Cli, cfg: RunConfig) -> Result<()> {
    match cfg.train.precision {
        Precision::F32 => run_with::<f32>(cli, cfg),
        Precision::F64 => run_with::<f64>(cli, cfg),
    }
}

fn run_with<T: Scalar>(cli: &Cli, cfg: RunConfig) -> Result<()> {
    match &cli.command {
        Command::Gen { out } => {
            let ins = inputs(cli, &[]);
            prepare_out(out, cli.overwrite, &ins)?;
            let seq = generate_sequence(&cfg.data, &cfg.voxelize.grid(), cfg.train.horizon)?;
            write_dataset(&seq, out, cfg.data.png)?;
            Manifest::new("gen", &cfg, &ins)?.write(out)
        }
        Command::Train { data, out } => {
            let seq = open_data(data)?;
            let ins = inputs(cli, &[data]);
            prepare_out(out, cli.overwrite, &ins)?;
            Manifest::new("train", &cfg, &ins)?.write(out)?;
            train::<T>(&cfg, &seq, out)
        }
        Command::Eval { checkpoint, data, out } => {
            require(checkpoint)?;
            let seq = open_data(data)?;
            let ins = inputs(cli, &[checkpoint, data]);
            prepare_out(out, cli.overwrite, &ins)?;
            let tr = Trainer::<T>::from_checkpoint(&cfg, checkpoint)?;
            let report = tr.evaluate(&seq)?;
            write_metrics(out, &Metrics { train: None, eval: report })?;
            Manifest::new("eval", &cfg, &ins)?.write(out)
        }
        Command::Render { checkpoint, data, frame, offsets, flow, out } => {
            require(checkpoint)?;
            let flows = flow
                .iter()
                .map(|f| match f.as_str() {
                    "on" => Ok(true),
                    "off" => Ok(false),
                    other => Err(ConfigError { field: "flow".into(), reason: format!("expected on or off, got {other}") }),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let seq = open_data(data)?;
            let ins = inputs(cli, &[checkpoint, data]);
            prepare_out(out, cli.overwrite, &ins)?;
            let tr = Trainer::<T>::from_checkpoint(&cfg, checkpoint)?;
            render::<T>(&tr, &seq, *frame, offsets, &flows, out)?;
            Manifest::new("render", &cfg, &ins)?.write(out)
        }
        Command::Voxelize { checkpoint, data, frame, out } => {
            require(checkpoint)?;
            let seq = open_data(data)?;
            let ins = inputs(cli, &[checkpoint, data]);
            prepare_out(out, cli.overwrite, &ins)?;
            let tr = Trainer::<T>::from_checkpoint(&cfg, checkpoint)?;
            let (set, vox, _) = tr.frame_gaussians(&seq, *frame)?;
            vox.write(out)?;
            write_ply(&out.join("gaussians.ply"), &set.ply_rows())?;
            Manifest::new("voxelize", &cfg, &ins)?.write(out)
        }
        Command::BenchAttention { n, out } => {
            let ins = inputs(cli, &[]);
            prepare_out(out, cli.overwrite, &ins)?;
            let mut bc = cfg.bench.clone();
            if !n.is_empty() {
                bc.n = n.clone();
            }
            let rows = bench_attention(&bc)?;
            write_bench_csv(&out.join("bench.csv"), &rows)?;
            let summary = serde_json::json!({
                "rows": rows,
                "isa_doubling_ratios": doubling_ratios(&rows, AttentionVariant::Isa),
                "full_doubling_ratios": doubling_ratios(&rows, AttentionVariant::Full),
            });
            fs::write(out.join("bench.json"), serde_json::to_string_pretty(&summary)?)?;
            Manifest::new("bench-attention", &cfg, &ins)?.write(out)
        }
    }
}

fn open_data(dir: &Path) -> Result<Sequence> {
    require(&dir.join("meta.json"))?;
    Ok(load_dataset(dir)?)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    steps: usize,
    final_loss: f64,
    /// Mean loss over the last pass through the sequence.
    recent_loss: f64,
    skipped_views: usize,
    flops: u64,
}

#[derive(Debug, Serialize)]
struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<TrainSummary>,
    eval: EvalReport,
}

fn train<T: Scalar>(cfg: &RunConfig, seq: &Sequence, out: &Path) -> Result<()> {
    let start = Instant::now();
    let mut tr = Trainer::<T>::new(cfg)?;
    let ckpt_dir = out.join("checkpoints");
    let every = cfg.train.checkpoint_every;
    let log_every = cfg.train.log_every.max(1);
    tr.train(seq, |tr, log| {
        if log.step % log_every == 0 {
            eprintln!("step {:>5} frame {:>3} loss {:.5} depth {:.5} seg {:.5} |g| {:.3}", log.step, log.frame, log.loss, log.depth, log.seg, log.grad_norm);
        }
        if every > 0 && (log.step + 1) % every == 0 {
            fs::create_dir_all(&ckpt_dir).map_err(|e| sgo_core::CoreError::Io { path: ckpt_dir.clone(), source: e })?;
            tr.save(&ckpt_dir.join(format!("step_{:06}.sgoa", log.step + 1)))?;
        }
        Ok(())
    })?;
    tr.save(&out.join("checkpoint.sgoa"))?;
    write_curve(&out.join("loss_curve.csv"), &tr.curve)?;
    let trained = start.elapsed().as_secs_f64();
    let eval = tr.evaluate(seq)?;
    let summary = TrainSummary {
        steps: tr.step,
        final_loss: tr.curve.last().map_or(0.0, |l| l.loss),
        recent_loss: tr.recent_loss(seq.frames.len()),
        skipped_views: tr.skipped_views,
        flops: tr.flops,
    };
    write_metrics(out, &Metrics { train: Some(summary), eval })?;
    let timing = serde_json::json!({ "train_seconds": trained, "total_seconds": start.elapsed().as_secs_f64() });
    fs::write(out.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
    Ok(())
}

fn write_curve(path: &Path, curve: &[StepLog]) -> Result<()> {
    let mut s = String::from("step,frame,loss,depth,seg,grad_norm,lr\n");
    for l in curve {
        s.push_str(&format!("{},{},{:e},{:e},{:e},{:e},{:e}\n", l.step, l.frame, l.loss, l.depth, l.seg, l.grad_norm, l.lr));
    }
    fs::write(path, s).with_context(|| path.display().to_string())
}

fn write_metrics(out: &Path, m: &Metrics) -> Result<()> {
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(m)?)?;
    let e = &m.eval;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:e}"));
    let classes = e.occupancy.per_class.len();
    let mut header = String::from("miou,iou,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,pixel_accuracy,current_loss,temporal_loss");
    let mut row = format!(
        "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
        e.occupancy.miou,
        e.occupancy.iou,
        e.depth.abs_rel,
        e.depth.sq_rel,
        e.depth.rmse,
        e.depth.rmse_log,
        e.depth.delta1,
        e.depth.delta2,
        e.depth.delta3,
        e.pixel_accuracy,
        opt(e.current_loss),
        opt(e.temporal_loss)
    );
    for c in 0..classes {
        header.push_str(&format!(",iou_class{c}"));
        row.push_str(&format!(",{}", opt(e.occupancy.per_class[c])));
    }
    fs::write(out.join("metrics.csv"), format!("{header}\n{row}\n"))?;
    Ok(())
}

fn render<T: Scalar>(tr: &Trainer<T>, seq: &Sequence, frame: usize, offsets: &[i32], flows: &[bool], out: &Path) -> Result<()> {
    let sets = tr.render_offsets(seq, frame, offsets, flows)?;
    let classes = tr.model.classes;
    for set in &sets {
        let dir = out.join(format!("views_t{:+}_flow-{}", set.tau, if set.flow { "on" } else { "off" }));
        fs::create_dir_all(&dir)?;
        for (l, v) in set.views.iter().enumerate() {
            let (h, w) = (v.shape()[0], v.shape()[1]);
            let px: Vec<&[f64]> = v.data().chunks(classes + 2).collect();
            let labels: Vec<u8> = px
                .iter()
                .map(|p| {
                    if p[classes + 1] < 0.5 {
                        return SKY;
                    }
                    (0..classes).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0) as u8
                })
                .collect();
            let depth: Vec<f64> = px.iter().map(|p| p[classes]).collect();
            write_label_png(&dir.join(format!("cam{l}_semantics.png")), w, h, &labels)?;
            write_depth_pgm(&dir.join(format!("cam{l}_depth.pgm")), w, h, &depth)?;
        }
    }
    let (set, _, flows_pred) = tr.frame_gaussians(seq, frame)?;
    write_ply(&out.join("gaussians.ply"), &set.ply_rows())?;
    for &tau in offsets {
        if tau == 0 {
            continue;
        }
        if let Some((_, f)) = flows_pred.iter().find(|(s, _)| *s == tau) {
            write_ply(&out.join(format!("gaussians_t{tau:+}_flow.ply")), &set.apply_flow(f)?.ply_rows())?;
        }
    }
    Ok(())
}
