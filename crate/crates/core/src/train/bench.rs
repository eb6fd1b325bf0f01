//! Cost of induced versus full self-attention as N grows.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sgo_diff::{Array, ParamStore, Tape};

use crate::config::BenchConfig;
use crate::error::{config_err, io_err, Result};
use crate::model::nn::{init_array, Init};
use crate::model::{full_self_attention, Isa, MhaBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionVariant {
    Isa,
    Full,
}

impl AttentionVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Isa => "isa",
            Self::Full => "full",
        }
    }
}

/// One forward pass at one N. Costs are `None` past the cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub variant: AttentionVariant,
    pub flops: Option<u64>,
    /// Bytes of every array alive at the end of the (single precision)
    /// forward pass, which is the peak for a tape.
    pub peak_bytes: Option<u64>,
    pub seconds: Option<f64>,
    pub status: String,
}

/// Runs both variants for every N in `cfg.n` (ascending).
pub fn bench_attention(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.n.is_empty() || cfg.n.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_err("bench.n", "must be a non-empty ascending list"));
    }
    if cfg.heads == 0 || !cfg.latent.is_multiple_of(cfg.heads) {
        return Err(config_err("bench.heads", "must divide bench.latent"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ps = ParamStore::<f32>::new();
    let isa = Isa::new(&mut ps, &mut rng, "bench.isa", cfg.inducing, cfg.latent, cfg.heads, 2)?;
    let full = MhaBlock::new(&mut ps, &mut rng, "bench.full", cfg.latent, cfg.heads, 2)?;
    let mut rows = Vec::new();
    for &n in &cfg.n {
        let x: Array<f32> = init_array(&mut rng, &[n, cfg.latent], Init::Normal(1.0));
        for variant in [AttentionVariant::Isa, AttentionVariant::Full] {
            if variant == AttentionVariant::Full && n > cfg.full_cap {
                rows.push(BenchRow { n, variant, flops: None, peak_bytes: None, seconds: None, status: "exceeds cap".into() });
                continue;
            }
            let mut best = f64::INFINITY;
            let mut cost = (0, 0);
            for _ in 0..cfg.repeats.max(1) {
                let start = Instant::now();
                let t = Tape::new();
                let p = ps.bind(&t);
                let xv = t.constant(x.clone());
                match variant {
                    AttentionVariant::Isa => {
                        isa.forward(&t, &p, xv);
                    }
                    AttentionVariant::Full => {
                        full_self_attention(&t, &p, &full, xv, cfg.full_cap)?;
                    }
                }
                best = best.min(start.elapsed().as_secs_f64());
                cost = (t.flops(), t.live_bytes());
            }
            rows.push(BenchRow { n, variant, flops: Some(cost.0), peak_bytes: Some(cost.1), seconds: Some(best), status: "ok".into() });
        }
    }
    Ok(rows)
}

/// Ratios `cost(N_{i+1}) / cost(N_i)` of peak bytes for one variant.
pub fn doubling_ratios(rows: &[BenchRow], variant: AttentionVariant) -> Vec<f64> {
    let costs: Vec<u64> = rows.iter().filter(|r| r.variant == variant).filter_map(|r| r.peak_bytes).collect();
    costs.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect()
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    let opt = |v: Option<u64>| v.map_or_else(String::new, |v| v.to_string());
    let mut s = String::from("n,variant,flops,peak_bytes,seconds,status\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n,
            r.variant.name(),
            opt(r.flops),
            opt(r.peak_bytes),
            r.seconds.map_or_else(String::new, |v| format!("{v:.4}")),
            r.status
        ));
    }
    f.write_all(s.as_bytes()).map_err(io_err(path))
}
