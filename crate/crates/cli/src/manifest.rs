//! `manifest.json`: what produced a directory, with content hashes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sgo_core::config::RunConfig;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub config_sha256: String,
    pub data_seed: u64,
    pub train_seed: u64,
    /// Hash over the sorted `(name, blob hash)` pairs of all inputs.
    pub inputs_sha256: String,
    pub inputs: Vec<InputHash>,
    pub config: RunConfig,
}

/// Hash of a blob framed as `blob <len>\0<bytes>`.
fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn files_under(p: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(p).with_context(|| p.display().to_string())?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n == "manifest.json") {
                continue;
            }
            files_under(&e, out)?;
        }
    } else {
        out.push(p.to_path_buf());
    }
    Ok(())
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, inputs: &[&Path]) -> anyhow::Result<Self> {
        let canonical = serde_json::to_vec(cfg)?;
        let mut files = Vec::new();
        for p in inputs {
            files_under(p, &mut files)?;
        }
        let mut hashes = Vec::new();
        for f in &files {
            let bytes = fs::read(f).with_context(|| f.display().to_string())?;
            hashes.push(InputHash { path: f.display().to_string(), sha256: blob_hash(&bytes) });
        }
        let mut tree = Sha256::new();
        for h in &hashes {
            let name = Path::new(&h.path).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            tree.update(format!("{name} {}\n", h.sha256).as_bytes());
        }
        Ok(Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: hex(&Sha256::digest(&canonical)),
            data_seed: cfg.data.seed,
            train_seed: cfg.train.seed,
            inputs_sha256: hex(&tree.finalize()),
            inputs: hashes,
            config: cfg.clone(),
        })
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| path.display().to_string())
    }
}
