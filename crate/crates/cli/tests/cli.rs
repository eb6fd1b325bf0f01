use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
frames = 5
cameras = 2
height = 24
width = 40
boxes = 2
poles = 1
vegetation = 1
walls = 1

[model]
gaussians = 64
inducing = 16
latent = 16
heads = 2
blocks = 1
ffn_mult = 2
offsets = 2
encoder_channels = [8, 16]
flow_hidden = 16

[train]
steps = 6
horizon = 1
warmup = 2
log_every = 100

[voxelize]
origin = [-8.0, -8.0, -0.4]
voxel_size = 0.8
dims = [20, 20, 4]

[bench]
n = [100, 200, 400]
inducing = 20
latent = 16
heads = 2
"#;

fn sgo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgo")).args(args).env("SGO_THREADS", "1").output().expect("spawn sgo")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Work {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

impl Work {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("tiny.toml");
        fs::write(&config, TINY).unwrap();
        Self { config: config.display().to_string(), root, _dir: dir }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut v = vec!["--config", self.config.as_str()];
        v.extend_from_slice(args);
        sgo(&v)
    }

    fn ok(&self, args: &[&str]) {
        let o = self.run(args);
        assert_eq!(code(&o), 0, "sgo {args:?} failed: {}", stderr(&o));
    }

    fn trained(&self) -> (String, String) {
        let data = self.path("data");
        let out = self.path("run");
        self.ok(&["gen", "--out", &data]);
        self.ok(&["train", "--data", &data, "--out", &out]);
        (data, out)
    }
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn help_lists_every_config_key_with_default() {
    let o = sgo(&["--help"]);
    assert_eq!(code(&o), 0);
    let help = String::from_utf8_lossy(&o.stdout);
    let cfg = serde_json::to_value(sgo_core::config::RunConfig::default()).unwrap();
    let mut n = 0;
    for (section, fields) in cfg.as_object().unwrap() {
        for key in fields.as_object().unwrap().keys() {
            assert!(help.contains(&format!("{section}.{key} = ")), "missing {section}.{key}");
            n += 1;
        }
    }
    assert!(n > 50);
    assert!(help.contains("train.lr = 0.005"));
}

#[test]
fn invalid_config_exits_2_with_field_path() {
    let w = Work::new();
    let out = w.path("x");
    let o = w.run(&["--set", "train.lr=-1", "gen", "--out", &out]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.lr"), "{}", stderr(&o));

    let o = w.run(&["--set", "train.bogus=1", "gen", "--out", &out]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.bogus"));

    let o = w.run(&["--set", "model.gaussians=\"many\"", "gen", "--out", &out]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("model.gaussians"), "{}", stderr(&o));

    let bad = w.root.join("bad.toml");
    fs::write(&bad, "[model]\nfoo = 1\n").unwrap();
    let o = sgo(&["--config", bad.to_str().unwrap(), "gen", "--out", &out]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("model.foo"));
}

#[test]
fn missing_inputs_exit_3() {
    let w = Work::new();
    let o = w.run(&["train", "--data", &w.path("nowhere"), "--out", &w.path("o")]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = sgo(&["--config", &w.path("absent.toml"), "gen", "--out", &w.path("o")]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn divergence_exits_4_without_metrics() {
    let w = Work::new();
    let data = w.path("data");
    w.ok(&["gen", "--out", &data]);
    let out = w.path("boom");
    let o = w.run(&["--set", "train.lr=1e30", "--set", "train.clip_norm=1e30", "train", "--data", &data, "--out", &out]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(!Path::new(&out).join("metrics.json").exists());
}

#[test]
fn pipeline_is_reproducible_and_outputs_are_guarded() {
    let w = Work::new();
    let (data, out) = w.trained();
    let m1 = read(Path::new(&out).join("metrics.json"));
    let manifest: serde_json::Value = serde_json::from_str(&read(Path::new(&out).join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(!manifest["inputs"].as_array().unwrap().is_empty());
    for f in ["checkpoint.sgoa", "loss_curve.csv", "metrics.csv"] {
        assert!(Path::new(&out).join(f).exists(), "{f}");
    }

    let o = w.run(&["train", "--data", &data, "--out", &out]);
    assert_eq!(code(&o), 2);
    w.ok(&["--overwrite", "train", "--data", &data, "--out", &out]);
    assert_eq!(read(Path::new(&out).join("metrics.json")), m1);

    let data2 = w.path("data2");
    let out2 = w.path("run2");
    w.ok(&["gen", "--out", &data2]);
    w.ok(&["train", "--data", &data2, "--out", &out2]);
    assert_eq!(read(Path::new(&out2).join("metrics.json")), m1);

    let ev = w.path("eval");
    let ck = Path::new(&out).join("checkpoint.sgoa").display().to_string();
    w.ok(&["eval", "--checkpoint", &ck, "--data", &data, "--out", &ev]);
    let train_m: serde_json::Value = serde_json::from_str(&m1).unwrap();
    let eval_m: serde_json::Value = serde_json::from_str(&read(Path::new(&ev).join("metrics.json"))).unwrap();
    assert_eq!(train_m["eval"], eval_m["eval"]);
}

#[test]
fn render_emits_one_view_set_per_offset_and_flow_mode() {
    let w = Work::new();
    let (data, out) = w.trained();
    let ck = Path::new(&out).join("checkpoint.sgoa").display().to_string();
    let r = w.path("render");
    w.ok(&["render", "--checkpoint", &ck, "--data", &data, "--frame", "2", "--t", "-1", "0", "1", "--flow", "on", "off", "--out", &r]);
    for t in ["-1", "+0", "+1"] {
        for f in ["on", "off"] {
            let d = Path::new(&r).join(format!("views_t{t}_flow-{f}"));
            assert!(d.join("cam0_semantics.png").exists(), "{}", d.display());
            assert!(d.join("cam1_depth.pgm").exists());
        }
    }
    assert!(Path::new(&r).join("gaussians.ply").exists());
    assert!(Path::new(&r).join("manifest.json").exists());

    let o = w.run(&["render", "--checkpoint", &ck, "--data", &data, "--frame", "0", "--t", "-1", "--out", &w.path("r2")]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let v = w.path("vox");
    w.ok(&["voxelize", "--checkpoint", &ck, "--data", &data, "--frame", "1", "--out", &v]);
    for f in ["voxels.bin", "voxels.json", "voxels.xyz", "gaussians.ply"] {
        assert!(Path::new(&v).join(f).exists(), "{f}");
    }
}

#[test]
fn bench_attention_writes_two_by_three_csv() {
    let w = Work::new();
    let out = w.path("bench");
    w.ok(&["bench-attention", "--n", "100", "200", "400", "--out", &out]);
    let csv = read(Path::new(&out).join("bench.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("n,variant,flops,peak_bytes"));
    assert_eq!(lines.iter().filter(|l| l.contains(",isa,")).count(), 3);
    assert_eq!(lines.iter().filter(|l| l.contains(",full,")).count(), 3);
}
