//! On-disk sequences: `meta.json` plus one binary blob per frame.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgo_diff::container::{parse_container, write_container, NamedTensor};
use sgo_diff::Array;

use super::labels::FrameRecord;
use super::rig::CameraRig;
use super::trajectory::EgoPose;
use super::world::Primitive;
use crate::error::{io_err, CoreError, Result};
use crate::geometry::Rigid;
use crate::voxel::GridSpec;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub seed: u64,
    pub classes: usize,
    pub class_names: Vec<String>,
    pub cameras: usize,
    pub height: usize,
    pub width: usize,
    pub dt: f64,
    pub extents: [f64; 6],
    pub frames: usize,
    pub rig: CameraRig,
    pub poses: Vec<EgoPose>,
    pub grid: GridSpec,
    pub world: Vec<Primitive>,
}

/// A sequence held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub meta: DatasetMeta,
    pub frames: Vec<FrameRecord>,
}

fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("frame_{i:04}.bin"))
}

fn frame_tensors(f: &FrameRecord, grid: &GridSpec) -> Vec<NamedTensor> {
    let pose: [[f64; 4]; 4] = f.pose.ego_from_world.into();
    let pose = Array::<f64>::new(vec![4, 4], pose.iter().flatten().copied().collect());
    let (l, h, w) = (f.images.shape()[0], f.images.shape()[1], f.images.shape()[2]);
    let mut out = vec![
        NamedTensor::from_array("images", &f.images),
        NamedTensor::from_array("depth", &f.depth),
        NamedTensor::u8("semantics", &[l, h, w], f.semantics.clone()),
        NamedTensor::from_array("pose", &pose),
        NamedTensor::from_array("timestamp", &Array::<f64>::scalar(f.pose.timestamp)),
    ];
    if !f.voxels.is_empty() {
        out.push(NamedTensor::u8("voxels", &grid.dims, f.voxels.clone()));
    }
    out
}

fn find<'a>(t: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor> {
    t.iter()
        .find(|e| e.name == name)
        .ok_or_else(|| CoreError::Format(format!("frame blob lacks '{name}'")))
}

fn frame_from_tensors(index: usize, t: &[NamedTensor]) -> Result<FrameRecord> {
    let pose = find(t, "pose")?.to_array::<f64>()?;
    let m: [[f64; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| pose.data()[i * 4 + j]));
    let ego_from_world = Rigid::try_from(m).map_err(CoreError::Format)?;
    let timestamp = find(t, "timestamp")?.to_array::<f64>()?.item();
    let voxels = match t.iter().find(|e| e.name == "voxels") {
        Some(v) => v.as_u8()?.to_vec(),
        None => Vec::new(),
    };
    Ok(FrameRecord {
        index,
        pose: EgoPose { index, ego_from_world, timestamp },
        images: find(t, "images")?.to_array::<f32>()?,
        depth: find(t, "depth")?.to_array::<f32>()?,
        semantics: find(t, "semantics")?.as_u8()?.to_vec(),
        voxels,
    })
}

/// Writes `meta.json` and every frame blob; optionally PNG mirrors.
pub fn write_dataset(seq: &Sequence, dir: &Path, png_mirrors: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&seq.meta)?;
    fs::write(&meta_path, json).map_err(io_err(&meta_path))?;
    for f in &seq.frames {
        let path = frame_path(dir, f.index);
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_container(BufWriter::new(file), &frame_tensors(f, &seq.meta.grid))?;
        if png_mirrors {
            let (h, w) = f.size();
            for l in 0..f.cameras() {
                let px: Vec<u8> = f.images.data()[l * h * w * 3..(l + 1) * h * w * 3]
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect();
                crate::export::write_png_rgb(&dir.join(format!("frame_{:04}_cam{l}.png", f.index)), w, h, &px)?;
            }
        }
    }
    Ok(())
}

/// Lazily loaded dataset; frames are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    dir: PathBuf,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        if meta.version != DATASET_VERSION {
            return Err(CoreError::Format(format!(
                "dataset version {} (expected {DATASET_VERSION})",
                meta.version
            )));
        }
        if meta.poses.len() != meta.frames {
            return Err(CoreError::Format("pose count differs from frame count".into()));
        }
        Ok(Self { meta, dir: dir.to_path_buf() })
    }

    pub fn len(&self) -> usize {
        self.meta.frames
    }

    pub fn is_empty(&self) -> bool {
        self.meta.frames == 0
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn frame(&self, i: usize) -> Result<FrameRecord> {
        if i >= self.meta.frames {
            return Err(CoreError::Missing(format!("frame {i} of {}", self.meta.frames)));
        }
        let path = frame_path(&self.dir, i);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let t = parse_container(&bytes)?;
        let f = frame_from_tensors(i, &t)?;
        let (h, w) = f.size();
        if f.cameras() != self.meta.cameras || h != self.meta.height || w != self.meta.width {
            return Err(CoreError::Format(format!("frame {i} size disagrees with meta.json")));
        }
        Ok(f)
    }

    pub fn load_all(&self) -> Result<Sequence> {
        let frames = (0..self.meta.frames).map(|i| self.frame(i)).collect::<Result<_>>()?;
        Ok(Sequence { meta: self.meta.clone(), frames })
    }
}

/// Eager load of a whole sequence.
pub fn load_dataset(dir: &Path) -> Result<Sequence> {
    Dataset::open(dir)?.load_all()
}
