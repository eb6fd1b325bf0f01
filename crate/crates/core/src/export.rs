//! Inspection exports: PNG, 16-bit PGM, PLY and XYZ dumps.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{io_err, CoreError, Result};

/// Class colours; index 255 (sky/free) maps to black.
pub const PALETTE: [[u8; 3]; 8] = [
    [128, 128, 128],
    [230, 100, 50],
    [50, 90, 220],
    [240, 220, 60],
    [60, 180, 75],
    [200, 200, 210],
    [170, 60, 200],
    [60, 200, 200],
];

pub fn palette(class: u8) -> [u8; 3] {
    if class == 255 {
        [0, 0, 0]
    } else {
        PALETTE[class as usize % PALETTE.len()]
    }
}

fn png_err(path: &Path, e: png::EncodingError) -> CoreError {
    CoreError::Format(format!("{}: {e}", path.display()))
}

pub fn write_png_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| png_err(path, e))?;
    w.write_image_data(rgb).map_err(|e| png_err(path, e))?;
    Ok(())
}

/// Per-pixel class ids as a palette-coloured PNG.
pub fn write_label_png(path: &Path, width: usize, height: usize, labels: &[u8]) -> Result<()> {
    let rgb: Vec<u8> = labels.iter().flat_map(|&c| palette(c)).collect();
    write_png_rgb(path, width, height, &rgb)
}

/// Depth in meters as a binary 16-bit PGM with millimeter quantization.
pub fn write_depth_pgm(path: &Path, width: usize, height: usize, depth: &[f64]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &d in depth {
        let mm = (d * 1000.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&mm.to_be_bytes());
    }
    fs::write(path, out).map_err(io_err(path))
}

pub struct PlyRow {
    pub mean: [f64; 3],
    pub opacity: f64,
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
    pub class: usize,
    pub class_logit: f64,
}

/// ASCII PLY point dump of Gaussians.
pub fn write_ply(path: &Path, rows: &[PlyRow]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property float opacity\nproperty float scale_0\nproperty float scale_1\nproperty float scale_2\n\
         property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\n\
         property uchar class\nproperty float class_logit\nend_header\n",
        rows.len()
    );
    let io = io_err(path);
    let mut body = header;
    for r in rows {
        body.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {}\n",
            r.mean[0], r.mean[1], r.mean[2], r.opacity, r.scale[0], r.scale[1], r.scale[2],
            r.rotation[0], r.rotation[1], r.rotation[2], r.rotation[3], r.class, r.class_logit
        ));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io)
}

/// Occupied voxel centres with labels, one `x y z label` line each.
pub fn write_xyz(path: &Path, points: &[([f64; 3], u8)]) -> Result<()> {
    let mut s = String::new();
    for (p, l) in points {
        s.push_str(&format!("{:.3} {:.3} {:.3} {l}\n", p[0], p[1], p[2]));
    }
    fs::write(path, s).map_err(io_err(path))
}
