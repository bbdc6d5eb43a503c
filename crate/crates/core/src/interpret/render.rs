//! Heatmap images: binary PPM (P6) and SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AttentionHeatmap, Target};
use crate::encoders::{VideoClip, CHANNELS};
use crate::error::{Error, Result};

/// Pixel edge of one cell when a heatmap is drawn without a frame.
pub const CELL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Svg,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => Ok(ImageFormat::Ppm),
            Some("svg") => Ok(ImageFormat::Svg),
            _ => Err(Error::Config(format!(
                "{}: expected a .ppm or .svg path",
                path.display()
            ))),
        }
    }
}

/// Nearest-neighbour resize of a `rows × cols` grid to `h × w`.
pub fn upsample_nearest(grid: &[f64], rows: usize, cols: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let r = y * rows / h;
        for x in 0..w {
            out.push(grid[r * cols + x * cols / w]);
        }
    }
    out
}

fn tint(s: f64) -> [f64; 3] {
    [255.0 * s.clamp(0.0, 1.0), 0.0, 0.0]
}

/// RGB bytes of the red-tinted heatmap at `h × w`, blended at 50% over
/// `overlay` (`h·w·3` bytes) when given.
pub fn heatmap_rgb(
    grid: &[f64],
    rows: usize,
    cols: usize,
    h: usize,
    w: usize,
    overlay: Option<&[u8]>,
) -> Result<Vec<u8>> {
    if grid.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::shape(
            "heatmap",
            format!("{} scores for a {rows}x{cols} grid", grid.len()),
        ));
    }
    if let Some(o) = overlay {
        if o.len() != h * w * CHANNELS {
            return Err(Error::shape(
                "overlay",
                format!("{} bytes for {h}x{w}x3", o.len()),
            ));
        }
    }
    let up = upsample_nearest(grid, rows, cols, h, w);
    let mut out = Vec::with_capacity(h * w * CHANNELS);
    for (i, &s) in up.iter().enumerate() {
        let t = tint(s);
        for c in 0..CHANNELS {
            let v = match overlay {
                Some(o) => 0.5 * o[i * CHANNELS + c] as f64 + 0.5 * t[c],
                None => t[c],
            };
            out.push(v.round() as u8);
        }
    }
    Ok(out)
}

pub fn to_ppm(w: usize, h: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// One `<rect>` per grid cell, `cell` pixels square.
pub fn to_svg(grid: &[f64], rows: usize, cols: usize, cell: usize) -> String {
    let (w, h) = (cols * cell, rows * cell);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    for r in 0..rows {
        for c in 0..cols {
            let [red, ..] = tint(grid[r * cols + c]);
            let _ = writeln!(
                s,
                "  <rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({},0,0)\"/>",
                c * cell,
                r * cell,
                red.round() as u8
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes frame `frame` of `heatmap` to `path`; the format follows the
/// extension. Video heatmaps are drawn at frame resolution, over `overlay`
/// when given.
pub fn render_heatmap(
    heatmap: &AttentionHeatmap,
    frame: usize,
    overlay: Option<&VideoClip>,
    path: &Path,
) -> Result<()> {
    let [frames, rows, cols] = heatmap.shape;
    if frame >= frames {
        return Err(Error::Range(format!("frame {frame} of {frames}")));
    }
    let grid = heatmap.frame(frame);
    let bytes = match ImageFormat::from_path(path)? {
        ImageFormat::Svg => to_svg(grid, rows, cols, CELL).into_bytes(),
        ImageFormat::Ppm => {
            let (h, w, base) = match (heatmap.target, overlay) {
                (Target::VideoPatches, Some(clip)) => {
                    (clip.height(), clip.width(), Some(clip.frame(frame)))
                }
                _ => (rows * CELL, cols * CELL, None),
            };
            to_ppm(w, h, &heatmap_rgb(grid, rows, cols, h, w, base)?)
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
