//! Superpixel overlays: region boundaries plus a per-region stress tint.

use crate::error::{Error, Result};
use crate::graph::Task;
use crate::raster::RasterImage;
use crate::slic::SuperpixelMap;

pub const BOUNDARY_COLOR: [u8; 3] = [255, 255, 0];
pub const TINT_COLOR: [u8; 3] = [255, 0, 0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TintMode {
    /// Opaque tint where the value is at least the threshold, none elsewhere.
    Binary { threshold_milli: u32 },
    /// Tint alpha equals the value clamped to [0, 1].
    Continuous,
}

impl TintMode {
    pub fn binary(threshold: f64) -> Self {
        TintMode::Binary {
            threshold_milli: (threshold * 1000.0).round().clamp(0.0, u32::MAX as f64) as u32,
        }
    }

    pub fn for_task(task: Task, threshold: f64) -> Self {
        match task {
            Task::Classification => Self::binary(threshold),
            Task::Regression => TintMode::Continuous,
        }
    }

    fn alpha(self, v: f64) -> f64 {
        match self {
            TintMode::Binary { threshold_milli } => {
                let t = threshold_milli as f64 / 1000.0;
                if v > 0.0 && v >= t { 1.0 } else { 0.0 }
            }
            TintMode::Continuous => {
                if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }
            }
        }
    }
}

/// True where a 4-neighbour carries a different label.
pub fn boundary_mask(sp: &SuperpixelMap) -> Vec<bool> {
    let (w, h) = (sp.width(), sp.height());
    let labels = sp.labels();
    let mut out = vec![false; w * h];
    for r in 0..h {
        for c in 0..w {
            let l = labels[r * w + c];
            out[r * w + c] = (c + 1 < w && labels[r * w + c + 1] != l)
                || (c > 0 && labels[r * w + c - 1] != l)
                || (r + 1 < h && labels[(r + 1) * w + c] != l)
                || (r > 0 && labels[(r - 1) * w + c] != l);
        }
    }
    out
}

/// `values` is indexed by region id; padding past `n_regions` is ignored.
pub fn render_overlay(
    img: &RasterImage,
    sp: &SuperpixelMap,
    values: &[f64],
    mode: TintMode,
) -> Result<RasterImage> {
    if (img.width(), img.height()) != (sp.width(), sp.height()) {
        return Err(Error::DimensionMismatch {
            expected: (img.width(), img.height()),
            found: (sp.width(), sp.height()),
        });
    }
    if values.len() < sp.n_regions() {
        return Err(Error::LengthMismatch(sp.n_regions(), values.len()));
    }
    let alphas: Vec<f64> = values[..sp.n_regions()].iter().map(|&v| mode.alpha(v)).collect();
    let edges = boundary_mask(sp);
    let labels = sp.labels();
    let w = img.width();
    RasterImage::from_fn(w, img.height(), |r, c| {
        let i = r * w + c;
        if edges[i] {
            return BOUNDARY_COLOR;
        }
        let a = alphas[labels[i] as usize];
        let px = img.pixel(r, c);
        if a == 0.0 {
            return px;
        }
        std::array::from_fn(|ch| {
            (a * TINT_COLOR[ch] as f64 + (1.0 - a) * px[ch] as f64).round() as u8
        })
    })
}
