//! Per-superpixel node features and histogram similarity.
//!
//! Node features use only strictly positive channel values ("adjusted"
//! statistics). The joint RGB histogram used for edge weights counts every
//! pixel, zeros included.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::slic::SuperpixelRegion;

/// Number of node features: mean, std and active fraction for R, G, B.
pub const FEATURE_DIM: usize = 9;
pub const DEFAULT_BINS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFeatures {
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
    pub alpha: [f64; 3],
}

impl NodeFeatures {
    /// Flattened as `[mu_r, mu_g, mu_b, sigma_r, sigma_g, sigma_b, alpha_r, alpha_g, alpha_b]`.
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        out[..3].copy_from_slice(&self.mu);
        out[3..6].copy_from_slice(&self.sigma);
        out[6..].copy_from_slice(&self.alpha);
        out
    }
}

fn check_bounds(region: &SuperpixelRegion, img: &RasterImage) -> Result<()> {
    if let Some(&(row, col)) = region
        .pixel_indices
        .iter()
        .find(|&&(r, c)| r >= img.height() || c >= img.width())
    {
        return Err(Error::OutOfBounds {
            row,
            col,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}

pub fn node_features(region: &SuperpixelRegion, img: &RasterImage) -> Result<NodeFeatures> {
    check_bounds(region, img)?;
    let area = region.pixel_indices.len();
    if area == 0 {
        return Err(Error::Invariant(format!("region {} is empty", region.id)));
    }
    let mut count = [0usize; 3];
    let mut sum = [0.0f64; 3];
    for &(r, c) in &region.pixel_indices {
        let px = img.pixel(r, c);
        for ch in 0..3 {
            if px[ch] > 0 {
                count[ch] += 1;
                sum[ch] += px[ch] as f64;
            }
        }
    }
    let mean: [f64; 3] = std::array::from_fn(|ch| {
        if count[ch] == 0 {
            0.0
        } else {
            sum[ch] / count[ch] as f64
        }
    });
    // Second pass for the variance; single-pass sums lose precision on flat regions.
    let mut sq = [0.0f64; 3];
    for &(r, c) in &region.pixel_indices {
        let px = img.pixel(r, c);
        for ch in 0..3 {
            if px[ch] > 0 {
                sq[ch] += (px[ch] as f64 - mean[ch]).powi(2);
            }
        }
    }
    Ok(NodeFeatures {
        mu: mean.map(|m| m / 255.0),
        sigma: std::array::from_fn(|ch| {
            if count[ch] == 0 {
                0.0
            } else {
                (sq[ch] / count[ch] as f64).sqrt() / 255.0
            }
        }),
        alpha: count.map(|n| n as f64 / area as f64),
    })
}

/// A joint `bins^3` RGB histogram, bin index `(r * bins + g) * bins + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    bins_per_channel: usize,
    counts: Vec<f64>,
    normalized: bool,
}

impl JointHistogram {
    pub fn from_counts(bins_per_channel: usize, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != bins_per_channel.pow(3) {
            return Err(Error::Shape(format!(
                "{} counts for {bins_per_channel} bins per channel",
                counts.len()
            )));
        }
        if counts.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::Invariant("histogram counts must be finite and non-negative".into()));
        }
        Ok(Self {
            bins_per_channel,
            counts,
            normalized: false,
        })
    }

    /// Scales counts to sum to one; an all-zero histogram stays all zero.
    pub fn normalize(mut self) -> Self {
        let total: f64 = self.counts.iter().sum();
        if total > 0.0 {
            self.counts.iter_mut().for_each(|c| *c /= total);
        }
        self.normalized = true;
        self
    }

    pub fn bins_per_channel(&self) -> usize {
        self.bins_per_channel
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn bin_of(&self, rgb: [u8; 3]) -> usize {
        let b = self.bins_per_channel;
        let q = |v: u8| v as usize * b / 256;
        (q(rgb[0]) * b + q(rgb[1])) * b + q(rgb[2])
    }
}

pub fn joint_histogram(
    region: &SuperpixelRegion,
    img: &RasterImage,
    bins: usize,
) -> Result<JointHistogram> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 bins, got {bins}")));
    }
    check_bounds(region, img)?;
    let mut hist = JointHistogram::from_counts(bins, vec![0.0; bins.pow(3)])?;
    for &(r, c) in &region.pixel_indices {
        let idx = hist.bin_of(img.pixel(r, c));
        hist.counts[idx] += 1.0;
    }
    Ok(hist.normalize())
}

/// Bhattacharyya coefficient `sum_b sqrt(h1_b * h2_b)`.
pub fn bhattacharyya(h1: &JointHistogram, h2: &JointHistogram) -> Result<f64> {
    if h1.bins_per_channel != h2.bins_per_channel {
        return Err(Error::BinMismatch(h1.bins_per_channel, h2.bins_per_channel));
    }
    let bc: f64 = h1
        .counts
        .iter()
        .zip(&h2.counts)
        .map(|(a, b)| (a * b).sqrt())
        .sum();
    // Rounding can push identical histograms a hair past one.
    Ok(bc.clamp(0.0, 1.0))
}

/// Pairwise `W_ij = 1 - BC(H_i, H_j)` with a zero diagonal.
pub fn similarity_matrix(hists: &[JointHistogram]) -> Result<Array2<f64>> {
    let n = hists.len();
    if let Some(first) = hists.first() {
        if let Some(bad) = hists
            .iter()
            .find(|h| h.bins_per_channel != first.bins_per_channel)
        {
            return Err(Error::BinMismatch(first.bins_per_channel, bad.bins_per_channel));
        }
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| bhattacharyya(&hists[i], &hists[j]).map(|bc| 1.0 - bc))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut w = Array2::zeros((n, n));
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
    }
    Ok(w)
}
