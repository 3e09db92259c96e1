//! Synthetic field images with elliptical stress patches and exact masks.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RasterImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of stress patches per field.
    pub n_blobs: (usize, usize),
    /// Inclusive range of ellipse semi-axes, in pixels.
    pub blob_radius: (f64, f64),
    pub base_color: [f64; 3],
    pub stress_color: [f64; 3],
    /// Per-channel standard deviation of pixel noise.
    pub color_jitter: f64,
    /// Peak brightness swing of the crop-row texture.
    pub row_texture: f64,
    pub row_period: f64,
    /// Probability that a single channel value is forced to 0.
    pub zero_dropout: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            n_blobs: (1, 4),
            blob_radius: (40.0, 100.0),
            base_color: [64.0, 118.0, 42.0],
            stress_color: [215.0, 190.0, 90.0],
            color_jitter: 10.0,
            row_texture: 8.0,
            row_period: 12.0,
            zero_dropout: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.width < 64 || self.height < 64 {
            return bad(format!("field must be at least 64x64, got {}x{}", self.width, self.height));
        }
        if self.n_blobs.0 > self.n_blobs.1 {
            return bad(format!("blob count range {:?} is empty", self.n_blobs));
        }
        let (r0, r1) = self.blob_radius;
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
            return bad(format!("blob radius range {:?} is invalid", self.blob_radius));
        }
        if !(0.0..=1.0).contains(&self.zero_dropout) {
            return bad(format!("zero_dropout {} outside [0, 1]", self.zero_dropout));
        }
        if !(self.color_jitter >= 0.0) || !(self.row_texture >= 0.0) || !(self.row_period > 0.0) {
            return bad("jitter and texture must be non-negative, period positive".into());
        }
        let colors = self.base_color.iter().chain(&self.stress_color);
        if colors.clone().any(|c| !(0.0..=255.0).contains(c)) {
            return bad("colors must lie in [0, 255]".into());
        }
        // Stress must stay distinguishable from background through the noise.
        let separation = (0..3)
            .map(|c| (self.stress_color[c] - self.base_color[c]).abs())
            .fold(0.0, f64::max);
        if separation < 3.0 * self.color_jitter {
            return bad(format!(
                "stress/base separation {separation} below 3x jitter {}",
                self.color_jitter
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Ellipse {
    /// Whether the center of pixel `(row, col)` lies inside.
    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        let (dx, dy) = (col as f64 + 0.5 - self.cx, row as f64 + 0.5 - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Draws the stress patches of one field.
pub fn sample_blobs(cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<Ellipse> {
    let n = rng.random_range(cfg.n_blobs.0..=cfg.n_blobs.1);
    (0..n)
        .map(|_| Ellipse {
            cx: rng.random_range(0.0..cfg.width as f64),
            cy: rng.random_range(0.0..cfg.height as f64),
            a: rng.random_range(cfg.blob_radius.0..=cfg.blob_radius.1),
            b: rng.random_range(cfg.blob_radius.0..=cfg.blob_radius.1),
            angle: rng.random_range(0.0..std::f64::consts::PI),
        })
        .collect()
}

pub fn rasterize(blobs: &[Ellipse], width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(width, height);
    for row in 0..height {
        for col in 0..width {
            if blobs.iter().any(|e| e.contains(row, col)) {
                mask.set(row, col, true);
            }
        }
    }
    mask
}

/// Renders one field and its stress mask; fully determined by `seed`.
pub fn generate_field(cfg: &SynthConfig, seed: u64) -> Result<(RasterImage, BinaryMask)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = sample_blobs(cfg, &mut rng);
    let mask = rasterize(&blobs, cfg.width, cfg.height);
    let noise = Normal::new(0.0, cfg.color_jitter)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let img = RasterImage::from_fn(cfg.width, cfg.height, |row, col| {
        let stressed = mask.get(row, col) == 1;
        let base = if stressed { cfg.stress_color } else { cfg.base_color };
        let texture = if stressed {
            0.0
        } else {
            cfg.row_texture * (std::f64::consts::TAU * col as f64 / cfg.row_period + phase).sin()
        };
        std::array::from_fn(|ch| {
            let v = base[ch] + texture + noise.sample(&mut rng);
            if rng.random::<f64>() < cfg.zero_dropout {
                0
            } else {
                v.round().clamp(0.0, 255.0) as u8
            }
        })
    })?;
    Ok((img, mask))
}

#[derive(Debug, Clone)]
pub struct SynthField {
    pub id: String,
    pub seed: u64,
    pub image: RasterImage,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Default)]
pub struct SynthDataset {
    pub train: Vec<SynthField>,
    pub val: Vec<SynthField>,
    pub test: Vec<SynthField>,
}

/// Split sizes: validation and test take the floor of their share, training the rest.
pub fn split_sizes(n: usize, split: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (tr, va, te) = split;
    let ok = |f: f64| (0.0..=1.0).contains(&f);
    if !(ok(tr) && ok(va) && ok(te)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!(
            "fractions {split:?} must lie in [0, 1] and sum to 1"
        )));
    }
    let n_val = (n as f64 * va + 1e-9).floor() as usize;
    let n_test = (n as f64 * te + 1e-9).floor() as usize;
    Ok((n - n_val - n_test, n_val, n_test))
}

pub fn field_id(index: usize) -> String {
    format!("field_{index:04}")
}

pub fn generate_dataset(
    cfg: &SynthConfig,
    n_fields: usize,
    split: (f64, f64, f64),
    seed: u64,
) -> Result<SynthDataset> {
    cfg.validate()?;
    let (n_train, n_val, _) = split_sizes(n_fields, split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n_fields).map(|_| rng.next_u64()).collect();
    let mut order: Vec<usize> = (0..n_fields).collect();
    order.shuffle(&mut rng);

    use rayon::prelude::*;
    let mut fields: Vec<Option<SynthField>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let (image, mask) = generate_field(cfg, s)?;
            Ok(Some(SynthField {
                id: field_id(i),
                seed: s,
                image,
                mask,
            }))
        })
        .collect::<Result<_>>()?;
    let mut take = |idx: &[usize]| -> Vec<SynthField> {
        idx.iter()
            .map(|&i| fields[i].take().expect("each field assigned once"))
            .collect()
    };
    Ok(SynthDataset {
        train: take(&order[..n_train]),
        val: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths relative to the manifest's directory.
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Default for Splits<T> {
    fn default() -> Self {
        Self {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        }
    }
}

impl<T> Splits<T> {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &T)> {
        self.train
            .iter()
            .map(|t| ("train", t))
            .chain(self.val.iter().map(|t| ("val", t)))
            .chain(self.test.iter().map(|t| ("test", t)))
    }

    pub fn get(&self, split: &str) -> Option<&[T]> {
        match split {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub splits: Splits<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `images/`, `masks/` and `manifest.json` under `out`.
pub fn write_dataset(ds: &SynthDataset, cfg: &SynthConfig, seed: u64, out: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("masks"))?;
    let write = |fields: &[SynthField]| -> Result<Vec<ManifestEntry>> {
        fields
            .iter()
            .map(|f| {
                let image = PathBuf::from("images").join(format!("{}.png", f.id));
                let mask = PathBuf::from("masks").join(format!("{}.png", f.id));
                f.image.save_png(out.join(&image))?;
                f.mask.save_png(out.join(&mask))?;
                Ok(ManifestEntry {
                    id: f.id.clone(),
                    image,
                    mask,
                })
            })
            .collect()
    };
    let manifest = DatasetManifest {
        seed,
        config: cfg.clone(),
        splits: Splits {
            train: write(&ds.train)?,
            val: write(&ds.val)?,
            test: write(&ds.test)?,
        },
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            width: 96,
            height: 80,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn no_blobs_no_stress() {
        let cfg = SynthConfig {
            n_blobs: (0, 0),
            ..small()
        };
        let (_, mask) = generate_field(&cfg, 3).unwrap();
        assert_eq!(mask.count_positive(), 0);
    }

    #[test]
    fn same_seed_same_field() {
        let a = generate_field(&small(), 42).unwrap();
        let b = generate_field(&small(), 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, generate_field(&small(), 43).unwrap().0);
    }

    #[test]
    fn mask_matches_rasterized_ellipses() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let blobs = sample_blobs(&cfg, &mut rng);
        let (_, mask) = generate_field(&cfg, 11).unwrap();
        assert_eq!(mask, rasterize(&blobs, cfg.width, cfg.height));
    }

    #[test]
    fn ellipse_area_close_to_analytic() {
        // A centered circle: pixel count within a perimeter's worth of pi r^2.
        let e = Ellipse { cx: 100.0, cy: 100.0, a: 40.0, b: 40.0, angle: 0.3 };
        let mask = rasterize(&[e], 200, 200);
        let analytic = std::f64::consts::PI * 1600.0;
        let perimeter = std::f64::consts::TAU * 40.0;
        assert!((mask.count_positive() as f64 - analytic).abs() <= perimeter);
    }

    #[test]
    fn stress_pixels_are_color_separated() {
        let cfg = SynthConfig {
            zero_dropout: 0.0,
            ..small()
        };
        let (img, mask) = generate_field(&cfg, 5).unwrap();
        let mut sums = [[0.0; 3]; 2];
        let mut counts = [0.0; 2];
        for r in 0..img.height() {
            for c in 0..img.width() {
                let k = mask.get(r, c) as usize;
                counts[k] += 1.0;
                for ch in 0..3 {
                    sums[k][ch] += img.pixel(r, c)[ch] as f64;
                }
            }
        }
        assert!(counts[1] > 0.0);
        let gap = (0..3)
            .map(|ch| (sums[1][ch] / counts[1] - sums[0][ch] / counts[0]).abs())
            .fold(0.0, f64::max);
        assert!(gap >= 3.0 * cfg.color_jitter);
    }

    #[test]
    fn dropout_produces_zeros() {
        let (img, _) = generate_field(&small(), 9).unwrap();
        let zeros = img.data().iter().filter(|&&v| v == 0).count() as f64;
        let frac = zeros / img.data().len() as f64;
        assert!((frac - 0.1).abs() < 0.02, "{frac}");
    }

    #[test]
    fn invalid_configs() {
        let too_close = SynthConfig {
            stress_color: [70.0, 120.0, 45.0],
            ..small()
        };
        assert!(matches!(generate_field(&too_close, 0), Err(Error::InvalidConfig(_))));
        let tiny = SynthConfig { width: 32, ..small() };
        assert!(matches!(tiny.validate(), Err(Error::InvalidConfig(_))));
        let p = SynthConfig { zero_dropout: 1.5, ..small() };
        assert!(matches!(p.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn split_rounding() {
        assert_eq!(split_sizes(20, (0.7, 0.15, 0.15)).unwrap(), (14, 3, 3));
        assert_eq!(split_sizes(317, (0.7, 0.15, 0.15)).unwrap(), (223, 47, 47));
        assert!(matches!(split_sizes(10, (0.5, 0.5, 0.5)), Err(Error::InvalidSplit(_))));
    }

    #[test]
    fn dataset_splits_are_disjoint_and_seeded() {
        let ds = generate_dataset(&small(), 20, (0.7, 0.15, 0.15), 7).unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (14, 3, 3));
        let mut ids: Vec<&str> = ds
            .train
            .iter()
            .chain(&ds.val)
            .chain(&ds.test)
            .map(|f| f.id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
        let again = generate_dataset(&small(), 20, (0.7, 0.15, 0.15), 7).unwrap();
        let names = |d: &SynthDataset| d.test.iter().map(|f| f.id.clone()).collect::<Vec<_>>();
        assert_eq!(names(&ds), names(&again));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let ds = generate_dataset(&cfg, 4, (0.5, 0.25, 0.25), 1).unwrap();
        let written = write_dataset(&ds, &cfg, 1, dir.path()).unwrap();
        let loaded = load_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(written, loaded);
        for (_, e) in loaded.splits.iter() {
            assert!(dir.path().join(&e.image).exists());
            assert!(dir.path().join(&e.mask).exists());
        }
    }
}
