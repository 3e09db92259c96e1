//! Field images, stress masks and the CIELAB conversion SLIC runs on.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, RgbImage};

use crate::error::{Error, Result};

/// Smallest accepted side length for a field image.
pub const MIN_SIDE: usize = 16;

/// An 8-bit RGB image stored row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::Shape(format!(
                "image is {width}x{height}, minimum side is {MIN_SIDE}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "expected {} bytes for {width}x{height} RGB, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for row in 0..height {
            for col in 0..width {
                data.extend_from_slice(&f(row, col));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb_image()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Per-pixel stress annotation, 1 where nutrient deficiency is present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "expected {} mask values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Invariant(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value as u8;
    }

    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Writes the mask as an 8-bit grayscale PNG with values 0 and 255.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf: GrayImage = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| v * 255).collect(),
        )
        .expect("buffer length checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// CIE 1976 L*a*b* values, one triple per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl LabImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let reader = image::ImageReader::open(path)?.with_guessed_format()?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Tiff) => Ok(reader.decode()?),
        Some(other) => Err(Error::Decode(format!("unsupported format {other:?}"))),
        None => Err(Error::Decode(format!(
            "unrecognized image format: {}",
            path.display()
        ))),
    }
}

/// Loads an 8-bit RGB PNG or TIFF.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let img = open(path.as_ref())?;
    match img {
        DynamicImage::ImageRgb8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            RasterImage::new(w, h, buf.into_raw())
        }
        other => Err(Error::Shape(format!(
            "expected 8-bit RGB, found {:?} ({} channels)",
            other.color(),
            other.color().channel_count()
        ))),
    }
}

/// Loads a single-channel mask; any nonzero pixel becomes 1.
pub fn load_mask(
    path: impl AsRef<Path>,
    expected_w: usize,
    expected_h: usize,
) -> Result<BinaryMask> {
    let img = open(path.as_ref())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (w, h) != (expected_w, expected_h) {
        return Err(Error::DimensionMismatch {
            expected: (expected_w, expected_h),
            found: (w, h),
        });
    }
    let data: Vec<u8> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| (v != 0) as u8).collect(),
        DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().into_iter().map(|v| (v != 0) as u8).collect()
        }
        other => {
            return Err(Error::Shape(format!(
                "mask must be single-channel, found {:?}",
                other.color()
            )))
        }
    };
    BinaryMask::new(w, h, data)
}

// D65 reference white, Y normalized to 1.
const WHITE_X: f64 = 0.95047;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.08883;

#[inline]
fn srgb_to_linear(v: u8) -> f64 {
    let c = v as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

#[inline]
fn linear_rgb_to_lab(r: f64, g: f64, b: f64) -> [f64; 3] {
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let fx = lab_f(x / WHITE_X);
    let fy = lab_f(y / WHITE_Y);
    let fz = lab_f(z / WHITE_Z);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Converts one sRGB pixel to L*a*b* under D65.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    linear_rgb_to_lab(
        srgb_to_linear(rgb[0]),
        srgb_to_linear(rgb[1]),
        srgb_to_linear(rgb[2]),
    )
}

/// Per-channel 3x3 median with replicated borders. Removes isolated
/// impulse values such as dropped-out channels.
pub fn median3(img: &RasterImage) -> RasterImage {
    let (w, h) = (img.width, img.height);
    let mut data = vec![0u8; img.data.len()];
    let mut window = [0u8; 9];
    for row in 0..h {
        for col in 0..w {
            for ch in 0..3 {
                let mut i = 0;
                for r in [row.saturating_sub(1), row, (row + 1).min(h - 1)] {
                    for c in [col.saturating_sub(1), col, (col + 1).min(w - 1)] {
                        window[i] = img.data[(r * w + c) * 3 + ch];
                        i += 1;
                    }
                }
                window.sort_unstable();
                data[(row * w + col) * 3 + ch] = window[4];
            }
        }
    }
    RasterImage {
        width: w,
        height: h,
        data,
    }
}

pub fn rgb_to_lab(img: &RasterImage) -> LabImage {
    let lut: Vec<f64> = (0..=255u8).map(srgb_to_linear).collect();
    let data = img
        .pixels()
        .map(|[r, g, b]| linear_rgb_to_lab(lut[r as usize], lut[g as usize], lut[b as usize]))
        .collect();
    LabImage {
        width: img.width,
        height: img.height,
        data,
    }
}
