//! SLIC superpixels: k-means over (L, a, b, x, y) with a compactness-weighted
//! distance and a 2S x 2S search window around each cluster center.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{median3, rgb_to_lab, LabImage, RasterImage};

pub const DEFAULT_REGIONS: usize = 400;
pub const DEFAULT_COMPACTNESS: f64 = 30.0;
pub const DEFAULT_MAX_ITER: usize = 10;

/// A partition of an image into contiguous-id regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    n_regions: usize,
}

impl SuperpixelMap {
    /// Validates that `labels` covers the image and uses every id in `0..n_regions`.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "expected {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        let n_regions = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut used = vec![false; n_regions];
        for &l in &labels {
            used[l as usize] = true;
        }
        if let Some(missing) = used.iter().position(|&u| !u) {
            return Err(Error::Invariant(format!(
                "label ids not contiguous: {missing} unused below {n_regions}"
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            n_regions,
        })
    }

    /// Renumbers arbitrary labels to `0..n` in raster order of first appearance.
    pub fn compacted(width: usize, height: usize, labels: &[u32]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let out: Vec<u32> = labels
            .iter()
            .map(|&l| {
                let next = remap.len() as u32;
                *remap.entry(l).or_insert(next)
            })
            .collect();
        Self {
            width,
            height,
            labels: out,
            n_regions: remap.len(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Pixel count of every region, indexed by id.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.n_regions];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }
}

/// One superpixel: its pixels, centroid and area.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelRegion {
    pub id: usize,
    /// `(row, col)` pairs in raster order.
    pub pixel_indices: Vec<(usize, usize)>,
    /// `(x, y)` = (mean column, mean row).
    pub centroid: (f64, f64),
    pub area: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub k: usize,
    pub compactness: f64,
    pub max_iter: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_REGIONS,
            compactness: DEFAULT_COMPACTNESS,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Result of the clustering stage, before connectivity enforcement.
#[derive(Debug, Clone)]
pub struct SlicTrace {
    pub map: SuperpixelMap,
    /// Sum of squared SLIC distances after each assignment step.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

fn validate(lab: &LabImage, k: usize, compactness: f64) -> Result<()> {
    let (w, h) = (lab.width(), lab.height());
    if k < 2 || k > w * h {
        return Err(Error::InvalidK {
            k,
            width: w,
            height: h,
        });
    }
    if !(compactness > 0.0 && compactness.is_finite()) {
        return Err(Error::InvalidCompactness(compactness));
    }
    Ok(())
}

fn gradient(lab: &LabImage, row: usize, col: usize) -> f64 {
    let (w, h) = (lab.width(), lab.height());
    let left = lab.at(row, col.saturating_sub(1));
    let right = lab.at(row, (col + 1).min(w - 1));
    let up = lab.at(row.saturating_sub(1), col);
    let down = lab.at((row + 1).min(h - 1), col);
    let sq = |a: [f64; 3], b: [f64; 3]| {
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    };
    sq(left, right) + sq(up, down)
}

/// Grid seeds, each nudged to the lowest-gradient pixel of its 3x3
/// neighborhood without leaving its own grid cell.
fn seed_centers(lab: &LabImage, k: usize) -> Vec<Center> {
    let (w, h) = (lab.width(), lab.height());
    let nx = ((k as f64 * w as f64 / h as f64).sqrt().ceil() as usize).clamp(1, w);
    let ny = (k / nx).clamp(1, h);
    let cell_w = w as f64 / nx as f64;
    let cell_h = h as f64 / ny as f64;

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let (r0, r1) = ((j as f64 * cell_h) as usize, ((j + 1) as f64 * cell_h) as usize);
        let row = ((j as f64 + 0.5) * cell_h) as usize;
        for i in 0..nx {
            let (c0, c1) = ((i as f64 * cell_w) as usize, ((i + 1) as f64 * cell_w) as usize);
            let col = ((i as f64 + 0.5) * cell_w) as usize;
            let (mut best_r, mut best_c) = (row, col);
            let mut best_g = gradient(lab, row, col);
            for r in row.saturating_sub(1)..=(row + 1) {
                for c in col.saturating_sub(1)..=(col + 1) {
                    if r < r0 || r >= r1.min(h) || c < c0 || c >= c1.min(w) {
                        continue;
                    }
                    let g = gradient(lab, r, c);
                    if g < best_g {
                        best_g = g;
                        best_r = r;
                        best_c = c;
                    }
                }
            }
            centers.push(Center {
                lab: lab.at(best_r, best_c),
                x: best_c as f64,
                y: best_r as f64,
            });
        }
    }
    centers
}

#[inline]
fn distance_sq(center: &Center, lab: [f64; 3], row: usize, col: usize, spatial_w: f64) -> f64 {
    let dl = center.lab[0] - lab[0];
    let da = center.lab[1] - lab[1];
    let db = center.lab[2] - lab[2];
    let dx = center.x - col as f64;
    let dy = center.y - row as f64;
    dl * dl + da * da + db * db + (dx * dx + dy * dy) * spatial_w
}

/// Runs the SLIC clustering and reports the residual after every assignment.
///
/// A pixel only leaves its current cluster for a strictly closer one (ties
/// go to the lower cluster id), so the residual never increases even when
/// a center drifts more than S away from some of its pixels.
pub fn slic_cluster(
    lab: &LabImage,
    k: usize,
    compactness: f64,
    max_iter: usize,
) -> Result<SlicTrace> {
    validate(lab, k, compactness)?;
    let (w, h) = (lab.width(), lab.height());
    let step = ((w * h) as f64 / k as f64).sqrt();
    let spatial_w = (compactness / step).powi(2);
    let half = step.ceil() as isize;

    let mut centers = seed_centers(lab, k);
    let mut labels = vec![u32::MAX; w * h];
    let mut dist = vec![f64::INFINITY; w * h];
    let mut residuals = Vec::with_capacity(max_iter);

    for _ in 0..max_iter.max(1) {
        let previous = labels.clone();
        for (p, d) in dist.iter_mut().enumerate() {
            *d = match labels[p] {
                u32::MAX => f64::INFINITY,
                l => distance_sq(&centers[l as usize], lab.data()[p], p / w, p % w, spatial_w),
            };
        }

        for (id, center) in centers.iter().enumerate() {
            let (cx, cy) = (center.x.round() as isize, center.y.round() as isize);
            let r0 = (cy - half).max(0) as usize;
            let r1 = ((cy + half) as usize).min(h - 1);
            let c0 = (cx - half).max(0) as usize;
            let c1 = ((cx + half) as usize).min(w - 1);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let p = row * w + col;
                    let d = distance_sq(center, lab.data()[p], row, col, spatial_w);
                    if d < dist[p] || (d == dist[p] && (id as u32) < labels[p]) {
                        dist[p] = d;
                        labels[p] = id as u32;
                    }
                }
            }
        }

        // Pixels no window reached on the first pass fall back to a global search.
        for p in 0..w * h {
            if labels[p] != u32::MAX {
                continue;
            }
            let (row, col) = (p / w, p % w);
            for (id, center) in centers.iter().enumerate() {
                let d = distance_sq(center, lab.data()[p], row, col, spatial_w);
                if d < dist[p] {
                    dist[p] = d;
                    labels[p] = id as u32;
                }
            }
        }

        residuals.push(dist.iter().sum());
        if labels == previous {
            break;
        }

        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            let v = lab.data()[p];
            s[0] += v[0];
            s[1] += v[1];
            s[2] += v[2];
            s[3] += (p % w) as f64;
            s[4] += (p / w) as f64;
            s[5] += 1.0;
        }
        for (center, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                let n = s[5];
                *center = Center {
                    lab: [s[0] / n, s[1] / n, s[2] / n],
                    x: s[3] / n,
                    y: s[4] / n,
                };
            }
        }
    }

    Ok(SlicTrace {
        map: SuperpixelMap::compacted(w, h, &labels),
        residuals,
    })
}

/// SLIC clustering without connectivity enforcement.
pub fn slic_segment(
    lab: &LabImage,
    k: usize,
    compactness: f64,
    max_iter: usize,
) -> Result<SuperpixelMap> {
    Ok(slic_cluster(lab, k, compactness, max_iter)?.map)
}

/// The standard orphan threshold: a quarter of the mean superpixel area.
pub fn default_min_area(width: usize, height: usize, k: usize) -> usize {
    (width * height) / k / 4
}

/// Full over-segmentation: clustering followed by connectivity enforcement.
pub fn superpixels(lab: &LabImage, params: &SlicParams) -> Result<SuperpixelMap> {
    let raw = slic_segment(lab, params.k, params.compactness, params.max_iter)?;
    let min_area = default_min_area(lab.width(), lab.height(), params.k);
    Ok(enforce_connectivity(&raw, min_area))
}

/// Segments an RGB field: 3x3 median denoise, CIELAB conversion, then
/// [`superpixels`]. The median only shapes the segmentation; features are
/// still computed from the original pixels.
pub fn segment_image(img: &RasterImage, params: &SlicParams) -> Result<SuperpixelMap> {
    superpixels(&rgb_to_lab(&median3(img)), params)
}

/// Makes every region 4-connected.
///
/// Each label keeps its largest connected component and every orphan piece is
/// merged into the largest adjacent region, so no label disappears and the
/// region count never grows. Orphans of at least `min_area` pixels would
/// normally become regions of their own; they are merged too and only logged.
pub fn enforce_connectivity(sp: &SuperpixelMap, min_area: usize) -> SuperpixelMap {
    let (w, h) = (sp.width, sp.height);
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        let label = sp.labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (row, col) = (p / w, p % w);
            let mut visit = |q: usize| {
                if comp[q] == usize::MAX && sp.labels[q] == label {
                    comp[q] = id;
                    queue.push_back(q);
                }
            };
            if col > 0 {
                visit(p - 1);
            }
            if col + 1 < w {
                visit(p + 1);
            }
            if row > 0 {
                visit(p - w);
            }
            if row + 1 < h {
                visit(p + w);
            }
        }
        comp_label.push(label);
        comp_size.push(size);
    }

    let n_comp = comp_label.len();
    let mut main_of_label: Vec<Option<usize>> = vec![None; sp.n_regions];
    for c in 0..n_comp {
        let slot = &mut main_of_label[comp_label[c] as usize];
        match slot {
            Some(m) if comp_size[*m] >= comp_size[c] => {}
            _ => *slot = Some(c),
        }
    }

    let mut root: Vec<Option<usize>> = vec![None; n_comp];
    for m in main_of_label.iter().flatten() {
        root[*m] = Some(*m);
    }
    let large_orphans = (0..n_comp)
        .filter(|&c| root[c].is_none() && comp_size[c] >= min_area)
        .count();
    if large_orphans > 0 {
        log::debug!("merging {large_orphans} orphan components of at least {min_area} px");
    }

    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n_comp];
    for p in 0..n {
        let (row, col) = (p / w, p % w);
        let a = comp[p];
        for q in [
            (col + 1 < w).then(|| p + 1),
            (row + 1 < h).then(|| p + w),
        ]
        .into_iter()
        .flatten()
        {
            let b = comp[q];
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }

    let mut area: Vec<usize> = comp_size.clone();
    loop {
        let mut progress = false;
        let mut pending = false;
        for c in 0..n_comp {
            if root[c].is_some() {
                continue;
            }
            let target = neighbors[c]
                .iter()
                .filter_map(|&nb| root[nb])
                .max_by(|&a, &b| area[a].cmp(&area[b]).then(b.cmp(&a)));
            match target {
                Some(t) => {
                    root[c] = Some(t);
                    area[t] += comp_size[c];
                    progress = true;
                }
                None => pending = true,
            }
        }
        if !pending {
            break;
        }
        assert!(progress, "component graph of an image is connected");
    }

    let merged: Vec<u32> = comp
        .iter()
        .map(|&c| root[c].expect("all components resolved") as u32)
        .collect();
    SuperpixelMap::compacted(w, h, &merged)
}

pub fn extract_regions(sp: &SuperpixelMap) -> Vec<SuperpixelRegion> {
    let mut regions: Vec<SuperpixelRegion> = sp
        .areas()
        .into_iter()
        .enumerate()
        .map(|(id, area)| SuperpixelRegion {
            id,
            pixel_indices: Vec::with_capacity(area),
            centroid: (0.0, 0.0),
            area,
        })
        .collect();
    for (p, &l) in sp.labels.iter().enumerate() {
        regions[l as usize]
            .pixel_indices
            .push((p / sp.width, p % sp.width));
    }
    for region in &mut regions {
        let (sx, sy) = region
            .pixel_indices
            .iter()
            .fold((0.0, 0.0), |(sx, sy), &(r, c)| (sx + c as f64, sy + r as f64));
        let n = region.area as f64;
        region.centroid = (sx / n, sy / n);
    }
    regions
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelSidecar {
    width: usize,
    height: usize,
    n_regions: usize,
}

fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// Writes labels as a 16-bit grayscale PNG plus a `{width, height, n_regions}`
/// JSON sidecar next to it.
pub fn save_superpixel_map(sp: &SuperpixelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if sp.n_regions > u16::MAX as usize {
        return Err(Error::Format(format!(
            "{} regions do not fit a 16-bit label image",
            sp.n_regions
        )));
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        sp.width as u32,
        sp.height as u32,
        sp.labels.iter().map(|&l| l as u16).collect(),
    )
    .expect("label length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    let sidecar = LabelSidecar {
        width: sp.width,
        height: sp.height,
        n_regions: sp.n_regions,
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_superpixel_map(path: impl AsRef<Path>) -> Result<SuperpixelMap> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let sidecar: LabelSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let img = image::open(path)?;
    let labels: Vec<u32> = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Format(format!(
                "label image must be single-channel, found {:?}",
                other.color()
            )))
        }
    };
    if labels.len() != sidecar.width * sidecar.height {
        return Err(Error::Format(format!(
            "label image has {} pixels, sidecar says {}x{}",
            labels.len(),
            sidecar.width,
            sidecar.height
        )));
    }
    let map = SuperpixelMap::new(sidecar.width, sidecar.height, labels)?;
    if map.n_regions != sidecar.n_regions {
        return Err(Error::Format(format!(
            "sidecar says {} regions, label image has {}",
            sidecar.n_regions, map.n_regions
        )));
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{rgb_to_lab, RasterImage};

    fn flood_component_count(sp: &SuperpixelMap) -> usize {
        let (w, h) = (sp.width(), sp.height());
        let mut seen = vec![false; w * h];
        let mut count = 0;
        for s in 0..w * h {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(p) = stack.pop() {
                let (r, c) = (p / w, p % w);
                let cand = [
                    (c > 0).then(|| p - 1),
                    (c + 1 < w).then(|| p + 1),
                    (r > 0).then(|| p - w),
                    (r + 1 < h).then(|| p + w),
                ];
                for q in cand.into_iter().flatten() {
                    if !seen[q] && sp.labels()[q] == sp.labels()[p] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        count
    }

    #[test]
    fn uniform_image_gives_grid_like_regions() {
        let img = RasterImage::from_fn(512, 512, |_, _| [90, 140, 60]).unwrap();
        let lab = rgb_to_lab(&img);
        let sp = superpixels(&lab, &SlicParams::default()).unwrap();
        assert_eq!(sp.n_regions(), 400);
        let step = (512.0f64 * 512.0 / 400.0).sqrt();
        for region in extract_regions(&sp) {
            let rows = region.pixel_indices.iter().map(|p| p.0);
            let cols = region.pixel_indices.iter().map(|p| p.1);
            let span_r = rows.clone().max().unwrap() - rows.min().unwrap() + 1;
            let span_c = cols.clone().max().unwrap() - cols.min().unwrap() + 1;
            assert!(span_r as f64 <= 4.0 * step && span_c as f64 <= 4.0 * step);
            assert!((region.area as f64 - 655.36).abs() < 0.5 * 655.36);
        }
    }

    #[test]
    fn one_region_per_pixel_at_the_limit() {
        let img = RasterImage::from_fn(16, 16, |r, c| [(r * 9) as u8, (c * 13) as u8, 40]).unwrap();
        let lab = rgb_to_lab(&img);
        let sp = slic_segment(&lab, 256, 30.0, 10).unwrap();
        assert_eq!(sp.n_regions(), 256);
    }

    #[test]
    fn two_tone_halves_match_exhaustive_assignment() {
        let img = RasterImage::from_fn(32, 32, |_, c| if c < 16 { [20, 20, 20] } else { [235, 235, 235] })
            .unwrap();
        let lab = rgb_to_lab(&img);
        let sp = superpixels(
            &lab,
            &SlicParams {
                k: 2,
                ..SlicParams::default()
            },
        )
        .unwrap();
        assert_eq!(sp.n_regions(), 2);

        // Exhaustive nearest-cluster assignment against the halves' own means.
        let half_center = |c0: usize| {
            let mut s = [0.0; 5];
            for r in 0..32 {
                for c in c0..c0 + 16 {
                    let v = lab.at(r, c);
                    s[0] += v[0];
                    s[1] += v[1];
                    s[2] += v[2];
                    s[3] += c as f64;
                    s[4] += r as f64;
                }
            }
            s.map(|v| v / 512.0)
        };
        let centers = [half_center(0), half_center(16)];
        let step = (1024.0f64 / 2.0).sqrt();
        let left_label = sp.label(0, 0);
        for r in 0..32 {
            for c in 0..32 {
                let v = lab.at(r, c);
                let d = |k: &[f64; 5]| {
                    (k[0] - v[0]).powi(2)
                        + (k[1] - v[1]).powi(2)
                        + (k[2] - v[2]).powi(2)
                        + ((k[3] - c as f64).powi(2) + (k[4] - r as f64).powi(2))
                            * (30.0 / step).powi(2)
                };
                let oracle = (d(&centers[1]) < d(&centers[0])) as usize;
                assert_eq!(oracle, (c >= 16) as usize);
                let ours = (sp.label(r, c) != left_label) as usize;
                if ours != oracle {
                    assert!((14..18).contains(&c), "pixel ({r}, {c}) outside boundary band");
                }
            }
        }
    }

    #[test]
    fn residual_is_non_increasing() {
        let img = RasterImage::from_fn(96, 80, |r, c| {
            [((r * 7 + c * 3) % 256) as u8, ((r * r + c) % 200) as u8, ((c * 5) % 256) as u8]
        })
        .unwrap();
        let trace = slic_cluster(&rgb_to_lab(&img), 30, 30.0, 10).unwrap();
        assert!(!trace.residuals.is_empty());
        for w in trace.residuals.windows(2) {
            assert!(w[1] <= w[0], "{:?}", trace.residuals);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let lab = rgb_to_lab(&RasterImage::from_fn(16, 16, |_, _| [0, 0, 0]).unwrap());
        assert!(matches!(slic_segment(&lab, 1, 30.0, 10), Err(Error::InvalidK { .. })));
        assert!(matches!(slic_segment(&lab, 257, 30.0, 10), Err(Error::InvalidK { .. })));
        assert!(matches!(
            slic_segment(&lab, 4, 0.0, 10),
            Err(Error::InvalidCompactness(_))
        ));
        assert!(matches!(
            slic_segment(&lab, 4, f64::NAN, 10),
            Err(Error::InvalidCompactness(_))
        ));
    }

    #[test]
    fn deterministic() {
        let img = RasterImage::from_fn(64, 64, |r, c| [(r * 4) as u8, (c * 4) as u8, ((r + c) * 2) as u8]).unwrap();
        let lab = rgb_to_lab(&img);
        let a = superpixels(&lab, &SlicParams { k: 20, ..Default::default() }).unwrap();
        let b = superpixels(&lab, &SlicParams { k: 20, ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn segment_image_ignores_channel_dropout() {
        // Scattered pixels lose their green channel; the median filter hides
        // these from clustering, so the result matches the clean image.
        let clean = |_: usize, c: usize| if c < 32 { [60, 120, 40] } else { [210, 190, 90] };
        let noisy = RasterImage::from_fn(64, 64, |r, c| {
            let mut px = clean(r, c);
            if r % 3 == 1 && c % 3 == 1 && (r + c) % 4 != 0 {
                px[1] = 0;
            }
            px
        })
        .unwrap();
        let params = SlicParams { k: 16, ..Default::default() };
        let sp = segment_image(&noisy, &params).unwrap();
        assert_eq!(sp, superpixels(&rgb_to_lab(&median3(&noisy)), &params).unwrap());
        assert_eq!(sp.n_regions(), 16);
        let clean = RasterImage::from_fn(64, 64, clean).unwrap();
        assert_eq!(median3(&noisy), clean);
        assert_eq!(sp, segment_image(&clean, &params).unwrap());
    }

    #[test]
    fn connected_map_is_unchanged_up_to_renumbering() {
        let labels: Vec<u32> = (0..16 * 16).map(|p| (((p % 16) / 8) * 2 + (p / 16) / 8) as u32).collect();
        let sp = SuperpixelMap::compacted(16, 16, &labels);
        let out = enforce_connectivity(&sp, 4);
        assert_eq!(out, sp);
        assert_eq!(flood_component_count(&out), 4);
    }

    #[test]
    fn island_is_absorbed_by_largest_neighbor() {
        // Label 0 fills the left, label 1 the right; a 3-pixel island of 0 sits inside 1.
        let (w, h) = (20, 10);
        let mut labels: Vec<u32> = (0..w * h).map(|p| ((p % w) >= 8) as u32).collect();
        for c in 14..17 {
            labels[5 * w + c] = 0;
        }
        let sp = SuperpixelMap::new(w, h, labels).unwrap();
        let out = enforce_connectivity(&sp, 10);
        assert_eq!(out.n_regions(), 2);
        for c in 14..17 {
            assert_eq!(out.label(5, c), out.label(0, w - 1));
        }
        assert_eq!(out.areas(), vec![80, 120]);
    }

    #[test]
    fn checkerboard_becomes_connected_partition() {
        let labels: Vec<u32> = (0..12 * 12).map(|p| (((p % 12) + (p / 12)) % 2) as u32).collect();
        let sp = SuperpixelMap::new(12, 12, labels).unwrap();
        let out = enforce_connectivity(&sp, 2);
        assert_eq!(out.labels().len(), 144);
        assert_eq!(flood_component_count(&out), out.n_regions());
        assert!(out.n_regions() <= sp.n_regions());
    }

    #[test]
    fn region_extraction() {
        let single = SuperpixelMap::new(4, 3, vec![0; 12]).unwrap();
        let regions = extract_regions(&single);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].centroid, (1.5, 1.0));

        let pair = SuperpixelMap::new(2, 1, vec![0, 1]).unwrap();
        let regions = extract_regions(&pair);
        assert_eq!(regions[0].centroid, (0.0, 0.0));
        assert_eq!(regions[1].centroid, (1.0, 0.0));
        assert_eq!((regions[0].area, regions[1].area), (1, 1));
    }

    #[test]
    fn non_contiguous_labels_rejected() {
        assert!(matches!(
            SuperpixelMap::new(2, 1, vec![0, 2]),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn label_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.png");
        let labels: Vec<u32> = (0..40 * 20).map(|p| (p % 700) as u32).collect();
        let sp = SuperpixelMap::new(40, 20, labels).unwrap();
        save_superpixel_map(&sp, &path).unwrap();
        assert!(path.with_extension("json").exists());
        assert_eq!(load_superpixel_map(&path).unwrap(), sp);
    }

    proptest::proptest! {
        #[test]
        fn enforcement_yields_connected_partition(
            cells in proptest::collection::vec(0u32..5, 24 * 18),
            min_area in 0usize..12,
        ) {
            let sp = SuperpixelMap::compacted(24, 18, &cells);
            let out = enforce_connectivity(&sp, min_area);
            proptest::prop_assert_eq!(flood_component_count(&out), out.n_regions());
            proptest::prop_assert!(out.n_regions() <= sp.n_regions());
            let total: usize = extract_regions(&out).iter().map(|r| r.area).sum();
            proptest::prop_assert_eq!(total, 24 * 18);
        }
    }
}
