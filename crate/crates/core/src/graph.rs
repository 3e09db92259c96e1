//! Fully connected superpixel graphs with fixed node count.
//!
//! Real regions occupy the first `n_real` rows in region-id order. The
//! remaining rows are neutral padding: zero features, zero edges, zero
//! targets and `valid_mask = false`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    joint_histogram, node_features, similarity_matrix, JointHistogram, FEATURE_DIM,
};
use crate::features::DEFAULT_BINS;
use crate::raster::{BinaryMask, RasterImage};
use crate::slic::{extract_regions, segment_image, SlicParams, SuperpixelMap};

pub const DEFAULT_NODES: usize = 400;
pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            other => Err(Error::InvalidConfig(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGraph {
    pub n: usize,
    pub n_real: usize,
    /// `n x 9` node features.
    pub features: Array2<f64>,
    /// `n x n` symmetric edge weights with zero diagonal.
    pub adjacency: Array2<f64>,
    pub targets: Vec<f64>,
    pub valid_mask: Vec<bool>,
    /// `(x, y)` centroid of each node's region; neutral nodes sit at the origin.
    pub centroids: Vec<(f64, f64)>,
    /// `None` until targets are assigned.
    pub task: Option<Task>,
    pub source_id: String,
}

impl FieldGraph {
    pub fn set_targets(&mut self, task: Task, targets: Vec<f64>) -> Result<()> {
        if targets.len() != self.n {
            return Err(Error::LengthMismatch(targets.len(), self.n));
        }
        self.task = Some(task);
        self.targets = targets;
        self.validate()
    }

    /// Checks every structural invariant of the graph.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        let bad = |msg: String| Err(Error::Invariant(msg));
        if self.n_real > n {
            return bad(format!("n_real {} exceeds n {n}", self.n_real));
        }
        if self.features.dim() != (n, FEATURE_DIM)
            || self.adjacency.dim() != (n, n)
            || self.targets.len() != n
            || self.valid_mask.len() != n
            || self.centroids.len() != n
        {
            return bad("field lengths disagree with n".into());
        }
        if self.valid_mask.iter().filter(|&&v| v).count() != self.n_real {
            return bad("valid_mask count differs from n_real".into());
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return bad("non-finite feature".into());
        }
        for i in 0..n {
            if self.adjacency[[i, i]] != 0.0 {
                return bad(format!("nonzero diagonal at {i}"));
            }
            for j in (i + 1)..n {
                let (a, b) = (self.adjacency[[i, j]], self.adjacency[[j, i]]);
                if a != b {
                    return bad(format!("adjacency not symmetric at ({i}, {j})"));
                }
                if !(0.0..=1.0).contains(&a) {
                    return bad(format!("edge weight {a} outside [0, 1] at ({i}, {j})"));
                }
            }
            if !self.valid_mask[i] {
                let live = self.features.row(i).iter().any(|&v| v != 0.0)
                    || self.adjacency.row(i).iter().any(|&v| v != 0.0);
                if live || self.targets[i] != 0.0 {
                    return bad(format!("neutral node {i} is not inert"));
                }
            }
        }
        for &t in &self.targets {
            let ok = match self.task {
                Some(Task::Classification) => t == 0.0 || t == 1.0,
                Some(Task::Regression) => (0.0..=1.0).contains(&t),
                None => t == 0.0,
            };
            if !ok {
                return bad(format!("target {t} invalid for task {:?}", self.task));
            }
        }
        Ok(())
    }
}

/// Builds the padded, fully connected graph of one field; targets start at zero.
pub fn build_field_graph(
    img: &RasterImage,
    sp: &SuperpixelMap,
    n: usize,
    bins: usize,
    source_id: impl Into<String>,
) -> Result<FieldGraph> {
    if (sp.width(), sp.height()) != (img.width(), img.height()) {
        return Err(Error::DimensionMismatch {
            expected: (img.width(), img.height()),
            found: (sp.width(), sp.height()),
        });
    }
    let n_real = sp.n_regions();
    if n_real > n {
        return Err(Error::TooManyRegions {
            regions: n_real,
            nodes: n,
        });
    }
    let regions = extract_regions(sp);
    let per_region: Vec<([f64; FEATURE_DIM], JointHistogram)> = regions
        .par_iter()
        .map(|r| Ok((node_features(r, img)?.to_array(), joint_histogram(r, img, bins)?)))
        .collect::<Result<_>>()?;
    let hists: Vec<JointHistogram> = per_region.iter().map(|(_, h)| h.clone()).collect();
    let w = similarity_matrix(&hists)?;

    let mut features = Array2::zeros((n, FEATURE_DIM));
    let mut adjacency = Array2::zeros((n, n));
    for (i, (f, _)) in per_region.iter().enumerate() {
        features.row_mut(i).assign(&ndarray::ArrayView1::from(&f[..]));
    }
    adjacency
        .slice_mut(ndarray::s![..n_real, ..n_real])
        .assign(&w);
    let mut centroids = vec![(0.0, 0.0); n];
    for (c, r) in centroids.iter_mut().zip(&regions) {
        *c = r.centroid;
    }
    let graph = FieldGraph {
        n,
        n_real,
        features,
        adjacency,
        targets: vec![0.0; n],
        valid_mask: (0..n).map(|i| i < n_real).collect(),
        centroids,
        task: None,
        source_id: source_id.into(),
    };
    graph.validate()?;
    Ok(graph)
}

fn positive_counts(sp: &SuperpixelMap, mask: &BinaryMask) -> Result<(Vec<usize>, Vec<usize>)> {
    if (mask.width(), mask.height()) != (sp.width(), sp.height()) {
        return Err(Error::DimensionMismatch {
            expected: (sp.width(), sp.height()),
            found: (mask.width(), mask.height()),
        });
    }
    let mut positive = vec![0usize; sp.n_regions()];
    for (&l, &m) in sp.labels().iter().zip(mask.data()) {
        positive[l as usize] += m as usize;
    }
    Ok((positive, sp.areas()))
}

fn padded(values: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    if values.len() > n {
        return Err(Error::TooManyRegions {
            regions: values.len(),
            nodes: n,
        });
    }
    let mut out = values;
    out.resize(n, 0.0);
    Ok(out)
}

/// `1` for every region containing at least one positive mask pixel.
pub fn make_classification_targets(
    sp: &SuperpixelMap,
    mask: &BinaryMask,
    n: usize,
) -> Result<Vec<f64>> {
    let (positive, _) = positive_counts(sp, mask)?;
    padded(
        positive.iter().map(|&p| if p > 0 { 1.0 } else { 0.0 }).collect(),
        n,
    )
}

/// Fraction of positive mask pixels in each region.
pub fn make_regression_targets(
    sp: &SuperpixelMap,
    mask: &BinaryMask,
    n: usize,
) -> Result<Vec<f64>> {
    let (positive, areas) = positive_counts(sp, mask)?;
    padded(
        positive
            .iter()
            .zip(&areas)
            .map(|(&p, &a)| p as f64 / a as f64)
            .collect(),
        n,
    )
}

pub fn make_targets(
    task: Task,
    sp: &SuperpixelMap,
    mask: &BinaryMask,
    n: usize,
) -> Result<Vec<f64>> {
    match task {
        Task::Classification => make_classification_targets(sp, mask, n),
        Task::Regression => make_regression_targets(sp, mask, n),
    }
}

/// Settings for turning one field into a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphParams {
    /// Node count; also the SLIC region target.
    pub nodes: usize,
    pub compactness: f64,
    pub max_iter: usize,
    pub bins: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        let slic = SlicParams::default();
        Self {
            nodes: DEFAULT_NODES,
            compactness: slic.compactness,
            max_iter: slic.max_iter,
            bins: DEFAULT_BINS,
        }
    }
}

/// Segments a field, builds its graph and attaches targets from `mask`.
pub fn field_graph(
    img: &RasterImage,
    mask: &BinaryMask,
    params: &GraphParams,
    task: Task,
    source_id: impl Into<String>,
) -> Result<(FieldGraph, SuperpixelMap)> {
    if (mask.width(), mask.height()) != (img.width(), img.height()) {
        return Err(Error::DimensionMismatch {
            expected: (img.width(), img.height()),
            found: (mask.width(), mask.height()),
        });
    }
    let slic = SlicParams {
        k: params.nodes,
        compactness: params.compactness,
        max_iter: params.max_iter,
    };
    let sp = segment_image(img, &slic)?;
    let mut g = build_field_graph(img, &sp, params.nodes, params.bins, source_id)?;
    g.set_targets(task, make_targets(task, &sp, mask, params.nodes)?)?;
    Ok((g, sp))
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    schema_version: u32,
    n: usize,
    n_real: usize,
    task: Option<Task>,
    source_id: String,
    features: Vec<Vec<f32>>,
    adjacency: Vec<Vec<f32>>,
    targets: Vec<f32>,
    valid_mask: Vec<u8>,
    centroids: Vec<[f32; 2]>,
}

fn rows_f32(m: &Array2<f64>) -> Vec<Vec<f32>> {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v as f32).collect())
        .collect()
}

fn matrix_from(rows: &[Vec<f32>], shape: (usize, usize), what: &str) -> Result<Array2<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Format(format!("{what} must be {}x{}", shape.0, shape.1)));
    }
    Ok(Array2::from_shape_fn(shape, |(i, j)| rows[i][j] as f64))
}

pub fn graph_to_json(g: &FieldGraph) -> Result<String> {
    let file = GraphFile {
        schema_version: GRAPH_SCHEMA_VERSION,
        n: g.n,
        n_real: g.n_real,
        task: g.task,
        source_id: g.source_id.clone(),
        features: rows_f32(&g.features),
        adjacency: rows_f32(&g.adjacency),
        targets: g.targets.iter().map(|&v| v as f32).collect(),
        valid_mask: g.valid_mask.iter().map(|&v| v as u8).collect(),
        centroids: g
            .centroids
            .iter()
            .map(|&(x, y)| [x as f32, y as f32])
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn graph_from_json(text: &str) -> Result<FieldGraph> {
    let file: GraphFile = serde_json::from_str(text)?;
    if file.schema_version != GRAPH_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported graph schema_version {}",
            file.schema_version
        )));
    }
    let n = file.n;
    if file.targets.len() != n || file.valid_mask.len() != n || file.centroids.len() != n {
        return Err(Error::Format("per-node arrays must have length n".into()));
    }
    if file.valid_mask.iter().any(|&v| v > 1) {
        return Err(Error::Format("valid_mask entries must be 0 or 1".into()));
    }
    let graph = FieldGraph {
        n,
        n_real: file.n_real,
        features: matrix_from(&file.features, (n, FEATURE_DIM), "features")?,
        adjacency: matrix_from(&file.adjacency, (n, n), "adjacency")?,
        targets: file.targets.iter().map(|&v| v as f64).collect(),
        valid_mask: file.valid_mask.iter().map(|&v| v == 1).collect(),
        centroids: file
            .centroids
            .iter()
            .map(|c| (c[0] as f64, c[1] as f64))
            .collect(),
        task: file.task,
        source_id: file.source_id,
    };
    graph.validate()?;
    Ok(graph)
}

pub fn save_graph(g: &FieldGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, graph_to_json(g)?)?;
    Ok(())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<FieldGraph> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    graph_from_json(&fs::read_to_string(path)?)
}
