//! A dense graph convolutional network over fixed-size field graphs.
//!
//! Each layer computes `act(P · H · W + b)` where `P` is the renormalized
//! adjacency `D^-1/2 (A + I) D^-1/2`.

use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FieldGraph;

/// Layer widths of the field model: 9 inputs, five hidden layers of 32, one output.
pub const CANONICAL_WIDTHS: [usize; 7] = [9, 32, 32, 32, 32, 32, 1];
pub const CANONICAL_PARAM_COUNT: usize = 4577;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Elu => elu(v),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Elu => "elu",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

#[inline]
pub fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    /// `in x out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn in_width(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_width(&self) -> usize {
        self.weight.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub layers: Vec<GcnLayer>,
}

impl GcnModel {
    /// Zero-initialized model with ELU hidden layers and a sigmoid output.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::ShapeMismatch(format!("invalid widths {widths:?}")));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| GcnLayer {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
                activation: if i == last {
                    Activation::Sigmoid
                } else {
                    Activation::Elu
                },
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(GcnLayer::in_width).collect();
        w.extend(self.layers.last().map(GcnLayer::out_width));
        w
    }

    /// Which layers carry an L2 penalty on their weights: every layer but the output.
    pub fn l2_flags(&self) -> Vec<bool> {
        let n = self.layers.len();
        (0..n).map(|i| i + 1 < n).collect()
    }

    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(GcnLayer::param_count).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(GcnLayer::param_count).sum()
    }

    /// Converts to single precision for inference.
    pub fn to_f32(&self) -> InferenceModel {
        InferenceModel {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        l.weight.mapv(|v| v as f32),
                        l.bias.mapv(|v| v as f32),
                        l.activation,
                    )
                })
                .collect(),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_width() != pair[1].in_width() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_width(),
                    i + 1,
                    pair[1].in_width()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.out_width() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} bias has {} entries for {} outputs",
                    l.bias.len(),
                    l.out_width()
                )));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights and zero biases for the canonical architecture.
pub fn init_params(seed: u64) -> GcnModel {
    init_params_with(&CANONICAL_WIDTHS, seed).expect("canonical widths are valid")
}

pub fn init_params_with(widths: &[usize], seed: u64) -> Result<GcnModel> {
    let mut model = GcnModel::zeros(widths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut model.layers {
        let (fan_in, fan_out) = layer.weight.dim();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        layer
            .weight
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..=bound));
    }
    Ok(model)
}

/// The renormalized propagation matrix `D^-1/2 (A + I) D^-1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix(Array2<f64>);

impl PropagationMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

pub fn renormalize(adjacency: &Array2<f64>) -> Result<PropagationMatrix> {
    let (n, m) = adjacency.dim();
    if n != m {
        return Err(Error::ShapeMismatch(format!("adjacency is {n}x{m}")));
    }
    for i in 0..n {
        for j in 0..n {
            let v = adjacency[[i, j]];
            if v < 0.0 {
                return Err(Error::NegativeWeight(i, j));
            }
            if j > i && v != adjacency[[j, i]] {
                return Err(Error::AsymmetricInput(i, j));
            }
        }
    }
    let mut p = adjacency.clone();
    p.diag_mut().mapv_inplace(|v| v + 1.0);
    let degree: Array1<f64> = p.sum_axis(Axis(1));
    for ((i, j), v) in p.indexed_iter_mut() {
        *v /= (degree[i] * degree[j]).sqrt();
    }
    Ok(PropagationMatrix(p))
}

fn check_input(p: &PropagationMatrix, x: &ArrayView2<f64>, layer: &GcnLayer) -> Result<()> {
    if x.nrows() != p.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for {} nodes",
            x.nrows(),
            p.dim()
        )));
    }
    if x.ncols() != layer.in_width() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature columns for layer input width {}",
            x.ncols(),
            layer.in_width()
        )));
    }
    Ok(())
}

/// Intermediate values of one layer, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// `P · H_in`
    pub aggregated: Array2<f64>,
    /// Pre-activation `aggregated · W + b`.
    pub pre: Array2<f64>,
    pub out: Array2<f64>,
}

pub fn layer_forward_cached(
    p: &PropagationMatrix,
    x: ArrayView2<f64>,
    layer: &GcnLayer,
) -> Result<LayerCache> {
    check_input(p, &x, layer)?;
    let aggregated = p.0.dot(&x);
    let pre = aggregated.dot(&layer.weight) + &layer.bias;
    let act = layer.activation;
    let out = pre.mapv(|v| act.apply(v));
    Ok(LayerCache {
        aggregated,
        pre,
        out,
    })
}

pub fn layer_forward(
    p: &PropagationMatrix,
    x: ArrayView2<f64>,
    layer: &GcnLayer,
) -> Result<Array2<f64>> {
    Ok(layer_forward_cached(p, x, layer)?.out)
}

/// Runs every layer, returning the per-layer caches.
pub fn forward_cached(
    p: &PropagationMatrix,
    features: ArrayView2<f64>,
    model: &GcnModel,
) -> Result<Vec<LayerCache>> {
    model.check_shapes()?;
    let mut caches: Vec<LayerCache> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let cache = match caches.last() {
            None => layer_forward_cached(p, features, layer)?,
            Some(prev) => layer_forward_cached(p, prev.out.view(), layer)?,
        };
        caches.push(cache);
    }
    Ok(caches)
}

fn output_column(out: &Array2<f64>) -> Result<Vec<f64>> {
    if out.ncols() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "model output has {} columns, expected 1",
            out.ncols()
        )));
    }
    Ok(out.column(0).to_vec())
}

pub fn forward_with(
    p: &PropagationMatrix,
    features: ArrayView2<f64>,
    model: &GcnModel,
) -> Result<Vec<f64>> {
    let caches = forward_cached(p, features, model)?;
    output_column(&caches.last().expect("model has layers").out)
}

/// Per-node probabilities for one graph.
pub fn model_forward(g: &FieldGraph, model: &GcnModel) -> Result<Vec<f64>> {
    let p = renormalize(&g.adjacency)?;
    forward_with(&p, g.features.view(), model)
}

/// Single-precision copy of a model used for throughput-sensitive inference.
#[derive(Debug, Clone)]
pub struct InferenceModel {
    layers: Vec<(Array2<f32>, Array1<f32>, Activation)>,
}

impl InferenceModel {
    /// `p` must already be renormalized.
    pub fn forward(&self, p: &Array2<f32>, features: &Array2<f32>) -> Vec<f32> {
        let mut h = features.clone();
        for (w, b, act) in &self.layers {
            // Multiply by P on the narrower side.
            let mut z = if w.nrows() <= w.ncols() {
                p.dot(&h).dot(w)
            } else {
                p.dot(&h.dot(w))
            };
            z += b;
            match act {
                Activation::Elu => z.mapv_inplace(|v| if v > 0.0 { v } else { v.exp_m1() }),
                Activation::Sigmoid => z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
            }
            h = z;
        }
        h.column(0).to_vec()
    }

    pub fn forward_graph(&self, g: &FieldGraph) -> Result<Vec<f32>> {
        let p = renormalize(&g.adjacency)?.0.mapv(|v| v as f32);
        Ok(self.forward(&p, &g.features.mapv(|v| v as f32)))
    }
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weight: Vec<Vec<f32>>,
    bias: Vec<f32>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u32,
    widths: Vec<usize>,
    layers: Vec<LayerFile>,
}

pub fn checkpoint_to_json(model: &GcnModel) -> Result<String> {
    let file = CheckpointFile {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        widths: model.widths(),
        layers: model
            .layers
            .iter()
            .map(|l| LayerFile {
                weight: l
                    .weight
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().map(|&v| v as f32).collect())
                    .collect(),
                bias: l.bias.iter().map(|&v| v as f32).collect(),
                activation: l.activation,
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn checkpoint_from_json(text: &str) -> Result<GcnModel> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint schema_version {}",
            file.schema_version
        )));
    }
    if file.widths.len() != file.layers.len() + 1 {
        return Err(Error::Format(format!(
            "{} widths for {} layers",
            file.widths.len(),
            file.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, l) in file.layers.into_iter().enumerate() {
        let (fan_in, fan_out) = (file.widths[i], file.widths[i + 1]);
        if l.weight.len() != fan_in
            || l.weight.iter().any(|r| r.len() != fan_out)
            || l.bias.len() != fan_out
        {
            return Err(Error::Format(format!(
                "layer {i} does not match widths {fan_in}->{fan_out}"
            )));
        }
        layers.push(GcnLayer {
            weight: Array2::from_shape_fn((fan_in, fan_out), |(r, c)| l.weight[r][c] as f64),
            bias: l.bias.iter().map(|&v| v as f64).collect(),
            activation: l.activation,
        });
    }
    let model = GcnModel { layers };
    if file.widths == CANONICAL_WIDTHS && model.param_count() != CANONICAL_PARAM_COUNT {
        return Err(Error::Format(format!(
            "canonical checkpoint has {} parameters",
            model.param_count()
        )));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &GcnModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_to_json(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GcnModel> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    checkpoint_from_json(&fs::read_to_string(path)?)
}
