//! Dice-loss training with exact reverse-mode gradients and Adam.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{forward_cached, forward_with, init_params, renormalize, GcnModel, PropagationMatrix};
use crate::graph::{FieldGraph, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub lr_min: f64,
    /// Smallest validation-loss drop that counts as an improvement.
    pub min_improvement: f64,
    pub l2_lambda: f64,
    pub dice_epsilon: f64,
    pub seed: u64,
    pub task: Task,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 200,
            lr0: 1e-3,
            plateau_patience: 10,
            plateau_factor: 0.1,
            lr_min: 1e-6,
            min_improvement: 1e-6,
            l2_lambda: 0.01,
            dice_epsilon: 1e-6,
            seed: 0,
            task: Task::Classification,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        // A zero learning rate is allowed so a run can be replayed without updates.
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and non-negative");
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be at least 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if !(self.lr_min > 0.0) || !(self.dice_epsilon > 0.0) {
            return bad("lr_min and dice_epsilon must be positive");
        }
        if !(self.l2_lambda >= 0.0) || !(self.min_improvement >= 0.0) {
            return bad("l2_lambda and min_improvement must be non-negative");
        }
        Ok(())
    }
}

/// Soft Dice loss over valid nodes:
/// `1 - (2 Σ p t + ε) / (Σ p + Σ t + ε)`.
pub fn dice_loss(pred: &[f64], target: &[f64], valid: &[bool], epsilon: f64) -> Result<f64> {
    Ok(dice_terms(pred, target, valid, epsilon)?.0)
}

/// Loss and its gradient with respect to each prediction (zero at invalid nodes).
pub fn dice_loss_grad(
    pred: &[f64],
    target: &[f64],
    valid: &[bool],
    epsilon: f64,
) -> Result<(f64, Vec<f64>)> {
    let (loss, num, den) = dice_terms(pred, target, valid, epsilon)?;
    let grad = pred
        .iter()
        .zip(target)
        .zip(valid)
        .map(|((_, &t), &ok)| {
            if ok {
                -(2.0 * t * den - num) / (den * den)
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss, grad))
}

fn dice_terms(pred: &[f64], target: &[f64], valid: &[bool], epsilon: f64) -> Result<(f64, f64, f64)> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    if pred.len() != valid.len() {
        return Err(Error::LengthMismatch(pred.len(), valid.len()));
    }
    let (mut inter, mut sp, mut st, mut any) = (0.0, 0.0, 0.0, false);
    for ((&p, &t), &ok) in pred.iter().zip(target).zip(valid) {
        if ok {
            inter += p * t;
            sp += p;
            st += t;
            any = true;
        }
    }
    if !any {
        return Err(Error::EmptyMask);
    }
    let num = 2.0 * inter + epsilon;
    let den = sp + st + epsilon;
    Ok((1.0 - num / den, num, den))
}

/// `λ Σ w²` over the weights of every regularized layer (all but the output).
pub fn l2_penalty(model: &GcnModel, lambda: f64) -> f64 {
    model
        .layers
        .iter()
        .zip(model.l2_flags())
        .filter(|(_, reg)| *reg)
        .map(|(l, _)| l.weight.iter().map(|w| w * w).sum::<f64>())
        .sum::<f64>()
        * lambda
}

/// Per-parameter values shaped like a model: gradients or optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamSet {
    pub fn zeros_like(model: &GcnModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| Array2::zeros(l.weight.dim())).collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    fn matches(&self, model: &GcnModel) -> bool {
        self.weights.len() == model.layers.len()
            && self.biases.len() == model.layers.len()
            && model.layers.iter().enumerate().all(|(i, l)| {
                self.weights[i].dim() == l.weight.dim() && self.biases[i].len() == l.bias.len()
            })
    }

    fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
    }

    /// Flattened in layer order, weights (row-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

fn add_l2_grad(grads: &mut ParamSet, model: &GcnModel, lambda: f64) {
    for ((g, l), reg) in grads.weights.iter_mut().zip(&model.layers).zip(model.l2_flags()) {
        if reg {
            g.scaled_add(2.0 * lambda, &l.weight);
        }
    }
}

/// Dice loss of one graph and its gradient, without the L2 term.
pub fn dice_gradients(
    p: &PropagationMatrix,
    g: &FieldGraph,
    model: &GcnModel,
    epsilon: f64,
) -> Result<(f64, ParamSet)> {
    let caches = forward_cached(p, g.features.view(), model)?;
    let out = &caches.last().expect("model has layers").out;
    if out.ncols() != 1 {
        return Err(Error::ShapeMismatch(format!("output width {} != 1", out.ncols())));
    }
    let pred: Vec<f64> = out.column(0).to_vec();
    let (loss, dpred) = dice_loss_grad(&pred, &g.targets, &g.valid_mask, epsilon)?;

    let mut grads = ParamSet::zeros_like(model);
    let mut upstream = Array2::from_shape_vec((pred.len(), 1), dpred).expect("column shape");
    for (i, (layer, cache)) in model.layers.iter().zip(&caches).enumerate().rev() {
        let act = layer.activation;
        let mut dpre = upstream;
        ndarray::Zip::from(&mut dpre)
            .and(&cache.pre)
            .and(&cache.out)
            .for_each(|d, &z, &y| *d *= act.derivative(z, y));
        grads.weights[i] = cache.aggregated.t().dot(&dpre);
        grads.biases[i] = dpre.sum_axis(Axis(0));
        if i == 0 {
            break;
        }
        // P is symmetric, so Pᵀ = P.
        upstream = p.matrix().dot(&dpre.dot(&layer.weight.t()));
    }
    Ok((loss, grads))
}

/// Gradient of `dice_loss + l2_penalty` for one graph, with the total loss.
pub fn gradients(g: &FieldGraph, model: &GcnModel, cfg: &TrainConfig) -> Result<(f64, ParamSet)> {
    let p = renormalize(&g.adjacency)?;
    let (dice, mut grads) = dice_gradients(&p, g, model, cfg.dice_epsilon)?;
    add_l2_grad(&mut grads, model, cfg.l2_lambda);
    Ok((dice + l2_penalty(model, cfg.l2_lambda), grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &GcnModel) -> Self {
        Self {
            m: ParamSet::zeros_like(model),
            v: ParamSet::zeros_like(model),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(model: &mut GcnModel, grads: &ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    if !grads.matches(model) || !state.m.matches(model) || !state.v.matches(model) {
        return Err(Error::ShapeMismatch("optimizer state does not match model".into()));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let update = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *theta -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    };
    for (i, layer) in model.layers.iter_mut().enumerate() {
        ndarray::Zip::from(&mut layer.weight)
            .and(&grads.weights[i])
            .and(&mut state.m.weights[i])
            .and(&mut state.v.weights[i])
            .for_each(|t, &g, m, v| update(t, g, m, v));
        ndarray::Zip::from(&mut layer.bias)
            .and(&grads.biases[i])
            .and(&mut state.m.biases[i])
            .and(&mut state.v.biases[i])
            .for_each(|t, &g, m, v| update(t, g, m, v));
    }
    Ok(())
}

/// Reduce-on-plateau learning rate schedule driven by validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub best: f64,
    pub wait: usize,
    pub patience: usize,
    pub factor: f64,
    pub lr_min: f64,
    pub min_improvement: f64,
}

impl PlateauScheduler {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr0,
            best: f64::INFINITY,
            wait: 0,
            patience: cfg.plateau_patience,
            factor: cfg.plateau_factor,
            lr_min: cfg.lr_min,
            min_improvement: cfg.min_improvement,
        }
    }

    /// Feeds one epoch's validation loss; returns the rate for the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.min_improvement || self.best.is_infinite() {
            self.best = self.best.min(val_loss);
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.lr_min);
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after replaying a sequence of validation losses.
pub fn lr_on_plateau(val_losses: &[f64], cfg: &TrainConfig) -> f64 {
    let mut sched = PlateauScheduler::new(cfg);
    for &v in val_losses {
        sched.step(v);
    }
    sched.lr
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainHistory {
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        for rec in &self.epochs {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        fs::write(path, out)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GcnModel,
    pub best_model: GcnModel,
    pub history: TrainHistory,
}

fn check_dataset(set: &[FieldGraph], task: Task, name: &'static str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyDataset(name));
    }
    for g in set {
        if g.task != Some(task) {
            return Err(Error::TaskMismatch {
                source_id: g.source_id.clone(),
                expected: task.to_string(),
                found: g.task.map_or("none".to_string(), |t| t.to_string()),
            });
        }
    }
    Ok(())
}

/// Mean per-graph Dice loss of a model over a dataset.
pub fn mean_dice(
    set: &[(PropagationMatrix, &FieldGraph)],
    model: &GcnModel,
    epsilon: f64,
) -> Result<f64> {
    let losses: Vec<f64> = set
        .par_iter()
        .map(|(p, g)| {
            let pred = forward_with(p, g.features.view(), model)?;
            dice_loss(&pred, &g.targets, &g.valid_mask, epsilon)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains a freshly initialized model (seeded by `cfg.seed`).
pub fn train(train_set: &[FieldGraph], val_set: &[FieldGraph], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(init_params(cfg.seed), train_set, val_set, cfg)
}

pub fn train_from(
    mut model: GcnModel,
    train_set: &[FieldGraph],
    val_set: &[FieldGraph],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(train_set, cfg.task, "training set")?;
    check_dataset(val_set, cfg.task, "validation set")?;

    let prep = |set: &[FieldGraph]| -> Result<Vec<PropagationMatrix>> {
        set.par_iter().map(|g| renormalize(&g.adjacency)).collect()
    };
    let train_p = prep(train_set)?;
    let val: Vec<(PropagationMatrix, &FieldGraph)> = prep(val_set)?.into_iter().zip(val_set).collect();

    // Shuffling draws from its own stream so it is independent of initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_5EED);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = AdamState::new(&model);
    let mut sched = PlateauScheduler::new(cfg);
    let mut history = TrainHistory {
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best_model = model.clone();

    for epoch in 1..=cfg.epochs {
        let lr = sched.lr;
        order.shuffle(&mut rng);
        let mut dice_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let parts: Vec<(f64, ParamSet)> = batch
                .par_iter()
                .map(|&i| dice_gradients(&train_p[i], &train_set[i], &model, cfg.dice_epsilon))
                .collect::<Result<_>>()?;
            let mut grads = ParamSet::zeros_like(&model);
            for (loss, g) in &parts {
                dice_sum += loss;
                grads.add_assign(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            add_l2_grad(&mut grads, &model, cfg.l2_lambda);
            adam_step(&mut model, &grads, &mut adam, lr)?;
        }
        let train_loss = dice_sum / train_set.len() as f64;
        let val_loss = mean_dice(&val, &model, cfg.dice_epsilon)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best_model = model.clone();
        }
        log::info!("epoch {epoch:>3}  train {train_loss:.5}  val {val_loss:.5}  lr {lr:.1e}");
        sched.step(val_loss);
    }

    Ok(TrainOutcome {
        model,
        best_model,
        history,
    })
}
