//! Node-level evaluation: thresholding, confusion counts, precision, recall,
//! F1, IoU and precision-recall sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{model_forward, GcnModel};
use crate::graph::FieldGraph;
use crate::train::dice_loss;

pub const DEFAULT_THRESHOLD: f64 = 0.4;

/// `1` where `pred >= threshold`.
pub fn binarize(pred: &[f64], threshold: f64) -> Vec<u8> {
    pred.iter().map(|&p| (p >= threshold) as u8).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Counts over valid nodes. A target counts as positive when it is above zero,
/// which for regression targets is the any-pixel rule.
pub fn confusion(labels: &[u8], targets: &[f64], valid: &[bool]) -> Result<Confusion> {
    if labels.len() != targets.len() {
        return Err(Error::LengthMismatch(labels.len(), targets.len()));
    }
    if labels.len() != valid.len() {
        return Err(Error::LengthMismatch(labels.len(), valid.len()));
    }
    let mut c = Confusion::default();
    for ((&l, &t), &ok) in labels.iter().zip(targets).zip(valid) {
        if !ok {
            continue;
        }
        match (l == 1, t > 0.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    /// Set when any ratio was 0/0 and reported as 0.
    pub degenerate: bool,
}

pub fn metrics(c: &Confusion) -> Metrics {
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    let iou = ratio(c.tp, c.tp + c.fp + c.fn_);
    Metrics {
        precision,
        recall,
        f1,
        iou,
        degenerate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub best_threshold: f64,
    pub best_f1: f64,
}

/// The `n` evenly spaced interior thresholds `i / (n + 1)`, `i = 1..=n`.
pub fn threshold_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

/// Sweeps the threshold grid; the best-F1 threshold breaks ties toward the lowest value.
pub fn pr_curve(pred: &[f64], targets: &[f64], valid: &[bool], n_thresholds: usize) -> Result<PrCurve> {
    if n_thresholds < 2 {
        return Err(Error::InvalidConfig("pr_curve needs at least 2 thresholds".into()));
    }
    let mut points = Vec::with_capacity(n_thresholds);
    let (mut best_threshold, mut best_f1) = (f64::NAN, f64::NEG_INFINITY);
    for t in threshold_grid(n_thresholds) {
        let m = metrics(&confusion(&binarize(pred, t), targets, valid)?);
        if m.f1 > best_f1 {
            best_f1 = m.f1;
            best_threshold = t;
        }
        points.push(PrPoint {
            threshold: t,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        });
    }
    Ok(PrCurve {
        points,
        best_threshold,
        best_f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub source_id: String,
    pub dice_loss: f64,
    pub counts: Confusion,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    /// Mean of per-field Dice losses.
    pub dice_loss: f64,
    /// Dice loss over all valid nodes of all fields pooled together.
    pub pooled_dice_loss: f64,
    /// Micro-averaged over pooled confusion counts.
    #[serde(flatten)]
    pub metrics: Metrics,
    pub counts: Confusion,
    pub per_field: Vec<FieldReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pr_curve: Option<PrCurve>,
}

impl EvalReport {
    pub fn table_header() -> &'static str {
        "Dice Loss  Precision  Recall  F1-score  IOU-score"
    }

    pub fn table_row(&self) -> String {
        format!(
            "{:<9.4}  {:<9.4}  {:<6.4}  {:<8.4}  {:.4}",
            self.dice_loss, self.metrics.precision, self.metrics.recall, self.metrics.f1, self.metrics.iou
        )
    }
}

/// Scores precomputed predictions, one vector per graph.
pub fn evaluate_predictions(
    graphs: &[FieldGraph],
    preds: &[Vec<f64>],
    threshold: f64,
    dice_epsilon: f64,
) -> Result<EvalReport> {
    if graphs.is_empty() {
        return Err(Error::EmptyDataset("evaluation set"));
    }
    if graphs.len() != preds.len() {
        return Err(Error::LengthMismatch(graphs.len(), preds.len()));
    }
    let mut per_field = Vec::with_capacity(graphs.len());
    let mut total = Confusion::default();
    let (mut all_p, mut all_t, mut all_v) = (Vec::new(), Vec::new(), Vec::new());
    for (g, p) in graphs.iter().zip(preds) {
        let counts = confusion(&binarize(p, threshold), &g.targets, &g.valid_mask)?;
        total = total + counts;
        per_field.push(FieldReport {
            source_id: g.source_id.clone(),
            dice_loss: dice_loss(p, &g.targets, &g.valid_mask, dice_epsilon)?,
            counts,
            metrics: metrics(&counts),
        });
        all_p.extend_from_slice(p);
        all_t.extend_from_slice(&g.targets);
        all_v.extend_from_slice(&g.valid_mask);
    }
    Ok(EvalReport {
        threshold,
        dice_loss: per_field.iter().map(|f| f.dice_loss).sum::<f64>() / per_field.len() as f64,
        pooled_dice_loss: dice_loss(&all_p, &all_t, &all_v, dice_epsilon)?,
        metrics: metrics(&total),
        counts: total,
        per_field,
        pr_curve: None,
    })
}

pub fn evaluate(
    model: &GcnModel,
    graphs: &[FieldGraph],
    threshold: f64,
    dice_epsilon: f64,
) -> Result<EvalReport> {
    let preds = graphs
        .iter()
        .map(|g| model_forward(g, model))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(graphs, &preds, threshold, dice_epsilon)
}

/// Concatenates predictions, targets and masks of several graphs for a pooled sweep.
pub fn pooled(graphs: &[FieldGraph], preds: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for (g, p) in graphs.iter().zip(preds) {
        out.0.extend_from_slice(p);
        out.1.extend_from_slice(&g.targets);
        out.2.extend_from_slice(&g.valid_mask);
    }
    out
}
