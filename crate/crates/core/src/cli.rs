//! Command-line front end. `main` parses, runs and maps errors to exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{load_checkpoint, model_forward, renormalize, save_checkpoint, GcnModel};
use crate::graph::{field_graph, load_graph, save_graph, FieldGraph, GraphParams, Task, DEFAULT_NODES};
use crate::metrics::{evaluate_predictions, pooled, pr_curve, EvalReport, DEFAULT_THRESHOLD};
use crate::raster::{load_image, load_mask};
use crate::render::{render_overlay, TintMode};
use crate::slic::{load_superpixel_map, save_superpixel_map, DEFAULT_COMPACTNESS, DEFAULT_MAX_ITER};
use crate::synth::{generate_dataset, load_manifest, write_dataset, Splits, SynthConfig, MANIFEST_FILE};
use crate::train::{train, TrainConfig};

pub const LOG_ENV: &str = "FIELDGRAPH_LOG";
pub const GRAPH_MANIFEST_FILE: &str = "graphs.json";

#[derive(Debug, Parser)]
#[command(name = "fieldgraph", version, about = "Superpixel GCN stress mapping for field imagery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of field images and stress masks.
    Synth(SynthArgs),
    /// Segment fields and write one graph per field.
    BuildGraph(BuildGraphArgs),
    /// Train a model on graphs listed in a graph manifest.
    Train(TrainArgs),
    /// Score a checkpoint on a split and print a metrics row.
    Evaluate(EvaluateArgs),
    /// Draw superpixel boundaries and node values over a field image.
    Render(RenderArgs),
    /// Time single-threaded forward passes.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    #[arg(long, default_value_t = 0.15)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub zero_dropout: f64,
    #[arg(long, default_value_t = 10.0)]
    pub color_jitter: f64,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    /// Dataset manifest written by `synth`.
    #[arg(long, conflicts_with_all = ["image", "mask"], required_unless_present = "image")]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires = "mask")]
    pub image: Option<PathBuf>,
    #[arg(long, requires = "image")]
    pub mask: Option<PathBuf>,
    /// Split to file an explicit image/mask pair under.
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    pub nodes: usize,
    #[arg(long, default_value_t = DEFAULT_COMPACTNESS)]
    pub compactness: f64,
    #[arg(long, default_value_t = 8)]
    pub bins: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, default_value_t = Task::Classification)]
    pub task: Task,
    /// Fields processed in parallel; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Graph manifest written by `build-graph`.
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.1)]
    pub factor: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub min_lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub l2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn config(&self, task: Task) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr0: self.lr,
            plateau_patience: self.patience,
            plateau_factor: self.factor,
            lr_min: self.min_lr,
            l2_lambda: self.l2,
            seed: self.seed,
            task,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct GraphSource {
    /// Graph manifest; combined with `--split`.
    #[arg(long, conflicts_with = "graph")]
    pub graphs: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub split: String,
    /// Individual graph files.
    #[arg(long, num_args = 1..)]
    pub graph: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: GraphSource,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Also sweep this many thresholds and report the best-F1 one.
    #[arg(long, num_args = 0..=1, default_missing_value = "99")]
    pub pr_curve: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Label map written by `build-graph`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    /// Render predictions instead of targets.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: GraphSource,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 50)]
    pub warmup: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEntry {
    pub id: String,
    /// Paths relative to the manifest's directory.
    pub graph: PathBuf,
    pub labels: PathBuf,
    pub image: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphManifest {
    pub task: Task,
    pub nodes: usize,
    pub splits: Splits<GraphEntry>,
}

impl GraphManifest {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn load_split(&self, dir: &Path, split: &str) -> Result<Vec<FieldGraph>> {
        let entries = self
            .splits
            .get(split)
            .ok_or_else(|| Error::InvalidSplit(format!("unknown split {split:?}")))?;
        entries.par_iter().map(|e| load_graph(dir.join(&e.graph))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub reps: usize,
    pub warmup: usize,
    pub nodes: usize,
    pub total_seconds: f64,
    pub ms_per_graph: f64,
    pub graphs_per_sec: f64,
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::BuildGraph(a) => cmd_build_graph(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| ()),
        Command::Render(a) => cmd_render(&a),
        Command::Benchmark(a) => cmd_benchmark(&a).map(|_| ()),
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        width: a.width,
        height: a.height,
        zero_dropout: a.zero_dropout,
        color_jitter: a.color_jitter,
        ..SynthConfig::default()
    };
    let split = (1.0 - a.val_fraction - a.test_fraction, a.val_fraction, a.test_fraction);
    let ds = generate_dataset(&cfg, a.n, split, a.seed)?;
    write_dataset(&ds, &cfg, a.seed, &a.out)?;
    info!(
        "wrote {} fields ({} train, {} val, {} test) to {}",
        a.n,
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        a.out.display()
    );
    Ok(())
}

struct Job {
    split: &'static str,
    id: String,
    image: PathBuf,
    mask: PathBuf,
}

pub fn cmd_build_graph(a: &BuildGraphArgs) -> Result<GraphManifest> {
    let jobs: Vec<Job> = match (&a.manifest, &a.image, &a.mask) {
        (Some(m), _, _) => {
            let dir = parent_dir(m);
            load_manifest(m)?
                .splits
                .iter()
                .map(|(split, e)| Job {
                    split,
                    id: e.id.clone(),
                    image: dir.join(&e.image),
                    mask: dir.join(&e.mask),
                })
                .collect()
        }
        (None, Some(image), Some(mask)) => {
            let split = match a.split.as_str() {
                "train" => "train",
                "val" => "val",
                _ => "test",
            };
            let id = image
                .file_stem()
                .map_or("field".into(), |s| s.to_string_lossy().into_owned());
            vec![Job {
                split,
                id,
                image: image.clone(),
                mask: mask.clone(),
            }]
        }
        _ => return Err(Error::InvalidConfig("need --manifest or --image with --mask".into())),
    };
    let params = GraphParams {
        nodes: a.nodes,
        compactness: a.compactness,
        max_iter: a.max_iter,
        bins: a.bins,
    };
    fs::create_dir_all(a.out.join("graphs"))?;
    fs::create_dir_all(a.out.join("labels"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let entries: Vec<(&str, GraphEntry)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let img = load_image(&job.image)?;
                let mask = load_mask(&job.mask, img.width(), img.height())?;
                let (g, sp) = field_graph(&img, &mask, &params, a.task, job.id.clone())?;
                let graph = PathBuf::from("graphs").join(format!("{}.json", job.id));
                let labels = PathBuf::from("labels").join(format!("{}.png", job.id));
                save_graph(&g, a.out.join(&graph))?;
                save_superpixel_map(&sp, a.out.join(&labels))?;
                info!("{}: n_real = {} of {}", job.id, g.n_real, g.n);
                let image = std::path::absolute(&job.image)?;
                Ok((job.split, GraphEntry { id: job.id.clone(), graph, labels, image }))
            })
            .collect::<Result<_>>()
    })?;
    let mut splits = Splits::default();
    for (split, e) in entries {
        match split {
            "train" => splits.train.push(e),
            "val" => splits.val.push(e),
            _ => splits.test.push(e),
        }
    }
    let manifest = GraphManifest {
        task: a.task,
        nodes: a.nodes,
        splits,
    };
    write_json(&a.out.join(GRAPH_MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let manifest = GraphManifest::load(&a.graphs)?;
    let dir = parent_dir(&a.graphs);
    let train_set = manifest.load_split(&dir, "train")?;
    let val_set = manifest.load_split(&dir, "val")?;
    let cfg = a.config(manifest.task);
    info!(
        "training on {} graphs, validating on {}: {cfg:?}",
        train_set.len(),
        val_set.len()
    );
    let outcome = train(&train_set, &val_set, &cfg)?;
    fs::create_dir_all(&a.out)?;
    save_checkpoint(&outcome.model, a.out.join("final.json"))?;
    save_checkpoint(&outcome.best_model, a.out.join("best.json"))?;
    outcome.history.write_jsonl(a.out.join("history.jsonl"))?;
    for r in &outcome.history.epochs {
        println!(
            "epoch {:>3}  train_loss {:.6}  val_loss {:.6}  lr {:.1e}",
            r.epoch, r.train_loss, r.val_loss, r.lr
        );
    }
    info!(
        "best val loss {:.6} at epoch {}",
        outcome.history.best_val_loss, outcome.history.best_epoch
    );
    Ok(())
}

fn load_source(src: &GraphSource) -> Result<Vec<FieldGraph>> {
    match &src.graphs {
        Some(m) => GraphManifest::load(m)?.load_split(&parent_dir(m), &src.split),
        None if !src.graph.is_empty() => src.graph.iter().map(load_graph).collect(),
        None => Err(Error::InvalidConfig("need --graphs or --graph".into())),
    }
}

fn predict_all(model: &GcnModel, graphs: &[FieldGraph]) -> Result<Vec<Vec<f64>>> {
    graphs.par_iter().map(|g| model_forward(g, model)).collect()
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<EvalReport> {
    let model = load_checkpoint(&a.checkpoint)?;
    let graphs = load_source(&a.source)?;
    let preds = predict_all(&model, &graphs)?;
    let mut report = evaluate_predictions(&graphs, &preds, a.threshold, TrainConfig::default().dice_epsilon)?;
    if let Some(n) = a.pr_curve {
        let (p, t, v) = pooled(&graphs, &preds);
        report.pr_curve = Some(pr_curve(&p, &t, &v, n)?);
    }
    println!("{}", EvalReport::table_header());
    println!("{}", report.table_row());
    if let Some(curve) = &report.pr_curve {
        println!("best F1 {:.4} at threshold {:.4}", curve.best_f1, curve.best_threshold);
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(report)
}

pub fn cmd_render(a: &RenderArgs) -> Result<()> {
    let img = load_image(&a.image)?;
    let sp = load_superpixel_map(&a.labels)?;
    let g = load_graph(&a.graph)?;
    let values = match &a.checkpoint {
        Some(ck) => model_forward(&g, &load_checkpoint(ck)?)?,
        None => g.targets.clone(),
    };
    let mode = TintMode::for_task(g.task.unwrap_or(Task::Classification), a.threshold);
    let out = render_overlay(&img, &sp, &values[..g.n_real], mode)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    out.save_png(&a.out)
}

pub fn cmd_benchmark(a: &BenchmarkArgs) -> Result<BenchmarkReport> {
    let model = load_checkpoint(&a.checkpoint)?.to_f32();
    let graphs = load_source(&a.source)?;
    if graphs.is_empty() {
        return Err(Error::EmptyDataset("benchmark set"));
    }
    if a.reps == 0 {
        return Err(Error::InvalidConfig("--reps must be at least 1".into()));
    }
    let inputs: Vec<(Array2<f32>, Array2<f32>)> = graphs
        .iter()
        .map(|g| {
            let p = renormalize(&g.adjacency)?.matrix().mapv(|v| v as f32);
            Ok((p, g.features.mapv(|v| v as f32)))
        })
        .collect::<Result<_>>()?;
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut sink = 0.0f32;
    let elapsed = single.install(|| {
        for i in 0..a.warmup {
            let (p, x) = &inputs[i % inputs.len()];
            sink += model.forward(p, x)[0];
        }
        let start = Instant::now();
        for i in 0..a.reps {
            let (p, x) = &inputs[i % inputs.len()];
            sink += model.forward(p, x)[0];
        }
        start.elapsed().as_secs_f64()
    });
    log::debug!("checksum {sink}");
    let report = BenchmarkReport {
        reps: a.reps,
        warmup: a.warmup,
        nodes: graphs[0].n,
        total_seconds: elapsed,
        ms_per_graph: elapsed * 1e3 / a.reps as f64,
        graphs_per_sec: a.reps as f64 / elapsed,
    };
    println!(
        "{} reps on {}-node graphs: {:.1} graphs/sec, {:.3} ms/graph",
        report.reps, report.nodes, report.graphs_per_sec, report.ms_per_graph
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(report)
}

/// Dataset manifest path inside a `synth` output directory.
pub fn dataset_manifest(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
