//! Superpixel graphs and a compact graph convolutional network for locating
//! nutrient-deficiency stress in aerial field imagery.
//!
//! The pipeline runs SLIC over-segmentation, turns every superpixel into a
//! node with nine color statistics, connects all nodes with histogram
//! similarity weights, and classifies or regresses per-node stress with a
//! six-layer GCN.

pub mod cli;
pub mod error;
pub mod features;
pub mod gcn;
pub mod graph;
pub mod metrics;
pub mod raster;
pub mod render;
pub mod slic;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
