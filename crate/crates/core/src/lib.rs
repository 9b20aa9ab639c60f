//! Superpixel graph classification with graph attention networks, four
//! gradient- and activation-based saliency methods, and occlusion fidelity.
//!
//! The pipeline runs image → SLIC segmentation → region adjacency graph →
//! multi-head GAT → per-node saliency → occlusion-based fidelity.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod fidelity;
pub mod gat;
pub mod matrix;
pub mod par;
pub mod render;
pub mod superpixel;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
