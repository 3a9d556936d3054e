//! Multi-view, multi-person 3D skeleton reconstruction by joint association of
//! per-view parsing, cross-view matching and temporal tracking.

pub mod detections;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod pipeline;
pub mod skelfit;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
