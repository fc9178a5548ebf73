//! Collaborative two-person 3D motion prediction.
//!
//! The crate bundles a small reverse-mode autodiff engine, the single-person
//! attention + GCN predictor, the cross-interaction attention (XIA) model
//! built on top of it, the JME/SME/AME metric family, triangulation helpers
//! for repairing missing markers, data I/O with the SA/CA/EA split
//! protocols, and a deterministic synthetic coupled-motion generator.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod synth;
pub mod tensor;
pub mod train;

mod io_util;

pub use error::{Error, Result};
