//! Ordinal classification under annotator label noise.
//!
//! Training runs in two stages. A negative-learning warm-up picks a small
//! reliable subset on which an encoder is trained contrastively; fine-tuning
//! then combines cross-entropy with memory pseudo-labels and a unimodal
//! penalty on the predicted distribution. A synthetic multi-annotator
//! benchmark, cross-entropy baselines and an ablation grid come with it.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
