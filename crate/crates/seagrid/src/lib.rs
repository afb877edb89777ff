//! Weakly-supervised coarse segmentation for underwater imagery.
//!
//! Patch-level classifiers are trained from image-level labels only. Two
//! pseudo-labeling engines supply the training signal: feature-template
//! cosine similarity ([`seafeats`]) and vision-language prompt groups
//! ([`seaclip`]); at inference their normalized logits are averaged into
//! an [`ensemble`] that predicts a coarse class mask per image.
//!
//! Start with the runnable programs under `examples/`; the `seagrid`
//! binary drives the same pipeline from the command line.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pretext;
pub mod pseudolabel;
pub mod seaclip;
pub mod seafeats;
pub mod synthetic;

pub use error::{Error, Result};
