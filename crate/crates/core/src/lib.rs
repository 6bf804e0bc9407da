//! Multimodal soil-moisture estimation from soil-patch images and
//! meteorological records.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: tensors, layer primitives, tape-based gradients, optimizers,
//!   checkpoints.
//! - [`data`]: meteorological tables, feature selection, normalization,
//!   splitting, synthetic station data.
//! - [`patch`]: bounding boxes, patch cropping and detection metrics.
//! - [`models`]: unimodal extractors and the fusion heads.
//! - [`training`]: losses, the training loop and experiment drivers.
//! - [`evaluation`]: MAE/MAPE, residual bands and station-wise reports.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod nn;
pub mod patch;
pub mod training;

pub use error::{Error, Result};
