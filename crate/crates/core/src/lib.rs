//! Bias-aware saliency modeling: fixation datasets, spatial priors, metrics,
//! a multiscale model with per-dataset bias parameters, training and
//! adaptation, and the experiment harness built on them.

pub mod centerbias;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod harness;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Result, SalError};
