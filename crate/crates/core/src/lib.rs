//! Memory-augmented conditional diffusion forecaster for multivariate time series.
//!
//! A lookback window is encoded per channel into a query vector that reads a
//! learnable semantic memory and a frequency-managed episodic memory. The
//! recalled patterns form a variational prior from which a per-channel
//! condition is drawn; an x0-predicting denoiser then turns Gaussian noise into
//! the forecast in a few DDIM steps.

pub mod attention;
pub mod block;
pub mod checkpoint;
pub mod conditioning;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod episodic;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod schedule;
pub mod semantic;
pub mod trainer;

pub use block::Block;
pub use config::Config;
pub use error::{Error, Result};
pub use model::BimDiff;
