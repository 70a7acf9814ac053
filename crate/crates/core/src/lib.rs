//! Differentially private SGD with per-example clipping and Gaussian noise,
//! privacy accounting, and loss-based anomaly detection.

pub mod data;
pub mod dp;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod privacy;
pub mod tensor;

pub use error::{Error, Result};
