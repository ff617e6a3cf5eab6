//! Image anomaly detection on a small deterministic neural-network engine.
//!
//! The crate covers the whole experiment loop: loading and synthesizing image
//! datasets, building and training CNN / convolutional-autoencoder / DCGAN
//! models, scoring images by reconstruction error and latent density, and
//! evaluating binary defect decisions.

pub mod dataset;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod pipelines;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
