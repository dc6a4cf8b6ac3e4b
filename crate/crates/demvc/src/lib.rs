//! Deep embedded multi-view clustering with collaborative training.
//!
//! Per-view autoencoders learn embedded representations independently, then
//! all views are fine-tuned together: a rotating referred view shares its
//! sharpened auxiliary target distribution, and every view minimizes its
//! reconstruction loss plus the KL divergence of its soft cluster assignment
//! against that shared target. Cluster centers can be initialized
//! consistently across views from the first referred view's k-means.
//!
//! The crate is organized as:
//! - [`tensor`]: dense arrays, affine/conv layers with analytic gradients, Adam
//! - [`autoencoder`]: per-view encoder/decoder pairs and pretraining
//! - [`cluster`]: Student-t soft assignment, target distribution, KL losses,
//!   k-means initialization
//! - [`train`]: the two-phase collaborative training pipeline and reports
//! - [`metrics`]: ACC / NMI / ARI evaluation
//! - [`data`]: multi-view dataset container, file formats, synthetic views

// kernels index several buffers in lockstep; iterator rewrites obscure them
#![allow(clippy::needless_range_loop)]

pub mod autoencoder;
pub mod cluster;
pub mod data;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{DemvcError, Result};
pub use tensor::Tensor;
