//! Distributionally robust centroid loss for long-tail representation learning.
//!
//! The library trains an embedding network so that every class — including the
//! rare tail of a long-tailed label distribution — gets a representation whose
//! empirical centroid can be trusted. The core idea: treat each class centroid
//! as uncertain within a ball of radius ε_c and optimize a worst-case
//! (robust) version of a centroid-likelihood loss. Rare classes get their
//! radius from a policy (shared value, `value/√n_c`, or learned parameters),
//! and the robust loss is provably an upper bound on the plain likelihood loss
//! whenever the true centroid lies inside the ball.
//!
//! Module map:
//!
//! - [`geometry`] — the embedding metric and the KL ↔ radius correspondence.
//! - [`batch`] — feature batches (embeddings + labels + per-class weights).
//! - [`centroids`] — per-class centroid bank, recomputed between epochs.
//! - [`epsilon`] — uncertainty-radius policies (shared / sqrt-n / learned).
//! - [`losses`] — likelihood, robust upper bound, lower bound, certified
//!   triangle-inequality bounds, gap diagnostics, cross-entropy, joint loss.
//! - [`model`] — a small MLP with closed-form backprop and SGD + momentum.
//! - [`data`] — synthetic long-tailed Gaussian mixture datasets.
//! - [`trainer`] — the three-stage training loop and its artifacts.
//! - [`eval`] — split accuracies, centroid probes, coverage and gap reports.
//! - [`config`] — flat key/value run configuration with strict validation.
//!
//! Everything numeric is generic over [`scalar::Real`] (implemented for `f32`
//! and `f64`); the `*64` aliases below are the concrete types the CLI and the
//! experiment pipeline use.

pub mod batch;
pub mod centroids;
pub mod config;
pub mod data;
pub mod epsilon;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod scalar;
pub mod trainer;

mod error;

pub use error::{Error, Result};
pub use scalar::Real;

/// Feature batch over `f64` (the pipeline default).
pub type Batch64 = batch::FeatureBatch<f64>;
/// Centroid bank over `f64`.
pub type Bank64 = centroids::CentroidBank<f64>;
/// Radius policy over `f64`.
pub type Policy64 = epsilon::EpsilonPolicy<f64>;
/// Loss output over `f64`.
pub type LossResult64 = losses::LossResult<f64>;
/// Network over `f64`.
pub type Network64 = model::Network<f64>;
/// Synthetic dataset over `f64`.
pub type Dataset64 = data::LongTailDataset<f64>;
