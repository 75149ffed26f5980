//! Simulation core for stratified, privacy-aware client sampling in federated learning.
//!
//! Everything here is deterministic given its inputs and an explicit RNG stream, and runs
//! without `std` (an allocator is required). File formats, configuration parsing and the
//! command-line driver live in the companion `fedstas` crate.
//!
//! Module map:
//!
//! * [`model`]: multinomial logistic / one-hidden-layer MLP losses, gradients, local SGD.
//! * [`compress`]: chunk-mean sketch plus 1-D k-means quantization of client updates.
//! * [`stratify`]: Lloyd clustering of restored compressed updates into strata.
//! * [`sampling`]: Neyman allocation, gradient-norm importance sampling, stratified aggregation.
//! * [`privacy`]: randomized-response size reports and the participating-total estimator.
//! * [`data_sampling`]: per-example Bernoulli data sampling and the client update step.
//! * [`data`]: synthetic data, IID and Dirichlet partitions.
//! * [`rng`]: counter-keyed ChaCha streams.
//! * [`engine`]: the round loop for every strategy.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod compress;
pub mod data;
pub mod data_sampling;
pub mod engine;
mod error;
pub mod model;
pub mod privacy;
pub mod rng;
pub mod sampling;
pub mod stratify;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
