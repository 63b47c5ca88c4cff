//! Seeded synthetic data and brute-force oracles used by the gem-core
//! test suites. Kept out of the production crates on purpose: nothing
//! here may reuse the numerical kernels it is meant to check.

pub mod fixtures;
pub mod mixture;
pub mod oracle;
pub mod rng;

use thiserror::Error;

pub use mixture::{gaussian_cluster, sample_mixture, sample_mixture_labeled, MixturePart, MixtureSpec};
pub use oracle::{grid_likelihood_oracle, mann_whitney_auroc, GridOptimum, GridSpec};
pub use rng::SplitMix64;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid mixture spec: {0}")]
    Spec(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("grid too coarse: neighbouring cells differ by {gap} in log-likelihood")]
    GridTooCoarse { gap: f64 },
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;
