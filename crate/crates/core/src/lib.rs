//! Out-of-distribution detection for agent inputs from embedding geometry.
//!
//! In-distribution embeddings are summarised by their centroid; the
//! distances of training samples to that centroid are modelled with a
//! univariate Gaussian mixture whose size is picked by BIC. A new input is
//! in-distribution when its distance falls within `n` standard deviations
//! of some component mean.
//!
//! ```
//! use gem_core::data::{EmbeddingSet, Label};
//! use gem_core::detector::fit_detector;
//! use gem_core::gmm::FitConfig;
//!
//! let rows: Vec<Vec<f64>> = (0..50)
//!     .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()])
//!     .collect();
//! let train = EmbeddingSet::from_rows(&rows, Label::Id).unwrap();
//! let cfg = FitConfig { max_components: 3, ..FitConfig::default() };
//! let detector = fit_detector(&train, &cfg, 3.0).unwrap();
//! assert!(detector.detect(&[40.0, -40.0]).unwrap().is_ood);
//! ```

pub mod baselines;
pub mod data;
pub mod detector;
pub mod error;
pub mod gmm;
pub mod metrics;

use serde::{Deserialize, Serialize};

pub use error::{GemError, Result};

/// Binary ground truth or decision; OOD is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

impl Class {
    pub fn is_ood(self) -> bool {
        self == Class::Ood
    }
}
