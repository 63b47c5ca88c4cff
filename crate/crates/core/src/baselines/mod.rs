//! Comparison detectors and Youden-index thresholding.
//!
//! Every scorer follows one orientation: a higher score means more likely
//! OOD. Fitting happens in each scorer's constructor; scoring goes through
//! [`OodScorer`].

mod candidates;
mod layers;
mod youden;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use candidates::{output_entropy, topk_confidence};
pub use layers::{
    diff_gaussian_params, diff_representation, fit_layer_gaussians, last_layer_score, mahalanobis,
    regularize, sample_covariance, select_best_layer, tv_score, LayerGaussians, LayerMeans,
    TvScorer, DEFAULT_LAMBDA,
};
pub use youden::{youden_threshold, YoudenPoint};

use crate::data::{CandidateSet, LayerTrace};
use crate::detector::GemDetector;
use crate::error::{GemError, Result};

pub trait OodScorer<T: ?Sized> {
    fn score(&self, sample: &T) -> Result<f64>;

    fn score_all<'a, I>(&self, samples: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = &'a T>,
        T: 'a,
    {
        samples.into_iter().map(|s| self.score(s)).collect()
    }
}

/// The GEM score is the normalised deviation from the nearest component.
impl OodScorer<[f64]> for GemDetector {
    fn score(&self, e: &[f64]) -> Result<f64> {
        Ok(self.detect(e)?.z)
    }
}

impl OodScorer<LayerTrace> for TvScorer {
    fn score(&self, t: &LayerTrace) -> Result<f64> {
        TvScorer::score(self, t)
    }
}

/// Distance of the final layer to the ID final-layer mean.
#[derive(Debug, Clone)]
pub struct LastLayer {
    means: LayerMeans,
}

impl LastLayer {
    pub fn fit(id_traces: &[LayerTrace]) -> Result<Self> {
        Ok(LastLayer {
            means: LayerMeans::fit(id_traces)?,
        })
    }
}

impl OodScorer<LayerTrace> for LastLayer {
    fn score(&self, t: &LayerTrace) -> Result<f64> {
        self.means.distance(t, self.means.layers() - 1)
    }
}

/// Distance at the layer that best separated a validation split.
#[derive(Debug, Clone)]
pub struct BestLayer {
    means: LayerMeans,
    layer: usize,
}

impl BestLayer {
    pub fn fit(train: &[LayerTrace], id_val: &[LayerTrace], ood_val: &[LayerTrace]) -> Result<Self> {
        let means = LayerMeans::fit(train)?;
        let layer = select_best_layer(&means, id_val, ood_val)?;
        Ok(BestLayer { means, layer })
    }

    /// 0-based index of the chosen layer.
    pub fn layer(&self) -> usize {
        self.layer
    }
}

impl OodScorer<LayerTrace> for BestLayer {
    fn score(&self, t: &LayerTrace) -> Result<f64> {
        self.means.distance(t, self.layer)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TopK;

impl OodScorer<CandidateSet> for TopK {
    fn score(&self, c: &CandidateSet) -> Result<f64> {
        Ok(topk_confidence(c))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Entropy;

impl OodScorer<CandidateSet> for Entropy {
    fn score(&self, c: &CandidateSet) -> Result<f64> {
        Ok(output_entropy(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gem,
    Tv,
    Topk,
    Entropy,
    LastLayer,
    BestLayer,
}

/// What a method consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Embeddings,
    LayerTraces,
    Candidates,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Gem,
        Method::Tv,
        Method::Topk,
        Method::Entropy,
        Method::LastLayer,
        Method::BestLayer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gem => "gem",
            Method::Tv => "tv",
            Method::Topk => "topk",
            Method::Entropy => "entropy",
            Method::LastLayer => "last-layer",
            Method::BestLayer => "best-layer",
        }
    }

    pub fn input_kind(self) -> InputKind {
        match self {
            Method::Gem => InputKind::Embeddings,
            Method::Tv | Method::LastLayer | Method::BestLayer => InputKind::LayerTraces,
            Method::Topk | Method::Entropy => InputKind::Candidates,
        }
    }

    /// Whether scoring needs an ID training corpus.
    pub fn needs_training(self) -> bool {
        !matches!(self, Method::Topk | Method::Entropy)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = GemError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| GemError::validation("method", format!("unknown method {s:?}")))
    }
}
