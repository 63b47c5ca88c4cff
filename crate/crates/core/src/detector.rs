//! The end-to-end detector: centroid of the ID embeddings, distances to
//! it, a BIC-selected mixture over those distances, and interval
//! membership as the verdict.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingSet, Label};
use crate::error::{GemError, Result};
use crate::gmm::{
    id_intervals, nearest_component, BicSweep, FitConfig, GmmComponent, GmmModel, IdIntervals,
};

pub const DETECTOR_FILE_VERSION: u32 = 1;

/// Coordinate-wise mean of every row.
pub fn centroid(set: &EmbeddingSet) -> Vec<f64> {
    let mut sum = vec![0.0; set.dim()];
    for row in set.rows() {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v;
        }
    }
    let k = set.count() as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    sum
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `‖e_i − centroid‖₂` for every row, in row order.
pub fn distances(set: &EmbeddingSet, centroid: &[f64]) -> Result<Vec<f64>> {
    if set.dim() != centroid.len() {
        return Err(GemError::DimensionMismatch {
            expected: centroid.len(),
            found: set.dim(),
        });
    }
    Ok(set.rows().map(|row| euclidean(row, centroid)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub m: usize,
    pub log_likelihood: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub distance: f64,
    pub is_ood: bool,
    pub nearest_component: usize,
    /// `|d − μ_j| / σ_j` for the nearest component.
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Route {
    /// Let the on-device agent act.
    Local,
    /// Hand the step to a stronger fallback model.
    Fallback,
}

pub fn route(v: &Verdict) -> Route {
    if v.is_ood {
        Route::Fallback
    } else {
        Route::Local
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GemDetector {
    centroid: Vec<f64>,
    model: GmmModel,
    intervals: IdIntervals,
    bic_sweep: Vec<BicRow>,
}

/// Fits the detector on in-distribution training embeddings.
///
/// Rows labelled OOD are rejected; UNKNOWN rows are treated as ID.
pub fn fit_detector(train: &EmbeddingSet, cfg: &FitConfig, n_sigma: f64) -> Result<GemDetector> {
    crate::gmm::validate_n_sigma(n_sigma)?;
    if let Some(i) = train.labels().iter().position(|l| *l == Label::Ood) {
        return Err(GemError::Sample {
            field: "label",
            index: i,
            reason: "training rows must not be labelled OOD".into(),
        });
    }
    let center = centroid(train);
    let dists = distances(train, &center)?;
    let sweep = BicSweep::run(&dists, cfg)?;
    GemDetector::from_parts(center, sweep.best().clone(), n_sigma, bic_rows(&sweep))
}

pub fn bic_rows(sweep: &BicSweep) -> Vec<BicRow> {
    sweep
        .models
        .iter()
        .map(|m| BicRow {
            m: m.n_components(),
            log_likelihood: m.log_likelihood,
            bic: m.bic,
        })
        .collect()
}

impl GemDetector {
    pub fn from_parts(
        centroid: Vec<f64>,
        model: GmmModel,
        n_sigma: f64,
        bic_sweep: Vec<BicRow>,
    ) -> Result<Self> {
        if centroid.is_empty() || centroid.iter().any(|c| !c.is_finite()) {
            return Err(GemError::validation("centroid", "must be non-empty and finite"));
        }
        model.validate()?;
        let intervals = id_intervals(&model, n_sigma)?;
        Ok(GemDetector {
            centroid,
            model,
            intervals,
            bic_sweep,
        })
    }

    pub fn centroid(&self) -> &[f64] {
        &self.centroid
    }

    pub fn dim(&self) -> usize {
        self.centroid.len()
    }

    pub fn model(&self) -> &GmmModel {
        &self.model
    }

    pub fn intervals(&self) -> &IdIntervals {
        &self.intervals
    }

    pub fn n_sigma(&self) -> f64 {
        self.intervals.sigma_multiplier
    }

    pub fn bic_sweep(&self) -> &[BicRow] {
        &self.bic_sweep
    }

    /// Same centroid and mixture with a different sigma multiplier.
    pub fn with_n_sigma(&self, n_sigma: f64) -> Result<Self> {
        GemDetector::from_parts(
            self.centroid.clone(),
            self.model.clone(),
            n_sigma,
            self.bic_sweep.clone(),
        )
    }

    pub fn verdict_for_distance(&self, distance: f64) -> Verdict {
        let (nearest, z) = nearest_component(distance, &self.model);
        Verdict {
            distance,
            is_ood: !self.intervals.contains(distance),
            nearest_component: nearest,
            z,
        }
    }

    pub fn detect(&self, e: &[f64]) -> Result<Verdict> {
        if e.len() != self.dim() {
            return Err(GemError::DimensionMismatch {
                expected: self.dim(),
                found: e.len(),
            });
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(GemError::validation("embedding", "non-finite value"));
        }
        Ok(self.verdict_for_distance(euclidean(e, &self.centroid)))
    }

    pub fn detect_batch(&self, set: &EmbeddingSet) -> Result<Vec<Verdict>> {
        Ok(distances(set, &self.centroid)?
            .into_iter()
            .map(|d| self.verdict_for_distance(d))
            .collect())
    }

    pub fn to_file(&self) -> DetectorFile {
        let mut bytes = Vec::with_capacity(self.centroid.len() * 8);
        for c in &self.centroid {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
        DetectorFile {
            version: DETECTOR_FILE_VERSION,
            dim: Some(self.dim()),
            centroid: Some(BASE64.encode(bytes)),
            components: self.model.components.clone(),
            n_sigma: self.n_sigma(),
            train_count: self.model.train_count,
            log_likelihood: self.model.log_likelihood,
            bic: self.model.bic,
            bic_sweep: self.bic_sweep.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: DetectorFile = serde_json::from_str(json)?;
        file.into_detector()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = self.to_json()?;
        json.push('\n');
        fs::write(path, json).map_err(|e| GemError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|e| GemError::io(path, e))?;
        GemDetector::from_json(&json)
    }
}

/// JSON model file. Without `centroid` it describes a bare mixture; with it, a full detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorFile {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Base64 of the little-endian f64 centroid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<String>,
    pub components: Vec<GmmComponent>,
    pub n_sigma: f64,
    pub train_count: usize,
    pub log_likelihood: f64,
    pub bic: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bic_sweep: Vec<BicRow>,
}

impl DetectorFile {
    /// Model-only file for a mixture fitted outside a detector.
    pub fn for_model(model: &GmmModel, n_sigma: f64) -> Self {
        DetectorFile {
            version: DETECTOR_FILE_VERSION,
            dim: None,
            centroid: None,
            components: model.components.clone(),
            n_sigma,
            train_count: model.train_count,
            log_likelihood: model.log_likelihood,
            bic: model.bic,
            bic_sweep: Vec::new(),
        }
    }

    pub fn model(&self) -> GmmModel {
        GmmModel {
            components: self.components.clone(),
            train_count: self.train_count,
            log_likelihood: self.log_likelihood,
            bic: self.bic,
        }
    }

    pub fn into_detector(self) -> Result<GemDetector> {
        if self.version != DETECTOR_FILE_VERSION {
            return Err(GemError::validation(
                "version",
                format!("unsupported detector file version {}", self.version),
            ));
        }
        let encoded = self
            .centroid
            .as_deref()
            .ok_or_else(|| GemError::validation("centroid", "missing from model file"))?;
        let bytes = BASE64
            .decode(encoded)
            .map_err(|e| GemError::validation("centroid", e.to_string()))?;
        if bytes.len() % 8 != 0 {
            return Err(GemError::validation("centroid", "length is not a multiple of 8"));
        }
        let centroid: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(dim) = self.dim {
            if dim != centroid.len() {
                return Err(GemError::DimensionMismatch {
                    expected: dim,
                    found: centroid.len(),
                });
            }
        }
        let model = self.model();
        GemDetector::from_parts(centroid, model, self.n_sigma, self.bic_sweep)
    }
}
