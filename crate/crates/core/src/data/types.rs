use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};

/// Ground-truth tag carried by each stored sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
    #[serde(rename = "UNKNOWN")]
    Unknown,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Id => "ID",
            Label::Ood => "OOD",
            Label::Unknown => "UNKNOWN",
        })
    }
}

impl FromStr for Label {
    type Err = GemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ID" | "id" => Ok(Label::Id),
            "OOD" | "ood" => Ok(Label::Ood),
            "UNKNOWN" | "unknown" | "" => Ok(Label::Unknown),
            other => Err(GemError::validation(
                "label",
                format!("unknown label {other:?}"),
            )),
        }
    }
}

/// A `count × dim` row-major matrix of embeddings with per-row labels and ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    data: Vec<f64>,
    labels: Vec<Label>,
    sample_ids: Vec<String>,
}

impl EmbeddingSet {
    pub fn new(
        dim: usize,
        data: Vec<f64>,
        labels: Vec<Label>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let set = EmbeddingSet {
            dim,
            data,
            labels,
            sample_ids,
        };
        set.validate()?;
        Ok(set)
    }

    /// Builds a set from rows, labelling every row `label` and numbering ids from 0.
    pub fn from_rows(rows: &[Vec<f64>], label: Label) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(GemError::Sample {
                    field: "vector",
                    index: i,
                    reason: format!("length {} differs from dim {dim}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        EmbeddingSet::new(dim, data, vec![label; rows.len()], ids)
    }

    /// Checks every structural invariant, reporting the first offending sample.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(GemError::validation("dim", "must be at least 1"));
        }
        if self.data.is_empty() {
            return Err(GemError::validation("count", "must be at least 1"));
        }
        if self.data.len() % self.dim != 0 {
            return Err(GemError::validation(
                "vectors",
                format!(
                    "{} values is not a multiple of dim {}",
                    self.data.len(),
                    self.dim
                ),
            ));
        }
        let count = self.data.len() / self.dim;
        if self.labels.len() != count {
            return Err(GemError::validation(
                "labels",
                format!("{} labels for {count} samples", self.labels.len()),
            ));
        }
        if self.sample_ids.len() != count {
            return Err(GemError::validation(
                "sample_ids",
                format!("{} ids for {count} samples", self.sample_ids.len()),
            ));
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(GemError::Sample {
                field: "vector",
                index: pos / self.dim,
                reason: format!("non-finite value {}", self.data[pos]),
            });
        }
        let mut seen = HashSet::with_capacity(count);
        for (i, id) in self.sample_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(GemError::Sample {
                    field: "sample_id",
                    index: i,
                    reason: format!("duplicate id {id:?}"),
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            ids.push(self.sample_ids[i].clone());
        }
        EmbeddingSet::new(self.dim, data, labels, ids)
    }

    /// Replaces every label, e.g. to mark a test file as the OOD side of an evaluation.
    pub fn with_labels(mut self, label: Label) -> Self {
        self.labels.iter_mut().for_each(|l| *l = label);
        self
    }

    #[cfg(test)]
    pub(crate) fn new_unchecked(
        dim: usize,
        data: Vec<f64>,
        labels: Vec<Label>,
        sample_ids: Vec<String>,
    ) -> Self {
        EmbeddingSet {
            dim,
            data,
            labels,
            sample_ids,
        }
    }
}

/// Hidden representations of one sample at every layer: `layers × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    dim: usize,
    reps: Vec<f64>,
}

impl LayerTrace {
    pub fn new(dim: usize, reps: Vec<f64>) -> Result<Self> {
        if dim == 0 || reps.is_empty() || reps.len() % dim != 0 {
            return Err(GemError::validation(
                "layer trace",
                format!("{} values cannot be split into layers of width {dim}", reps.len()),
            ));
        }
        if reps.iter().any(|v| !v.is_finite()) {
            return Err(GemError::validation("layer trace", "non-finite value"));
        }
        Ok(LayerTrace { dim, reps })
    }

    pub fn from_layers(layers: &[Vec<f64>]) -> Result<Self> {
        let dim = layers.first().map_or(0, Vec::len);
        if layers.iter().any(|l| l.len() != dim) {
            return Err(GemError::validation("layer trace", "ragged layer widths"));
        }
        LayerTrace::new(dim, layers.concat())
    }

    pub fn layers(&self) -> usize {
        self.reps.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Representation at 0-based layer `l`.
    pub fn layer(&self, l: usize) -> &[f64] {
        &self.reps[l * self.dim..(l + 1) * self.dim]
    }

    pub fn last_layer(&self) -> &[f64] {
        self.layer(self.layers() - 1)
    }
}

/// Layer traces for a batch of samples, stored on disk as one `count × (layers·dim)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTraceSet {
    layers: usize,
    matrix: EmbeddingSet,
}

impl LayerTraceSet {
    pub fn new(layers: usize, matrix: EmbeddingSet) -> Result<Self> {
        if layers == 0 || matrix.dim() % layers != 0 {
            return Err(GemError::validation(
                "layers",
                format!("{layers} layers do not divide row width {}", matrix.dim()),
            ));
        }
        Ok(LayerTraceSet { layers, matrix })
    }

    pub fn from_traces(traces: &[LayerTrace], label: Label) -> Result<Self> {
        let first = traces
            .first()
            .ok_or_else(|| GemError::validation("count", "must be at least 1"))?;
        let (layers, dim) = (first.layers(), first.dim());
        let mut data = Vec::with_capacity(traces.len() * layers * dim);
        for (i, t) in traces.iter().enumerate() {
            if t.layers() != layers || t.dim() != dim {
                return Err(GemError::Sample {
                    field: "layer trace",
                    index: i,
                    reason: format!(
                        "shape {}x{} differs from {layers}x{dim}",
                        t.layers(),
                        t.dim()
                    ),
                });
            }
            data.extend_from_slice(&t.reps);
        }
        let ids = (0..traces.len()).map(|i| i.to_string()).collect();
        let matrix =
            EmbeddingSet::new(layers * dim, data, vec![label; traces.len()], ids)?;
        LayerTraceSet::new(layers, matrix)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Width of a single layer's representation.
    pub fn dim(&self) -> usize {
        self.matrix.dim() / self.layers
    }

    pub fn count(&self) -> usize {
        self.matrix.count()
    }

    pub fn matrix(&self) -> &EmbeddingSet {
        &self.matrix
    }

    pub fn trace(&self, i: usize) -> LayerTrace {
        LayerTrace {
            dim: self.dim(),
            reps: self.matrix.row(i).to_vec(),
        }
    }

    pub fn traces(&self) -> Vec<LayerTrace> {
        (0..self.count()).map(|i| self.trace(i)).collect()
    }
}

/// Joint probabilities of `k` generated candidate sequences for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    seq_probs: Vec<f64>,
    token_probs: Option<Vec<Vec<f64>>>,
}

/// Relative tolerance between a stored joint probability and its token product.
pub const TOKEN_PRODUCT_RTOL: f64 = 1e-9;

impl CandidateSet {
    pub fn new(seq_probs: Vec<f64>) -> Result<Self> {
        if seq_probs.is_empty() {
            return Err(GemError::validation("candidates", "k must be at least 1"));
        }
        if let Some(j) = seq_probs
            .iter()
            .position(|p| !(p.is_finite() && *p > 0.0 && *p <= 1.0))
        {
            return Err(GemError::validation(
                "candidates",
                format!("P[{j}] = {} outside (0, 1]", seq_probs[j]),
            ));
        }
        Ok(CandidateSet {
            seq_probs,
            token_probs: None,
        })
    }

    /// Builds the set from per-token probabilities, taking each joint probability as their product.
    pub fn from_token_probs(token_probs: Vec<Vec<f64>>) -> Result<Self> {
        let seq = token_probs.iter().map(|t| t.iter().product()).collect();
        CandidateSet::new(seq)?.with_token_probs(token_probs)
    }

    /// Attaches per-token factors, checking that they multiply to the stored joint probabilities.
    pub fn with_token_probs(mut self, token_probs: Vec<Vec<f64>>) -> Result<Self> {
        if token_probs.len() != self.seq_probs.len() {
            return Err(GemError::validation(
                "token_probs",
                format!(
                    "{} token lists for {} candidates",
                    token_probs.len(),
                    self.seq_probs.len()
                ),
            ));
        }
        for (j, (tokens, &p)) in token_probs.iter().zip(&self.seq_probs).enumerate() {
            let product: f64 = tokens.iter().product();
            if (product - p).abs() > TOKEN_PRODUCT_RTOL * p.abs() {
                return Err(GemError::validation(
                    "token_probs",
                    format!("candidate {j}: token product {product} != P {p}"),
                ));
            }
        }
        self.token_probs = Some(token_probs);
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.seq_probs.len()
    }

    pub fn seq_probs(&self) -> &[f64] {
        &self.seq_probs
    }

    pub fn token_probs(&self) -> Option<&[Vec<f64>]> {
        self.token_probs.as_deref()
    }
}

/// Candidate sets for a batch of samples; every sample has the same `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBatch {
    pub sets: Vec<CandidateSet>,
    pub labels: Vec<Label>,
    pub sample_ids: Vec<String>,
}

impl CandidateBatch {
    pub fn new(sets: Vec<CandidateSet>, labels: Vec<Label>, sample_ids: Vec<String>) -> Result<Self> {
        let k = sets
            .first()
            .map(CandidateSet::k)
            .ok_or_else(|| GemError::validation("count", "must be at least 1"))?;
        if let Some(i) = sets.iter().position(|s| s.k() != k) {
            return Err(GemError::Sample {
                field: "candidates",
                index: i,
                reason: format!("k = {} differs from {k}", sets[i].k()),
            });
        }
        if labels.len() != sets.len() || sample_ids.len() != sets.len() {
            return Err(GemError::validation(
                "labels",
                "label/id count does not match sample count",
            ));
        }
        Ok(CandidateBatch {
            sets,
            labels,
            sample_ids,
        })
    }

    pub fn k(&self) -> usize {
        self.sets[0].k()
    }

    pub fn count(&self) -> usize {
        self.sets.len()
    }
}
