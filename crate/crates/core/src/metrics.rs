//! ROC curves, AUROC, FPR at a target TPR, and confusion metrics.
//!
//! OOD is the positive class everywhere, and a sample is flagged when its
//! score is at or above the threshold.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::Class;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    /// Higher means more likely OOD.
    pub score: f64,
    pub truth: Class,
}

impl ScoredSample {
    pub fn new(score: f64, truth: Class) -> Self {
        ScoredSample { score, truth }
    }
}

/// Labels `id_scores` as ID and `ood_scores` as OOD.
pub fn scored(id_scores: &[f64], ood_scores: &[f64]) -> Vec<ScoredSample> {
    id_scores
        .iter()
        .map(|&s| ScoredSample::new(s, Class::Id))
        .chain(ood_scores.iter().map(|&s| ScoredSample::new(s, Class::Ood)))
        .collect()
}

pub(crate) fn class_counts(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    if let Some(i) = samples.iter().position(|s| !s.score.is_finite()) {
        return Err(GemError::Sample {
            field: "score",
            index: i,
            reason: format!("non-finite score {}", samples[i].score),
        });
    }
    let ood = samples.iter().filter(|s| s.truth == Class::Ood).count();
    let id = samples.len() - ood;
    if id == 0 || ood == 0 {
        return Err(GemError::OneClass { id, ood });
    }
    Ok((id, ood))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from `(0, 0)` at threshold +∞ to `(1, 1)` at −∞, with one
/// point per distinct score in between.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

pub fn roc_curve(samples: &[ScoredSample]) -> Result<RocCurve> {
    let (n_id, n_ood) = class_counts(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = Vec::with_capacity(sorted.len() + 2);
    points.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    for group in sorted.chunk_by(|a, b| a.score == b.score) {
        for s in group {
            match s.truth {
                Class::Ood => tp += 1,
                Class::Id => fp += 1,
            }
        }
        points.push(RocPoint {
            threshold: group[0].score,
            fpr: fp as f64 / n_id as f64,
            tpr: tp as f64 / n_ood as f64,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(RocCurve { points })
}

impl RocCurve {
    /// Trapezoidal area.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
            .sum()
    }

    /// `threshold,fpr,tpr` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", fmt_threshold(p.threshold), p.fpr, p.tpr));
        }
        out
    }
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        t.to_string()
    }
}

pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    Ok(roc_curve(samples)?.area())
}

/// Smallest FPR over thresholds whose TPR reaches `target_tpr`.
pub fn fpr_at_tpr(samples: &[ScoredSample], target_tpr: f64) -> Result<f64> {
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(GemError::validation(
            "target_tpr",
            format!("{target_tpr} outside (0, 1]"),
        ));
    }
    let curve = roc_curve(samples)?;
    Ok(curve
        .points
        .iter()
        .find(|p| p.tpr >= target_tpr)
        .map_or(1.0, |p| p.fpr))
}

pub fn fpr95(samples: &[ScoredSample]) -> Result<f64> {
    fpr_at_tpr(samples, 0.95)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Accuracy, precision, recall and F1 with OOD as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Counts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Nothing was flagged OOD; precision reported as 0 by convention.
    pub precision_undefined: bool,
    /// No true OOD samples; recall reported as 0 by convention.
    pub recall_undefined: bool,
}

/// Tallies `(flagged_ood, truth)` pairs.
pub fn confusion_at_boundary(verdicts: &[(bool, Class)]) -> Result<Confusion> {
    if verdicts.is_empty() {
        return Err(GemError::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let mut c = Counts::default();
    for &(flagged, truth) in verdicts {
        match (flagged, truth) {
            (true, Class::Ood) => c.tp += 1,
            (true, Class::Id) => c.fp += 1,
            (false, Class::Id) => c.tn += 1,
            (false, Class::Ood) => c.fn_ += 1,
        }
    }
    Ok(Confusion::from_counts(c))
}

impl Confusion {
    pub fn from_counts(c: Counts) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Confusion {
            counts: c,
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            precision_undefined: c.tp + c.fp == 0,
            recall_undefined: c.tp + c.fn_ == 0,
        }
    }
}

/// Threshold-free and boundary metrics for one detector on one ID/OOD split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub auroc: f64,
    pub fpr95: f64,
    #[serde(flatten)]
    pub confusion: Confusion,
    /// Youden threshold for score-based methods; absent for sigma boundaries.
    pub threshold: Option<f64>,
    pub n_sigma: Option<f64>,
    pub id_count: usize,
    pub ood_count: usize,
}

impl EvalReport {
    /// Builds the report from scores plus the boolean flags a detector raised on the same samples.
    pub fn from_scores(
        method: impl Into<String>,
        samples: &[ScoredSample],
        flagged: &[bool],
    ) -> Result<Self> {
        let (id_count, ood_count) = class_counts(samples)?;
        if flagged.len() != samples.len() {
            return Err(GemError::validation(
                "flags",
                format!("{} flags for {} samples", flagged.len(), samples.len()),
            ));
        }
        let curve = roc_curve(samples)?;
        let pairs: Vec<(bool, Class)> = flagged
            .iter()
            .zip(samples)
            .map(|(&f, s)| (f, s.truth))
            .collect();
        Ok(EvalReport {
            method: method.into(),
            auroc: curve.area(),
            fpr95: curve
                .points
                .iter()
                .find(|p| p.tpr >= 0.95)
                .map_or(1.0, |p| p.fpr),
            confusion: confusion_at_boundary(&pairs)?,
            threshold: None,
            n_sigma: None,
            id_count,
            ood_count,
        })
    }

    pub const TABLE_HEADER: &'static str =
        "Method        AUROC(%)  FPR95(%)  Acc.(%)  Prec.(%)  Rec.(%)  F1(%)     TP     FP     TN     FN";

    pub fn table_row(&self) -> String {
        let c = &self.confusion;
        format!(
            "{:<12} {:>9.2} {:>9.2} {:>8.2} {:>9.2} {:>8.2} {:>6.2} {:>6} {:>6} {:>6} {:>6}",
            self.method,
            100.0 * self.auroc,
            100.0 * self.fpr95,
            100.0 * c.accuracy,
            100.0 * c.precision,
            100.0 * c.recall,
            100.0 * c.f1,
            c.counts.tp,
            c.counts.fp,
            c.counts.tn,
            c.counts.fn_,
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", Self::TABLE_HEADER)?;
        writeln!(f, "{}", self.table_row())?;
        write!(f, "ID samples: {}  OOD samples: {}", self.id_count, self.ood_count)?;
        match (self.threshold, self.n_sigma) {
            (Some(t), _) => write!(f, "  threshold (Youden): {t}")?,
            (None, Some(n)) => write!(f, "  boundary: {n} sigma")?,
            _ => {}
        }
        if self.confusion.precision_undefined {
            write!(f, "\nnote: nothing flagged OOD, precision reported as 0")?;
        }
        Ok(())
    }
}
