//! Univariate Gaussian mixtures over centroid distances: EM fitting,
//! BIC-driven choice of the component count, and per-component
//! n-sigma intervals that define the in-distribution region.

mod em;

use serde::{Deserialize, Serialize};

pub use em::{density, fit_em, fit_em_traced, log_likelihood, FitTrace, RestartTrace};

use crate::error::{GemError, Result};
use crate::Class;

/// Sigma multiplier used when none is given.
pub const DEFAULT_N_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// A fitted mixture, components ordered by ascending mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
    pub train_count: usize,
    pub log_likelihood: f64,
    pub bic: f64,
}

impl GmmModel {
    /// Assembles a model and fills in its BIC.
    pub fn new(components: Vec<GmmComponent>, train_count: usize, log_likelihood: f64) -> Self {
        let mut model = GmmModel {
            components,
            train_count,
            log_likelihood,
            bic: 0.0,
        };
        model.bic = bic_score(&model);
        model
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(GemError::validation("components", "need at least one"));
        }
        for (j, c) in self.components.iter().enumerate() {
            if !(c.std > 0.0 && c.std.is_finite()) || !c.mean.is_finite() {
                return Err(GemError::validation(
                    "components",
                    format!("component {j} has mean {} std {}", c.mean, c.std),
                ));
            }
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(GemError::validation(
                    "components",
                    format!("component {j} weight {} outside [0, 1]", c.weight),
                ));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GemError::validation(
                "components",
                format!("weights sum to {total}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_components: usize,
    pub max_iters: usize,
    /// Stop when the relative log-likelihood gain of an iteration falls below this.
    pub rel_tol: f64,
    /// Component variances are floored at this fraction of the sample variance.
    pub variance_floor_scale: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_components: 15,
            max_iters: 500,
            rel_tol: 1e-8,
            variance_floor_scale: 1e-8,
            restarts: 5,
            seed: 42,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_components == 0 {
            return Err(GemError::validation("max_components", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(GemError::validation("max_iters", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(GemError::validation("restarts", "must be at least 1"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(GemError::validation("rel_tol", "must be positive"));
        }
        if !(self.variance_floor_scale > 0.0 && self.variance_floor_scale.is_finite()) {
            return Err(GemError::validation(
                "variance_floor_scale",
                "must be positive",
            ));
        }
        Ok(())
    }
}

/// `−2·log L + m·ln k`: the penalty counts components, not free parameters.
pub fn bic_score(model: &GmmModel) -> f64 {
    -2.0 * model.log_likelihood + model.n_components() as f64 * (model.train_count as f64).ln()
}

/// Fits for every component count in `1..=max_components` (capped at the sample count).
#[derive(Debug, Clone, PartialEq)]
pub struct BicSweep {
    pub models: Vec<GmmModel>,
}

impl BicSweep {
    pub fn run(distances: &[f64], cfg: &FitConfig) -> Result<Self> {
        cfg.validate()?;
        em::validate_distances(distances)?;
        let upper = cfg.max_components.min(distances.len());
        let models = (1..=upper)
            .map(|m| fit_em(distances, m, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(BicSweep { models })
    }

    /// BIC minimiser among the first `max_components` fits; ties go to fewer components.
    pub fn best_up_to(&self, max_components: usize) -> &GmmModel {
        let n = max_components.clamp(1, self.models.len());
        let mut best = &self.models[0];
        for model in &self.models[1..n] {
            if model.bic < best.bic {
                best = model;
            }
        }
        best
    }

    pub fn best(&self) -> &GmmModel {
        self.best_up_to(self.models.len())
    }
}

/// Fits every feasible component count and returns the BIC minimiser.
pub fn select_model(distances: &[f64], cfg: &FitConfig) -> Result<GmmModel> {
    Ok(BicSweep::run(distances, cfg)?.best().clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Closed `[μ_j − nσ_j, μ_j + nσ_j]` per component, deliberately left unmerged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdIntervals {
    pub intervals: Vec<Interval>,
    pub sigma_multiplier: f64,
}

impl IdIntervals {
    pub fn contains(&self, d: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(d))
    }
}

pub fn validate_n_sigma(n_sigma: f64) -> Result<()> {
    if n_sigma >= 0.0 && n_sigma.is_finite() {
        Ok(())
    } else {
        Err(GemError::validation(
            "n_sigma",
            format!("{n_sigma} must be a finite non-negative number"),
        ))
    }
}

pub fn id_intervals(model: &GmmModel, n_sigma: f64) -> Result<IdIntervals> {
    validate_n_sigma(n_sigma)?;
    Ok(IdIntervals {
        intervals: model
            .components
            .iter()
            .map(|c| Interval {
                lower: c.mean - n_sigma * c.std,
                upper: c.mean + n_sigma * c.std,
            })
            .collect(),
        sigma_multiplier: n_sigma,
    })
}

/// In-distribution iff `d` lies in at least one interval (boundaries included).
pub fn classify_distance(d: f64, intervals: &IdIntervals) -> Class {
    if intervals.contains(d) {
        Class::Id
    } else {
        Class::Ood
    }
}

/// Index and value of the smallest `|d − μ_j| / σ_j`.
pub fn nearest_component(d: f64, model: &GmmModel) -> (usize, f64) {
    model
        .components
        .iter()
        .map(|c| (d - c.mean).abs() / c.std)
        .enumerate()
        .fold((0, f64::INFINITY), |best, (j, z)| if z < best.1 { (j, z) } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one(mean: f64, std: f64) -> GmmModel {
        GmmModel::new(vec![GmmComponent { weight: 1.0, mean, std }], 1, 0.0)
    }

    #[test]
    fn bic_plug_in() {
        let model = GmmModel {
            components: vec![GmmComponent { weight: 1.0 / 3.0, mean: 0.0, std: 1.0 }; 3],
            train_count: 100,
            log_likelihood: 0.0,
            bic: 0.0,
        };
        assert_relative_eq!(bic_score(&model), 3.0 * 100f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(bic_score(&model), 13.815_510_557_964_274, epsilon = 1e-9);
    }

    #[test]
    fn bic_penalty_strictly_increases_with_m() {
        let mut last = f64::NEG_INFINITY;
        for m in 1..=15 {
            let model = GmmModel {
                components: vec![GmmComponent { weight: 1.0 / m as f64, mean: 0.0, std: 1.0 }; m],
                train_count: 500,
                log_likelihood: -1234.5,
                bic: 0.0,
            };
            let bic = bic_score(&model);
            assert!(bic > last);
            last = bic;
        }
    }

    #[test]
    fn standard_normal_peak() {
        let ll = log_likelihood(&[5.0], &one(5.0, 1.0)).unwrap();
        assert_relative_eq!(ll, -0.918_938_533_204_672_8, epsilon = 1e-12);
        let ll2 = log_likelihood(&[5.0, 5.0], &one(5.0, 1.0)).unwrap();
        assert_eq!(ll2, 2.0 * ll);
    }

    #[test]
    fn interval_plug_in() {
        let iv = id_intervals(&one(20.0, 2.0), 3.0).unwrap();
        assert_eq!(iv.intervals, vec![Interval { lower: 14.0, upper: 26.0 }]);
        let zero = id_intervals(&one(20.0, 2.0), 0.0).unwrap();
        assert_eq!(zero.intervals, vec![Interval { lower: 20.0, upper: 20.0 }]);
        assert!(id_intervals(&one(20.0, 2.0), -1.0).is_err());
        assert!(id_intervals(&one(20.0, 2.0), f64::NAN).is_err());
    }

    #[test]
    fn overlapping_intervals_kept_separate() {
        let model = GmmModel::new(
            vec![
                GmmComponent { weight: 0.5, mean: 0.0, std: 1.0 },
                GmmComponent { weight: 0.5, mean: 4.0, std: 1.0 },
            ],
            10,
            0.0,
        );
        let iv = id_intervals(&model, 3.0).unwrap();
        assert_eq!(
            iv.intervals,
            vec![Interval { lower: -3.0, upper: 3.0 }, Interval { lower: 1.0, upper: 7.0 }]
        );
    }

    #[test]
    fn closed_boundaries() {
        let model = one(20.0, 2.0);
        let iv = id_intervals(&model, 3.0).unwrap();
        assert_eq!(classify_distance(20.0, &iv), Class::Id);
        assert_eq!(classify_distance(26.0, &iv), Class::Id);
        assert_eq!(classify_distance(14.0, &iv), Class::Id);
        assert_eq!(classify_distance(26.000_001, &iv), Class::Ood);
        assert_eq!(classify_distance(-1.0, &iv), Class::Ood);
    }

    #[test]
    fn config_rejects_zeroes() {
        let bad = FitConfig { max_components: 0, ..FitConfig::default() };
        assert!(bad.validate().is_err());
        let bad = FitConfig { restarts: 0, ..FitConfig::default() };
        assert!(bad.validate().is_err());
        let bad = FitConfig { rel_tol: 0.0, ..FitConfig::default() };
        assert!(bad.validate().is_err());
    }
}
