use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::{Result, SynthError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixturePart {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixturePart>,
    pub count: usize,
    pub seed: u64,
}

impl MixtureSpec {
    /// `(weight, mean, std)` triples.
    pub fn new(components: &[(f64, f64, f64)], count: usize, seed: u64) -> Self {
        MixtureSpec {
            components: components
                .iter()
                .map(|&(weight, mean, std)| MixturePart { weight, mean, std })
                .collect(),
            count,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(SynthError::Spec("no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SynthError::Spec(format!("weights sum to {total}")));
        }
        for (j, c) in self.components.iter().enumerate() {
            if !(c.std > 0.0 && c.std.is_finite()) {
                return Err(SynthError::Spec(format!("component {j} std {} must be > 0", c.std)));
            }
            if !(c.weight >= 0.0) || !c.mean.is_finite() {
                return Err(SynthError::Spec(format!("component {j} is malformed")));
            }
        }
        Ok(())
    }
}

/// Draws `(component index, value)` pairs: one uniform picks the component
/// by cumulative weight, then one normal deviate (two uniforms) follows.
pub fn sample_mixture_labeled(spec: &MixtureSpec) -> Result<Vec<(usize, f64)>> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let last = spec.components.len() - 1;
    Ok((0..spec.count)
        .map(|_| {
            let u = rng.next_f64();
            let mut acc = 0.0;
            let j = spec
                .components
                .iter()
                .position(|c| {
                    acc += c.weight;
                    u < acc
                })
                .unwrap_or(last);
            let c = spec.components[j];
            (j, rng.normal(c.mean, c.std))
        })
        .collect())
}

pub fn sample_mixture(spec: &MixtureSpec) -> Result<Vec<f64>> {
    Ok(sample_mixture_labeled(spec)?
        .into_iter()
        .map(|(_, x)| x)
        .collect())
}

/// `count` points from an isotropic Gaussian around `center`.
pub fn gaussian_cluster(center: &[f64], std: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| center.iter().map(|&c| rng.normal(c, std)).collect())
        .collect()
}
