//! Brute-force references. Nothing here shares code with the fitting
//! or metric routines it checks.

use serde::{Deserialize, Serialize};

use crate::{Result, SynthError};

/// Resolution of the likelihood grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Candidate means, evenly spaced over the data range.
    pub mean_points: usize,
    /// Candidate standard deviations, log-spaced.
    pub std_points: usize,
    /// Smallest / largest candidate std as a fraction of the data range.
    pub std_min_fraction: f64,
    pub std_max_fraction: f64,
    /// Coarse cells carried into refinement.
    pub refine_candidates: usize,
    /// The final grid is too coarse if any neighbouring cell differs by more than this.
    pub max_neighbor_gap: f64,
    /// Refinement gives up once every step is below this.
    pub min_step: f64,
    /// Relative variance floor, matching the fitting contract.
    pub variance_floor_scale: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            mean_points: 24,
            std_points: 8,
            std_min_fraction: 0.005,
            std_max_fraction: 0.5,
            refine_candidates: 4,
            max_neighbor_gap: 0.1,
            min_step: 1e-10,
            variance_floor_scale: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub log_likelihood: f64,
    /// `(weight, mean, std)` per component.
    pub components: Vec<(f64, f64, f64)>,
    pub evaluations: usize,
}

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

/// Parameter point: means, log-stds, and unnormalised log-weights (last fixed at 0).
#[derive(Debug, Clone, PartialEq)]
struct Point {
    mean: Vec<f64>,
    log_std: Vec<f64>,
    log_w: Vec<f64>,
}

impl Point {
    fn coords(&self) -> usize {
        self.mean.len() * 2 + self.log_w.len() - 1
    }

    fn get(&self, c: usize) -> f64 {
        let m = self.mean.len();
        if c < m {
            self.mean[c]
        } else if c < 2 * m {
            self.log_std[c - m]
        } else {
            self.log_w[c - 2 * m]
        }
    }

    fn set(&mut self, c: usize, v: f64) {
        let m = self.mean.len();
        if c < m {
            self.mean[c] = v;
        } else if c < 2 * m {
            self.log_std[c - m] = v;
        } else {
            self.log_w[c - 2 * m] = v;
        }
    }

    fn weights(&self) -> Vec<f64> {
        let top = self.log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = self.log_w.iter().map(|w| (w - top).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|r| r / total).collect()
    }
}

fn log_likelihood(data: &[f64], p: &Point) -> f64 {
    let weights = p.weights();
    let offsets: Vec<f64> = (0..p.mean.len())
        .map(|j| weights[j].ln() - p.log_std[j] - HALF_LN_TAU)
        .collect();
    let inv_std: Vec<f64> = p.log_std.iter().map(|s| (-s).exp()).collect();
    let mut terms = vec![0.0; p.mean.len()];
    data.iter()
        .map(|&x| {
            for j in 0..terms.len() {
                let z = (x - p.mean[j]) * inv_std[j];
                terms[j] = offsets[j] - 0.5 * z * z;
            }
            let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
        })
        .sum()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for t in i..k {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

/// Best log-likelihood reachable by exhaustive coarse grid search over
/// ordered means and a shared std, followed by compass-search refinement
/// on the full parameter grid with step halving.
///
/// Refinement stops once no neighbouring cell improves and every neighbour
/// is within `max_neighbor_gap`; if the steps shrink below `min_step` first,
/// the grid is reported as too coarse.
pub fn grid_likelihood_oracle(data: &[f64], m: usize, grid: &GridSpec) -> Result<GridOptimum> {
    if !(1..=3).contains(&m) {
        return Err(SynthError::Oracle(format!("m = {m} outside 1..=3")));
    }
    if data.is_empty() || data.len() > 5000 {
        return Err(SynthError::Oracle(format!("{} samples outside 1..=5000", data.len())));
    }
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let floor_var = if var > 0.0 { grid.variance_floor_scale * var } else { 1e-12 };
    let min_log_std = 0.5 * floor_var.ln();
    let range = hi - lo;

    let mean_grid: Vec<f64> = if range > 0.0 {
        (0..grid.mean_points)
            .map(|i| lo + range * i as f64 / (grid.mean_points - 1) as f64)
            .collect()
    } else {
        vec![lo]
    };
    let log_std_grid: Vec<f64> = if range > 0.0 {
        let (a, b) = (
            (grid.std_min_fraction * range).ln(),
            (grid.std_max_fraction * range).ln(),
        );
        (0..grid.std_points)
            .map(|i| (a + (b - a) * i as f64 / (grid.std_points - 1) as f64).max(min_log_std))
            .collect()
    } else {
        vec![min_log_std]
    };

    let mut evaluations = 0;
    let mut coarse: Vec<(f64, Point)> = Vec::new();
    let mean_sets = if mean_grid.len() >= m {
        combinations(mean_grid.len(), m)
    } else {
        vec![vec![0; m]]
    };
    for idx in &mean_sets {
        for &ls in &log_std_grid {
            let p = Point {
                mean: idx.iter().map(|&i| mean_grid[i]).collect(),
                log_std: vec![ls; m],
                log_w: vec![0.0; m],
            };
            let ll = log_likelihood(data, &p);
            evaluations += 1;
            coarse.push((ll, p));
        }
    }
    coarse.sort_by(|a, b| b.0.total_cmp(&a.0));
    coarse.truncate(grid.refine_candidates.max(1));

    let mean_step = if mean_grid.len() > 1 { mean_grid[1] - mean_grid[0] } else { 0.0 };
    let std_step = if log_std_grid.len() > 1 { log_std_grid[1] - log_std_grid[0] } else { 0.0 };

    let mut best: Option<(f64, Point)> = None;
    for (start_ll, start) in coarse {
        let coords = start.coords();
        let mut steps: Vec<f64> = (0..coords)
            .map(|c| {
                if c < m {
                    mean_step
                } else if c < 2 * m {
                    std_step
                } else {
                    0.5
                }
            })
            .collect();
        let (mut ll, mut p) = (start_ll, start);
        loop {
            let mut improved = false;
            let mut max_gap: f64 = 0.0;
            for c in 0..coords {
                if steps[c] == 0.0 {
                    continue;
                }
                for dir in [1.0, -1.0] {
                    let mut q = p.clone();
                    let v = q.get(c) + dir * steps[c];
                    if c >= m && c < 2 * m && v < min_log_std {
                        continue;
                    }
                    q.set(c, v);
                    let qll = log_likelihood(data, &q);
                    evaluations += 1;
                    max_gap = max_gap.max((qll - ll).abs());
                    if qll > ll {
                        ll = qll;
                        p = q;
                        improved = true;
                    }
                }
            }
            if improved {
                continue;
            }
            if max_gap <= grid.max_neighbor_gap {
                break;
            }
            if steps.iter().all(|s| *s < grid.min_step) {
                return Err(SynthError::GridTooCoarse { gap: max_gap });
            }
            steps.iter_mut().for_each(|s| *s *= 0.5);
        }
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, p));
        }
    }

    let (ll, p) = best.expect("at least one coarse cell");
    let weights = p.weights();
    let mut components: Vec<(f64, f64, f64)> = (0..m)
        .map(|j| (weights[j], p.mean[j], p.log_std[j].exp()))
        .collect();
    components.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(GridOptimum {
        log_likelihood: ll,
        components,
        evaluations,
    })
}

/// `(#{ood > id} + ½·#{ood = id}) / (|id|·|ood|)` by direct pair enumeration.
pub fn mann_whitney_auroc(id_scores: &[f64], ood_scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &o in ood_scores {
        for &i in id_scores {
            if o > i {
                wins += 1.0;
            } else if o == i {
                wins += 0.5;
            }
        }
    }
    wins / (id_scores.len() as f64 * ood_scores.len() as f64)
}

/// Coordinate-wise mean with compensated summation.
pub fn naive_centroid(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows[0].len();
    (0..dim)
        .map(|c| {
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for r in rows {
                let y = r[c] - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            sum / rows.len() as f64
        })
        .collect()
}

/// Two-pass unbiased covariance, element by element, row-major.
pub fn naive_covariance(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n)
        .collect();
    let mut out = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in 0..dim {
            out[a * dim + b] = rows
                .iter()
                .map(|r| (r[a] - mean[a]) * (r[b] - mean[b]))
                .sum::<f64>()
                / (n - 1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(5, 2).len(), 10);
        assert_eq!(combinations(24, 3).len(), 2024);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn mann_whitney_cases() {
        assert_eq!(mann_whitney_auroc(&[0.1, 0.2], &[0.5, 0.6]), 1.0);
        assert_eq!(mann_whitney_auroc(&[0.3, 0.3], &[0.3]), 0.5);
        let v = mann_whitney_auroc(&[0.1, 0.35, 0.4, 0.8], &[0.5, 0.7, 0.9]);
        assert!((v - 10.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn single_component_recovers_moments() {
        let data: Vec<f64> = (0..400).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let spec = GridSpec::default();
        let opt = grid_likelihood_oracle(&data, 1, &spec).unwrap();
        let (_, mu, sd) = opt.components[0];
        let cell = (data.iter().copied().fold(f64::MIN, f64::max)
            - data.iter().copied().fold(f64::MAX, f64::min))
            / (spec.mean_points - 1) as f64;
        assert!((mu - mean).abs() <= cell, "{mu} vs {mean}");
        assert!((sd / var.sqrt()).ln().abs() < 0.1, "{sd} vs {}", var.sqrt());
        let analytic = -0.5 * n * (1.0 + (std::f64::consts::TAU * var).ln());
        assert!(opt.log_likelihood <= analytic + 1e-9);
        assert!(analytic - opt.log_likelihood < 0.1);
    }

    #[test]
    fn constant_data_takes_floor_cell() {
        let data = vec![5.0; 50];
        let opt = grid_likelihood_oracle(&data, 1, &GridSpec::default()).unwrap();
        assert_eq!(opt.components[0].1, 5.0);
        assert!((opt.components[0].2 - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range_inputs() {
        assert!(grid_likelihood_oracle(&[1.0, 2.0], 4, &GridSpec::default()).is_err());
        assert!(grid_likelihood_oracle(&vec![1.0; 5001], 1, &GridSpec::default()).is_err());
    }
}
