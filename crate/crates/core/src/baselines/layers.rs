//! Layer-trace baselines: trajectory volatility (TV) over per-layer
//! Gaussians, last-layer distance, and best-layer distance.

use nalgebra::{DMatrix, DVector};

use crate::data::LayerTrace;
use crate::detector::euclidean;
use crate::error::{GemError, Result};
use crate::metrics::{auroc, scored};

/// Ridge added when a covariance has zero trace.
const ABSOLUTE_RIDGE: f64 = 1e-12;

pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// Per-layer Gaussians `N(μ_l, Σ_l)` fitted to ID traces; covariances already regularised.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGaussians {
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    lambda: f64,
}

fn check_shapes(traces: &[LayerTrace]) -> Result<(usize, usize)> {
    let first = traces
        .first()
        .ok_or(GemError::InsufficientData { needed: 1, available: 0 })?;
    let shape = (first.layers(), first.dim());
    if let Some(i) = traces.iter().position(|t| (t.layers(), t.dim()) != shape) {
        return Err(GemError::Sample {
            field: "layer trace",
            index: i,
            reason: format!(
                "shape {}x{} differs from {}x{}",
                traces[i].layers(),
                traces[i].dim(),
                shape.0,
                shape.1
            ),
        });
    }
    Ok(shape)
}

/// Unbiased (`n − 1`) sample covariance of `rows`.
pub fn sample_covariance(rows: &[&[f64]]) -> DMatrix<f64> {
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(dim);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for r in rows {
        let dev = DVector::from_column_slice(r) - &mean;
        cov.ger(1.0, &dev, &dev, 1.0);
    }
    cov / (n - 1.0)
}

/// `Σ + max(λ·tr(Σ)/dim, 1e-12)·I`.
pub fn regularize(cov: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let dim = cov.nrows();
    let ridge = (lambda * cov.trace() / dim as f64).max(ABSOLUTE_RIDGE);
    cov + DMatrix::identity(dim, dim) * ridge
}

/// Square-root-free `Σ = L·D·Lᵀ` with unit lower `L`; keeps diagonal cases exact.
#[derive(Debug, Clone)]
struct LdlFactor {
    lower: DMatrix<f64>,
    diag: Vec<f64>,
}

impl LdlFactor {
    fn new(cov: &DMatrix<f64>, layer: usize) -> Result<Self> {
        let n = cov.nrows();
        let mut lower = DMatrix::identity(n, n);
        let mut diag = vec![0.0; n];
        for j in 0..n {
            let mut d = cov[(j, j)];
            for k in 0..j {
                d -= lower[(j, k)] * lower[(j, k)] * diag[k];
            }
            if !(d > 0.0 && d.is_finite()) {
                return Err(GemError::NotPositiveDefinite { layer });
            }
            diag[j] = d;
            for i in j + 1..n {
                let mut v = cov[(i, j)];
                for k in 0..j {
                    v -= lower[(i, k)] * lower[(j, k)] * diag[k];
                }
                lower[(i, j)] = v / d;
            }
        }
        Ok(LdlFactor { lower, diag })
    }

    /// `xᵀ Σ⁻¹ x`.
    fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        let n = x.len();
        let mut z = x.clone();
        let mut total = 0.0;
        for i in 0..n {
            let mut v = z[i];
            for k in 0..i {
                v -= self.lower[(i, k)] * z[k];
            }
            z[i] = v;
            total += v * v / self.diag[i];
        }
        total
    }
}

pub fn fit_layer_gaussians(id_traces: &[LayerTrace], lambda: f64) -> Result<LayerGaussians> {
    if id_traces.len() < 2 {
        return Err(GemError::InsufficientData {
            needed: 2,
            available: id_traces.len(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(GemError::validation("lambda", "must be finite and non-negative"));
    }
    let (layers, _) = check_shapes(id_traces)?;
    let mut means = Vec::with_capacity(layers);
    let mut covariances = Vec::with_capacity(layers);
    for l in 0..layers {
        let rows: Vec<&[f64]> = id_traces.iter().map(|t| t.layer(l)).collect();
        means.push(layer_mean(&rows));
        covariances.push(regularize(&sample_covariance(&rows), lambda));
    }
    LayerGaussians::from_parts(means, covariances, lambda)
}

fn layer_mean(rows: &[&[f64]]) -> DVector<f64> {
    let mut mean = DVector::zeros(rows[0].len());
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean / rows.len() as f64
}

impl LayerGaussians {
    /// Takes means and covariances as given; the covariances must already be positive definite.
    pub fn from_parts(
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        lambda: f64,
    ) -> Result<Self> {
        if means.is_empty() || means.len() != covariances.len() {
            return Err(GemError::validation(
                "layer gaussians",
                format!("{} means for {} covariances", means.len(), covariances.len()),
            ));
        }
        let dim = means[0].len();
        for (l, (m, c)) in means.iter().zip(&covariances).enumerate() {
            if m.len() != dim || c.shape() != (dim, dim) {
                return Err(GemError::validation(
                    "layer gaussians",
                    format!("layer {l} shape disagrees with dim {dim}"),
                ));
            }
            LdlFactor::new(c, l)?;
        }
        Ok(LayerGaussians {
            means,
            covariances,
            lambda,
        })
    }

    pub fn layers(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mean(&self, l: usize) -> &DVector<f64> {
        &self.means[l]
    }

    pub fn covariance(&self, l: usize) -> &DMatrix<f64> {
        &self.covariances[l]
    }
}

/// `(y − μ)ᵀ Σ⁻¹ (y − μ)` through an LDLᵀ solve.
pub fn mahalanobis(y: &DVector<f64>, mu: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if y.len() != mu.len() || cov.shape() != (mu.len(), mu.len()) {
        return Err(GemError::DimensionMismatch {
            expected: mu.len(),
            found: y.len(),
        });
    }
    Ok(LdlFactor::new(cov, 0)?.quadratic_form(&(y - mu)))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

/// Signed binomial weights `(−1)^{i+t}·C(i, t)` for `t = 0..=i`.
fn difference_weights(order: usize) -> Vec<f64> {
    (0..=order)
        .map(|t| {
            let sign = if (order + t) % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(order, t)
        })
        .collect()
}

/// Order-`order` differenced Gaussian starting at 0-based layer `start`:
/// means take signed binomial weights, covariances unsigned ones.
pub fn diff_gaussian_params(
    g: &LayerGaussians,
    order: usize,
    start: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if start + order >= g.layers() {
        return Err(GemError::validation(
            "order",
            format!(
                "layer {start} + order {order} exceeds the last layer index {}",
                g.layers() - 1
            ),
        ));
    }
    let weights = difference_weights(order);
    let mut mu = DVector::zeros(g.dim());
    let mut cov = DMatrix::zeros(g.dim(), g.dim());
    for (t, w) in weights.iter().enumerate() {
        mu += &g.means[start + t] * *w;
        cov += &g.covariances[start + t] * binomial(order, t);
    }
    Ok((mu, cov))
}

/// Order-`order` difference of a trace's representations at 0-based layer `start`.
pub fn diff_representation(trace: &LayerTrace, order: usize, start: usize) -> DVector<f64> {
    let mut y = DVector::zeros(trace.dim());
    for (t, w) in difference_weights(order).iter().enumerate() {
        y += DVector::from_column_slice(trace.layer(start + t)) * *w;
    }
    y
}

/// TV scorer with the differenced Gaussians and their factorisations precomputed.
#[derive(Debug, Clone)]
pub struct TvScorer {
    order: usize,
    layers: usize,
    dim: usize,
    positions: Vec<(DVector<f64>, LdlFactor)>,
}

impl TvScorer {
    pub fn new(g: &LayerGaussians, order: usize) -> Result<Self> {
        if order >= g.layers() {
            return Err(GemError::validation(
                "tv order",
                format!("order {order} needs more than {} layers", g.layers()),
            ));
        }
        let positions = (0..g.layers() - order)
            .map(|l| {
                let (mu, cov) = diff_gaussian_params(g, order, l)?;
                Ok((mu, LdlFactor::new(&cov, l)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TvScorer {
            order,
            layers: g.layers(),
            dim: g.dim(),
            positions,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Mean differenced Mahalanobis distance over the `L − order` valid positions.
    pub fn score(&self, test: &LayerTrace) -> Result<f64> {
        if test.layers() != self.layers || test.dim() != self.dim {
            return Err(GemError::validation(
                "layer trace",
                format!(
                    "shape {}x{} differs from fitted {}x{}",
                    test.layers(),
                    test.dim(),
                    self.layers,
                    self.dim
                ),
            ));
        }
        let total: f64 = self
            .positions
            .iter()
            .enumerate()
            .map(|(l, (mu, factor))| {
                factor.quadratic_form(&(diff_representation(test, self.order, l) - mu))
            })
            .sum();
        Ok(total / self.positions.len() as f64)
    }
}

pub fn tv_score(test: &LayerTrace, g: &LayerGaussians, order: usize) -> Result<f64> {
    TvScorer::new(g, order)?.score(test)
}

/// Per-layer means of ID traces, the reference for last- and best-layer distances.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMeans {
    means: Vec<Vec<f64>>,
}

impl LayerMeans {
    pub fn fit(id_traces: &[LayerTrace]) -> Result<Self> {
        let (layers, _) = check_shapes(id_traces)?;
        let means = (0..layers)
            .map(|l| {
                let rows: Vec<&[f64]> = id_traces.iter().map(|t| t.layer(l)).collect();
                layer_mean(&rows).as_slice().to_vec()
            })
            .collect();
        Ok(LayerMeans { means })
    }

    pub fn layers(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, l: usize) -> &[f64] {
        &self.means[l]
    }

    /// Euclidean distance from the trace's layer `l` to the ID mean of that layer.
    pub fn distance(&self, test: &LayerTrace, l: usize) -> Result<f64> {
        if test.layers() != self.layers() || test.dim() != self.means[0].len() {
            return Err(GemError::DimensionMismatch {
                expected: self.layers() * self.means[0].len(),
                found: test.layers() * test.dim(),
            });
        }
        Ok(euclidean(test.layer(l), &self.means[l]))
    }
}

/// `‖y_L − mean of ID final layers‖₂`.
pub fn last_layer_score(test: &LayerTrace, id_traces: &[LayerTrace]) -> Result<f64> {
    let means = LayerMeans::fit(id_traces)?;
    means.distance(test, means.layers() - 1)
}

/// 0-based layer whose distance score has the highest AUROC on the
/// validation split; ties go to the shallowest layer.
pub fn select_best_layer(
    reference: &LayerMeans,
    id_val: &[LayerTrace],
    ood_val: &[LayerTrace],
) -> Result<usize> {
    if id_val.is_empty() || ood_val.is_empty() {
        return Err(GemError::OneClass {
            id: id_val.len(),
            ood: ood_val.len(),
        });
    }
    let mut best = (0, f64::NEG_INFINITY);
    for l in 0..reference.layers() {
        let id_scores = id_val
            .iter()
            .map(|t| reference.distance(t, l))
            .collect::<Result<Vec<_>>>()?;
        let ood_scores = ood_val
            .iter()
            .map(|t| reference.distance(t, l))
            .collect::<Result<Vec<_>>>()?;
        let area = auroc(&scored(&id_scores, &ood_scores))?;
        if area > best.1 {
            best = (l, area);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_gaussians(means: &[f64], vars: &[f64]) -> LayerGaussians {
        LayerGaussians::from_parts(
            means.iter().map(|m| DVector::from_element(1, *m)).collect(),
            vars.iter().map(|v| DMatrix::from_element(1, 1, *v)).collect(),
            0.0,
        )
        .unwrap()
    }

    fn trace1(values: &[f64]) -> LayerTrace {
        LayerTrace::new(1, values.to_vec()).unwrap()
    }

    #[test]
    fn two_point_covariance() {
        let cov = sample_covariance(&[&[0.0], &[2.0]]);
        assert_eq!(cov[(0, 0)], 2.0);
        let g = fit_layer_gaussians(&[trace1(&[0.0]), trace1(&[2.0])], 0.0).unwrap();
        assert_eq!(g.mean(0)[0], 1.0);
        // (0−1)² + (2−1)² over n − 1 = 2; regularisation adds the absolute ridge only.
        assert_relative_eq!(g.covariance(0)[(0, 0)], 2.0, epsilon = 1e-11);
    }

    #[test]
    fn identical_samples_get_floor_ridge() {
        let g = fit_layer_gaussians(&[trace1(&[3.0]), trace1(&[3.0]), trace1(&[3.0])], 1e-3)
            .unwrap();
        assert_eq!(g.covariance(0)[(0, 0)], 1e-12);
    }

    #[test]
    fn mahalanobis_cases() {
        let mu = DVector::from_vec(vec![0.0, 0.0]);
        let eye = DMatrix::identity(2, 2);
        assert_eq!(mahalanobis(&mu, &mu, &eye).unwrap(), 0.0);
        let unit = DVector::from_vec(vec![0.6, 0.8]);
        assert_relative_eq!(mahalanobis(&unit, &mu, &eye).unwrap(), 1.0, epsilon = 1e-15);
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let y = DVector::from_vec(vec![2.0, 2.0]);
        assert_relative_eq!(mahalanobis(&y, &mu, &diag).unwrap(), 5.0, epsilon = 1e-14);
        let singular = DMatrix::zeros(2, 2);
        assert!(mahalanobis(&y, &mu, &singular).is_err());
    }

    #[test]
    fn ldl_agrees_with_cholesky() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, 0.3, 1.5, -0.7, 1.1, 0.2, 0.9]);
        let cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
        let x = DVector::from_vec(vec![0.4, -1.2, 2.5]);
        let chol = cov.clone().cholesky().unwrap();
        let expected = x.dot(&chol.solve(&x));
        let got = LdlFactor::new(&cov, 0).unwrap().quadratic_form(&x);
        assert_relative_eq!(got, expected, max_relative = 1e-12);
    }

    #[test]
    fn first_order_difference_hand_case() {
        let g = scalar_gaussians(&[1.0, 3.0], &[1.0, 1.0]);
        let (mu, cov) = diff_gaussian_params(&g, 1, 0).unwrap();
        assert_eq!(mu[0], 2.0);
        assert_eq!(cov[(0, 0)], 2.0);
        assert!(diff_gaussian_params(&g, 1, 1).is_err());
    }

    #[test]
    fn second_difference_and_order_zero() {
        let (a, b, c) = (1.5, -2.0, 7.25);
        let g = scalar_gaussians(&[a, b, c], &[1.0, 2.0, 3.0]);
        let (mu, cov) = diff_gaussian_params(&g, 2, 0).unwrap();
        assert_eq!(mu[0], c - 2.0 * b + a);
        assert_eq!(cov[(0, 0)], 1.0 + 2.0 * 2.0 + 3.0);
        let (mu0, cov0) = diff_gaussian_params(&g, 0, 1).unwrap();
        assert_eq!(mu0[0], b);
        assert_eq!(cov0[(0, 0)], 2.0);
    }

    #[test]
    fn tv_hand_case_is_two() {
        let g = scalar_gaussians(&[1.0, 3.0], &[1.0, 1.0]);
        assert_eq!(tv_score(&trace1(&[0.0, 4.0]), &g, 1).unwrap(), 2.0);
        assert!(tv_score(&trace1(&[0.0, 4.0]), &g, 2).is_err());
    }

    #[test]
    fn tv_zero_at_means() {
        let g = scalar_gaussians(&[1.0, 3.0, -2.0, 0.5], &[1.0, 2.0, 0.5, 1.0]);
        let at_means = trace1(&[1.0, 3.0, -2.0, 0.5]);
        for order in 0..4 {
            assert_eq!(tv_score(&at_means, &g, order).unwrap(), 0.0);
        }
    }

    #[test]
    fn last_layer_cases() {
        let id = [
            LayerTrace::new(1, vec![9.0, 0.0]).unwrap(),
            LayerTrace::new(1, vec![-9.0, 2.0]).unwrap(),
        ];
        let test = LayerTrace::new(1, vec![0.0, 4.0]).unwrap();
        assert_eq!(last_layer_score(&test, &id).unwrap(), 3.0);
        let at_mean = LayerTrace::new(1, vec![0.0, 1.0]).unwrap();
        assert_eq!(last_layer_score(&at_mean, &id).unwrap(), 0.0);
    }

    #[test]
    fn single_layer_is_best() {
        let id = vec![trace1(&[0.0]), trace1(&[1.0])];
        let ood = vec![trace1(&[5.0])];
        let means = LayerMeans::fit(&id).unwrap();
        assert_eq!(select_best_layer(&means, &id, &ood).unwrap(), 0);
        assert!(select_best_layer(&means, &id, &[]).is_err());
    }
}
