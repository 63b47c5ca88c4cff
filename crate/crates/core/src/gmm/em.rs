use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FitConfig, GmmComponent, GmmModel};
use crate::error::{GemError, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Responsibility mass below which a component counts as empty.
const EMPTY_MASS: f64 = 1e-10;

/// Log-ratio to the dominant term below which a component's contribution is dropped.
const NEGLIGIBLE_LOG_RATIO: f64 = -50.0;

/// Variance used when every distance is identical.
const ABSOLUTE_VARIANCE_FLOOR: f64 = 1e-12;

/// Log-likelihood trajectory of one EM run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RestartTrace {
    /// Log-likelihood of the parameters entering each iteration, then of the final parameters.
    pub log_likelihoods: Vec<f64>,
    /// Indices into `log_likelihoods` whose transition from the previous entry
    /// followed an empty-component re-seed, so is not an EM step.
    pub reseeds: Vec<usize>,
    /// False both for runs that hit `max_iters` and for restarts dropped after screening.
    pub converged: bool,
}

impl RestartTrace {
    /// Largest drop in log-likelihood between consecutive EM steps (0 if none).
    pub fn worst_decrease(&self) -> f64 {
        self.log_likelihoods
            .windows(2)
            .enumerate()
            .filter(|(i, _)| !self.reseeds.contains(&(i + 1)))
            .map(|(_, w)| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub restarts: Vec<RestartTrace>,
    /// Index of the restart whose parameters were kept.
    pub chosen: usize,
}

pub(crate) fn validate_distances(distances: &[f64]) -> Result<()> {
    if distances.is_empty() {
        return Err(GemError::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    if let Some(i) = distances.iter().position(|d| !d.is_finite()) {
        return Err(GemError::Sample {
            field: "distance",
            index: i,
            reason: format!("non-finite value {}", distances[i]),
        });
    }
    Ok(())
}

/// Population mean and variance via two passes.
fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Linear-interpolated empirical quantile of ascending `sorted` at `q ∈ [0, 1]`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn variance_floor(sample_var: f64, scale: f64) -> f64 {
    if sample_var > 0.0 {
        (scale * sample_var).max(f64::MIN_POSITIVE)
    } else {
        ABSOLUTE_VARIANCE_FLOOR
    }
}

/// Seed for restart `restart` of an `m`-component fit (SplitMix64 finaliser over the triple).
fn restart_seed(seed: u64, m: usize, restart: usize) -> u64 {
    let mut z = seed
        ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (restart as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
struct Params {
    weight: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl Params {
    fn initial(sorted: &[f64], m: usize, restart: usize, seed: u64, floor: f64) -> Self {
        let (_, var) = mean_var(sorted);
        let init_var = (var / (m * m) as f64).max(floor);
        let mean = if restart == 0 {
            (1..=m)
                .map(|j| quantile(sorted, (2 * j - 1) as f64 / (2 * m) as f64))
                .collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(seed, m, restart));
            (0..m)
                .map(|j| quantile(sorted, (j as f64 + rng.gen::<f64>()) / m as f64))
                .collect()
        };
        Params {
            weight: vec![1.0 / m as f64; m],
            mean,
            var: vec![init_var; m],
        }
    }
}

/// Iterations every restart runs before only the leading one is carried on.
const SCREEN_ITERS: usize = 20;

/// Samples processed together in the E-step; sized so the per-block
/// component-by-sample table stays in L1 cache.
const BLOCK: usize = 256;

/// Samples whose mixture densities are multiplied together before one `ln`.
/// Each density ratio lies in `[1, m]`, so the product cannot overflow.
const LN_RUN: usize = 32;

/// Sufficient statistics gathered by one E-step. Second moments are taken
/// about the current means so the variance update avoids cancellation.
struct Moments {
    log_likelihood: f64,
    mass: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Neumaier-compensated running sum; keeps trajectories comparable at the 1e-9 level.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let next = self.sum + x;
        self.comp += if self.sum.abs() >= x.abs() {
            (self.sum - next) + x
        } else {
            (x - next) + self.sum
        };
        self.sum = next;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

fn log_norms(p: &Params) -> Vec<f64> {
    p.weight
        .iter()
        .zip(&p.var)
        .map(|(w, v)| w.ln() - LN_SQRT_2PI - 0.5 * v.ln())
        .collect()
}

/// `e^x` for `x ∈ [−60, 0]`, branch-free so the block loops vectorise.
/// Cody–Waite reduction plus a degree-13 Taylor polynomial; within 1 ulp
/// of the libm result on that range, and bit-identical on every target.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    // 1.5·2⁵²: adding it rounds to an integer held in the low mantissa bits.
    const MAGIC: f64 = 6_755_399_441_055_744.0;
    let shifted = x * std::f64::consts::LOG2_E + MAGIC;
    let k = shifted - MAGIC;
    let k_bits = shifted.to_bits().wrapping_sub(MAGIC.to_bits());
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    p * f64::from_bits(k_bits.wrapping_add(1023) << 52)
}

/// Per-block scratch: `terms[j * BLOCK + i]` holds component `j` at sample `i`.
struct Scratch {
    terms: Vec<f64>,
    max: [f64; BLOCK],
    total: [f64; BLOCK],
}

impl Scratch {
    fn new(m: usize) -> Self {
        Scratch {
            terms: vec![0.0; m * BLOCK],
            max: [0.0; BLOCK],
            total: [0.0; BLOCK],
        }
    }
}

/// Fills `scratch` for one block: responsibilities (unnormalised, relative to
/// the largest term) in `terms`, the largest log term in `max`, and the
/// reciprocal of each sample's term sum in `total`.
#[multiversion::multiversion(targets("x86_64+avx2", "x86_64+avx"))]
fn block_terms(block: &[f64], mean: &[f64], log_norm: &[f64], inv_two_var: &[f64], s: &mut Scratch) {
    let n = block.len();
    let max = &mut s.max[..n];
    max.fill(f64::NEG_INFINITY);
    for (j, row) in s.terms.chunks_exact_mut(BLOCK).enumerate() {
        let (mu, a, b) = (mean[j], log_norm[j], inv_two_var[j]);
        for ((t, &d), mx) in row[..n].iter_mut().zip(block).zip(max.iter_mut()) {
            let dev = d - mu;
            let v = a - dev * dev * b;
            *t = v;
            *mx = if v > *mx { v } else { *mx };
        }
    }
    let total = &mut s.total[..n];
    total.fill(0.0);
    for row in s.terms.chunks_exact_mut(BLOCK) {
        for ((t, &mx), tot) in row[..n].iter_mut().zip(max.iter()).zip(total.iter_mut()) {
            let shifted = *t - mx;
            // Below e^-50 a term cannot move the sum, which is at least 1.
            let e = exp_nonpositive(if shifted > -60.0 { shifted } else { -60.0 });
            let e = if shifted > NEGLIGIBLE_LOG_RATIO { e } else { 0.0 };
            *t = e;
            *tot += e;
        }
    }
}

/// Adds one block's responsibility-weighted zeroth, first and second
/// moments (about each current mean) into the running totals. Four
/// independent lanes let the reductions vectorise.
#[multiversion::multiversion(targets("x86_64+avx2", "x86_64+avx"))]
fn block_moments(
    block: &[f64],
    mean: &[f64],
    s: &Scratch,
    mass: &mut [f64],
    first: &mut [f64],
    second: &mut [f64],
) {
    const LANES: usize = 4;
    let n = block.len();
    for (j, row) in s.terms.chunks_exact(BLOCK).enumerate() {
        let mu = mean[j];
        let (mut n0, mut n1, mut n2) = ([0.0; LANES], [0.0; LANES], [0.0; LANES]);
        let rows = row[..n].chunks_exact(LANES);
        let invs = s.total[..n].chunks_exact(LANES);
        let ds = block.chunks_exact(LANES);
        let tail = n - rows.remainder().len();
        for ((t, inv), d) in rows.zip(invs).zip(ds) {
            for k in 0..LANES {
                let g = t[k] * inv[k];
                let dev = d[k] - mu;
                n0[k] += g;
                n1[k] += g * dev;
                n2[k] += g * dev * dev;
            }
        }
        for i in tail..n {
            let g = row[i] * s.total[i];
            let dev = block[i] - mu;
            n0[0] += g;
            n1[0] += g * dev;
            n2[0] += g * dev * dev;
        }
        mass[j] += (n0[0] + n0[1]) + (n0[2] + n0[3]);
        first[j] += (n1[0] + n1[1]) + (n1[2] + n1[3]);
        second[j] += (n2[0] + n2[1]) + (n2[2] + n2[3]);
    }
}

fn e_step(data: &[f64], p: &Params, scratch: &mut Scratch) -> Moments {
    let m = p.weight.len();
    let log_norm = log_norms(p);
    let inv_two_var: Vec<f64> = p.var.iter().map(|v| 0.5 / v).collect();

    let mut mass = vec![0.0; m];
    let mut first = vec![0.0; m];
    let mut second = vec![0.0; m];
    let mut ll = CompensatedSum::default();

    for block in data.chunks(BLOCK) {
        let n = block.len();
        block_terms(block, &p.mean, &log_norm, &inv_two_var, scratch);
        // Each sample contributes max_i + ln(total_i).
        for run in (0..n).step_by(LN_RUN) {
            let end = (run + LN_RUN).min(n);
            let mut product = 1.0;
            for i in run..end {
                ll.add(scratch.max[i]);
                product *= scratch.total[i];
            }
            ll.add(product.ln());
        }
        for t in &mut scratch.total[..n] {
            *t = t.recip();
        }
        block_moments(block, &p.mean, scratch, &mut mass, &mut first, &mut second);
    }
    Moments {
        log_likelihood: ll.total(),
        mass,
        first,
        second,
    }
}

/// Index of the sample with the lowest mixture density under `p`.
fn worst_explained(data: &[f64], p: &Params) -> usize {
    let log_norm = log_norms(p);
    let mut worst = (0, f64::INFINITY);
    for (i, &d) in data.iter().enumerate() {
        let terms: Vec<f64> = (0..p.mean.len())
            .map(|j| log_norm[j] - (d - p.mean[j]).powi(2) / (2.0 * p.var[j]))
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ll = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        if ll < worst.1 {
            worst = (i, ll);
        }
    }
    worst.0
}

/// Returns true if a component had to be re-seeded.
fn m_step(data: &[f64], p: &mut Params, mo: &Moments, floor: f64, reseed_var: f64) -> bool {
    let m = p.weight.len();
    let any_empty = mo.mass.iter().any(|&n| n < EMPTY_MASS);
    let reseed_at = any_empty.then(|| data[worst_explained(data, p)]);
    for j in 0..m {
        let n = mo.mass[j];
        if let (true, Some(at)) = (n < EMPTY_MASS, reseed_at) {
            p.mean[j] = at;
            p.var[j] = reseed_var;
            p.weight[j] = 1.0 / m as f64;
            continue;
        }
        let shift = mo.first[j] / n;
        p.mean[j] += shift;
        p.var[j] = (mo.second[j] / n - shift * shift).max(floor);
        p.weight[j] = n / data.len() as f64;
    }
    let total: f64 = p.weight.iter().sum();
    p.weight.iter_mut().for_each(|w| *w /= total);
    reseed_at.is_some()
}

/// One EM run that can be paused after a number of M-steps and resumed.
struct Run {
    params: Params,
    trace: RestartTrace,
    /// Statistics for the current parameters, not yet used by an M-step.
    current: Option<Moments>,
    iters: usize,
    scratch: Scratch,
}

impl Run {
    fn new(params: Params) -> Self {
        let m = params.weight.len();
        Run {
            params,
            trace: RestartTrace::default(),
            current: None,
            iters: 0,
            scratch: Scratch::new(m),
        }
    }

    fn log_likelihood(&self) -> f64 {
        *self.trace.log_likelihoods.last().expect("advanced at least once")
    }

    /// Iterates until convergence or until `limit` M-steps have been taken in total.
    fn advance(&mut self, sorted: &[f64], cfg: &FitConfig, floor: f64, reseed_var: f64, limit: usize) {
        if self.trace.converged {
            return;
        }
        let mut current = match self.current.take() {
            Some(mo) => mo,
            None => {
                let mo = e_step(sorted, &self.params, &mut self.scratch);
                self.trace.log_likelihoods.push(mo.log_likelihood);
                mo
            }
        };
        while self.iters < limit {
            let prev = current.log_likelihood;
            let reseeded = m_step(sorted, &mut self.params, &current, floor, reseed_var);
            self.iters += 1;
            current = e_step(sorted, &self.params, &mut self.scratch);
            let ll = current.log_likelihood;
            self.trace.log_likelihoods.push(ll);
            if reseeded {
                self.trace.reseeds.push(self.trace.log_likelihoods.len() - 1);
            } else if ll - prev <= cfg.rel_tol * prev.abs().max(1.0) {
                self.trace.converged = true;
                return;
            }
        }
        self.current = Some(current);
    }
}

/// Fits an `m`-component univariate mixture to `distances` by EM.
pub fn fit_em(distances: &[f64], m: usize, cfg: &FitConfig) -> Result<GmmModel> {
    fit_em_traced(distances, m, cfg).map(|(model, _)| model)
}

/// [`fit_em`] that also returns every restart's log-likelihood trajectory.
///
/// Every restart runs a short screening phase; only the one with the highest
/// log-likelihood afterwards (earliest on ties) is iterated to convergence.
pub fn fit_em_traced(distances: &[f64], m: usize, cfg: &FitConfig) -> Result<(GmmModel, FitTrace)> {
    cfg.validate()?;
    validate_distances(distances)?;
    if m == 0 {
        return Err(GemError::validation("m", "must be at least 1"));
    }
    if distances.len() < m {
        return Err(GemError::InsufficientData {
            needed: m,
            available: distances.len(),
        });
    }

    // EM runs on standardised data so the fit, including where the relative
    // stopping rule fires, does not depend on the units of the distances.
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (shift, raw_var) = mean_var(&sorted);
    let scale = if raw_var > 0.0 { raw_var.sqrt() } else { 1.0 };
    for d in &mut sorted {
        *d = (*d - shift) / scale;
    }
    let (_, var) = mean_var(&sorted);
    let floor = variance_floor(var, cfg.variance_floor_scale);
    let reseed_var = (var / (m * m) as f64).max(floor);

    let screen = SCREEN_ITERS.min(cfg.max_iters);
    let mut runs: Vec<Run> = (0..cfg.restarts)
        .map(|restart| {
            let mut run = Run::new(Params::initial(&sorted, m, restart, cfg.seed, floor));
            run.advance(&sorted, cfg, floor, reseed_var, screen);
            run
        })
        .collect();
    let mut chosen = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.log_likelihood() > runs[chosen].log_likelihood() {
            chosen = r;
        }
    }
    runs[chosen].advance(&sorted, cfg, floor, reseed_var, cfg.max_iters);

    // Each density picks up a 1/scale factor on the way back.
    let jacobian = distances.len() as f64 * scale.ln();
    let ll = runs[chosen].log_likelihood() - jacobian;
    let params = runs[chosen].params.clone();
    let trace = FitTrace {
        restarts: runs
            .into_iter()
            .map(|r| {
                let mut t = r.trace;
                t.log_likelihoods.iter_mut().for_each(|l| *l -= jacobian);
                t
            })
            .collect(),
        chosen,
    };

    let mut components: Vec<GmmComponent> = (0..m)
        .map(|j| GmmComponent {
            weight: params.weight[j],
            mean: shift + scale * params.mean[j],
            std: scale * params.var[j].sqrt(),
        })
        .collect();
    components.sort_by(|a, b| {
        a.mean
            .total_cmp(&b.mean)
            .then(a.std.total_cmp(&b.std))
            .then(a.weight.total_cmp(&b.weight))
    });
    let model = GmmModel::new(components, distances.len(), ll);
    Ok((model, trace))
}

/// Σ_i log Σ_j π_j N(d_i | μ_j, σ_j²), with each inner sum taken by log-sum-exp.
pub fn log_likelihood(distances: &[f64], model: &GmmModel) -> Result<f64> {
    validate_distances(distances)?;
    model.validate()?;
    Ok(distances
        .iter()
        .map(|&d| log_density(d, &model.components))
        .sum())
}

/// Log of the mixture density at `d`.
pub(crate) fn log_density(d: f64, components: &[GmmComponent]) -> f64 {
    let terms: Vec<f64> = components
        .iter()
        .map(|c| {
            let z = (d - c.mean) / c.std;
            c.weight.ln() - LN_SQRT_2PI - c.std.ln() - 0.5 * z * z
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Mixture density at `d`.
pub fn density(d: f64, model: &GmmModel) -> f64 {
    log_density(d, &model.components).exp()
}
