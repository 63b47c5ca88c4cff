use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{class_counts, ScoredSample};
use crate::Class;

/// Threshold maximising `TPR − FPR` (flag when `score ≥ threshold`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoudenPoint {
    pub threshold: f64,
    pub j: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Sweeps −∞, the midpoints between adjacent distinct scores, and +∞,
/// keeping the smallest threshold among equal maxima.
pub fn youden_threshold(samples: &[ScoredSample]) -> Result<YoudenPoint> {
    let (n_id, n_ood) = class_counts(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));

    // Everything flagged at −∞.
    let (mut tp, mut fp) = (n_ood, n_id);
    let point = |t: f64, tp: usize, fp: usize| {
        let tpr = tp as f64 / n_ood as f64;
        let fpr = fp as f64 / n_id as f64;
        YoudenPoint { threshold: t, j: tpr - fpr, tpr, fpr }
    };
    let mut best = point(f64::NEG_INFINITY, tp, fp);

    let groups: Vec<&[ScoredSample]> = sorted.chunk_by(|a, b| a.score == b.score).collect();
    for (g, group) in groups.iter().enumerate() {
        for s in *group {
            match s.truth {
                Class::Ood => tp -= 1,
                Class::Id => fp -= 1,
            }
        }
        let t = match groups.get(g + 1) {
            Some(next) => 0.5 * (group[0].score + next[0].score),
            None => f64::INFINITY,
        };
        let candidate = point(t, tp, fp);
        if candidate.j > best.j {
            best = candidate;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::scored;
    use approx::assert_relative_eq;

    #[test]
    fn seven_score_fixture() {
        let y = youden_threshold(&scored(&[0.1, 0.35, 0.4, 0.8], &[0.5, 0.7, 0.9])).unwrap();
        assert_relative_eq!(y.j, 0.75, epsilon = 1e-15);
        assert_relative_eq!(y.threshold, 0.45, epsilon = 1e-15);
        assert_eq!((y.tpr, y.fpr), (1.0, 0.25));
    }

    #[test]
    fn separated_reaches_one() {
        let y = youden_threshold(&scored(&[0.1, 0.2], &[0.6, 0.9])).unwrap();
        assert_eq!(y.j, 1.0);
        assert!(y.threshold > 0.2 && y.threshold < 0.6);
    }

    #[test]
    fn identical_multisets_give_zero() {
        let y = youden_threshold(&scored(&[0.1, 0.5, 0.5], &[0.5, 0.1, 0.5])).unwrap();
        assert_eq!(y.j, 0.0);
        assert_eq!(y.threshold, f64::NEG_INFINITY);
    }

    #[test]
    fn one_class_is_an_error() {
        assert!(youden_threshold(&scored(&[], &[0.3])).is_err());
    }
}
