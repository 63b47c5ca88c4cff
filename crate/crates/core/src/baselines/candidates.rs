//! Output-uncertainty baselines over `k` generated candidates.

use crate::data::CandidateSet;

/// `−max_j P_j`, negated so that higher means more OOD.
pub fn topk_confidence(c: &CandidateSet) -> f64 {
    -c.seq_probs().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Entropy (nats) of the candidate probabilities renormalised to sum to one.
pub fn output_entropy(c: &CandidateSet) -> f64 {
    let total: f64 = c.seq_probs().iter().sum();
    -c.seq_probs()
        .iter()
        .map(|p| p / total)
        .filter(|&q| q > 0.0)
        .map(|q| q * q.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn set(p: &[f64]) -> CandidateSet {
        CandidateSet::new(p.to_vec()).unwrap()
    }

    #[test]
    fn topk_cases() {
        assert_eq!(topk_confidence(&set(&[1.0])), -1.0);
        assert_eq!(topk_confidence(&set(&[0.2, 0.05, 0.6])), -0.6);
        assert_eq!(topk_confidence(&set(&[0.2, 0.6, 0.6, 0.05, 0.2])), -0.6);
    }

    #[test]
    fn entropy_cases() {
        for k in 1..8 {
            assert_relative_eq!(output_entropy(&set(&vec![0.3; k])), (k as f64).ln(), epsilon = 1e-12);
        }
        assert_eq!(output_entropy(&set(&[0.7])), 0.0);
        // 0.6 ln 0.6 + 2 · 0.2 ln 0.2, evaluated by hand: 0.306495 + 0.643775
        assert_relative_eq!(output_entropy(&set(&[0.6, 0.2, 0.2])), 0.950_270_539_233_235, epsilon = 1e-12);
        // Same distribution before normalisation.
        assert_relative_eq!(
            output_entropy(&set(&[0.3, 0.1, 0.1])),
            output_entropy(&set(&[0.6, 0.2, 0.2])),
            epsilon = 1e-15
        );
    }
}
