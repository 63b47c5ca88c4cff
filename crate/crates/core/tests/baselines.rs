use gem_core::baselines::{
    diff_gaussian_params, diff_representation, fit_layer_gaussians, last_layer_score, mahalanobis,
    output_entropy, sample_covariance, select_best_layer, topk_confidence, tv_score,
    youden_threshold, BestLayer, LayerGaussians, LayerMeans, OodScorer,
};
use gem_core::data::{CandidateSet, LayerTrace};
use gem_core::metrics::{auroc, scored};
use gem_synth::oracle::naive_covariance;
use gem_synth::SplitMix64;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn random_traces(count: usize, layers: usize, dim: usize, seed: u64) -> Vec<LayerTrace> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            let reps: Vec<Vec<f64>> = (0..layers)
                .map(|l| (0..dim).map(|_| rng.normal(l as f64, 1.0 + l as f64 * 0.5)).collect())
                .collect();
            LayerTrace::from_layers(&reps).unwrap()
        })
        .collect()
}

#[test]
fn covariance_matches_two_pass_oracle() {
    let mut rng = SplitMix64::new(3);
    let rows: Vec<Vec<f64>> = (0..400)
        .map(|_| vec![rng.normal(1.0, 2.0), rng.normal(-4.0, 0.5), rng.normal(10.0, 7.0)])
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let cov = sample_covariance(&refs);
    let oracle = naive_covariance(&rows);
    for a in 0..3 {
        for b in 0..3 {
            let want = oracle[a * 3 + b];
            assert!((cov[(a, b)] - want).abs() <= 1e-10 * want.abs().max(1.0), "{a},{b}");
            assert_eq!(cov[(a, b)], cov[(b, a)]);
        }
    }
}

#[test]
fn tv_hand_case_is_exactly_two() {
    let g = LayerGaussians::from_parts(
        vec![DVector::from_element(1, 1.0), DVector::from_element(1, 3.0)],
        vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)],
        0.0,
    )
    .unwrap();
    let test = LayerTrace::new(1, vec![0.0, 4.0]).unwrap();
    assert_eq!(tv_score(&test, &g, 1).unwrap(), 2.0);
    assert!(tv_score(&test, &g, 2).is_err());
}

#[test]
fn tv_zero_at_layer_means() {
    let traces = random_traces(60, 4, 3, 8);
    let g = fit_layer_gaussians(&traces, 1e-3).unwrap();
    let at_means: Vec<Vec<f64>> = (0..4).map(|l| g.mean(l).as_slice().to_vec()).collect();
    let t = LayerTrace::from_layers(&at_means).unwrap();
    for order in 0..4 {
        assert!(tv_score(&t, &g, order).unwrap().abs() <= 1e-12, "order {order}");
    }
}

#[test]
fn tv_order_zero_is_averaged_mahalanobis() {
    let traces = random_traces(50, 3, 4, 9);
    let g = fit_layer_gaussians(&traces, 1e-3).unwrap();
    for t in random_traces(10, 3, 4, 10) {
        let expected: f64 = (0..3)
            .map(|l| {
                let y = DVector::from_column_slice(t.layer(l));
                mahalanobis(&y, g.mean(l), g.covariance(l)).unwrap()
            })
            .sum::<f64>()
            / 3.0;
        assert_eq!(tv_score(&t, &g, 0).unwrap(), expected);
    }
}

#[test]
fn difference_recurrence_on_means() {
    let traces = random_traces(30, 6, 2, 11);
    let g = fit_layer_gaussians(&traces, 1e-3).unwrap();
    for order in 1..5 {
        for l in 0..6 - order {
            let (mu, _) = diff_gaussian_params(&g, order, l).unwrap();
            let (hi, _) = diff_gaussian_params(&g, order - 1, l + 1).unwrap();
            let (lo, _) = diff_gaussian_params(&g, order - 1, l).unwrap();
            assert!((mu - (hi - lo)).amax() <= 1e-12);
        }
    }
    let t = &traces[0];
    let second = diff_representation(t, 2, 1);
    let by_hand = DVector::from_column_slice(t.layer(3)) - DVector::from_column_slice(t.layer(2)) * 2.0
        + DVector::from_column_slice(t.layer(1));
    assert!((second - by_hand).amax() <= 1e-12);
}

#[test]
fn last_layer_two_point_case() {
    let id = [
        LayerTrace::new(1, vec![5.0, 0.0]).unwrap(),
        LayerTrace::new(1, vec![-5.0, 2.0]).unwrap(),
    ];
    let test = LayerTrace::new(1, vec![0.0, 4.0]).unwrap();
    assert_eq!(last_layer_score(&test, &id).unwrap(), 3.0);
    assert!(last_layer_score(&LayerTrace::new(2, vec![0.0; 4]).unwrap(), &id).is_err());
}

/// ID and OOD traces identical in distribution except at 0-based layer 1.
fn layer_two_fixture(seed: u64) -> (Vec<LayerTrace>, Vec<LayerTrace>, Vec<LayerTrace>) {
    let mut rng = SplitMix64::new(seed);
    let mut make = |count: usize, shift: f64| -> Vec<LayerTrace> {
        (0..count)
            .map(|_| {
                let reps: Vec<Vec<f64>> = (0..4)
                    .map(|l| {
                        let offset = if l == 1 { shift } else { 0.0 };
                        (0..3).map(|_| rng.normal(offset, 1.0)).collect()
                    })
                    .collect();
                LayerTrace::from_layers(&reps).unwrap()
            })
            .collect()
    };
    (make(200, 0.0), make(100, 0.0), make(100, 8.0))
}

#[test]
fn best_layer_finds_the_only_separating_layer() {
    let (train, id_val, ood_val) = layer_two_fixture(12);
    let means = LayerMeans::fit(&train).unwrap();
    // Oracle: AUROC per layer by direct evaluation.
    let per_layer: Vec<f64> = (0..4)
        .map(|l| {
            let s = |ts: &[LayerTrace]| ts.iter().map(|t| means.distance(t, l).unwrap()).collect::<Vec<_>>();
            auroc(&scored(&s(&id_val), &s(&ood_val))).unwrap()
        })
        .collect();
    assert!(per_layer[1] > 0.99, "{per_layer:?}");
    assert_eq!(select_best_layer(&means, &id_val, &ood_val).unwrap(), 1);
    let best = BestLayer::fit(&train, &id_val, &ood_val).unwrap();
    assert_eq!(best.layer(), 1);
    assert!(best.score(&ood_val[0]).unwrap() > 0.0);
    assert!(select_best_layer(&means, &[], &ood_val).is_err());
}

#[test]
fn single_layer_picks_it() {
    let traces = random_traces(10, 1, 2, 13);
    let means = LayerMeans::fit(&traces).unwrap();
    assert_eq!(select_best_layer(&means, &traces[..5], &traces[5..]).unwrap(), 0);
}

#[test]
fn topk_plug_in() {
    assert_eq!(topk_confidence(&CandidateSet::new(vec![0.2, 0.05, 0.6]).unwrap()), -0.6);
}

fn flagged_set(scores_id: &[f64], scores_ood: &[f64], t: f64) -> Vec<bool> {
    scores_id.iter().chain(scores_ood).map(|&s| s >= t).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn candidate_scores_ignore_order_and_scale(
        probs in prop::collection::vec(0.001f64..1.0, 1..10),
        rotate in 0usize..10,
        scale in 0.01f64..1.0,
    ) {
        let a = CandidateSet::new(probs.clone()).unwrap();
        let mut rotated = probs.clone();
        let r = rotate % probs.len();
        rotated.rotate_left(r);
        let b = CandidateSet::new(rotated).unwrap();
        prop_assert_eq!(topk_confidence(&a), topk_confidence(&b));
        prop_assert!((output_entropy(&a) - output_entropy(&b)).abs() <= 1e-12);
        let scaled = CandidateSet::new(probs.iter().map(|p| p * scale).collect()).unwrap();
        prop_assert!((output_entropy(&a) - output_entropy(&scaled)).abs() <= 1e-12);
        prop_assert!(output_entropy(&a) <= (probs.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn youden_partition_survives_monotone_transforms(
        id in prop::collection::vec(-5.0f64..5.0, 1..60),
        ood in prop::collection::vec(-5.0f64..5.0, 1..60),
    ) {
        let f = |v: &[f64]| v.iter().map(|x| x.powi(3) + 4.0 * x).collect::<Vec<_>>();
        let (fid, food) = (f(&id), f(&ood));
        let a = youden_threshold(&scored(&id, &ood)).unwrap();
        let b = youden_threshold(&scored(&fid, &food)).unwrap();
        prop_assert!((a.j - b.j).abs() <= 1e-12);
        prop_assert_eq!(flagged_set(&id, &ood, a.threshold), flagged_set(&fid, &food, b.threshold));
    }

    #[test]
    fn mahalanobis_nonnegative_and_zero_only_at_mean(
        y in prop::collection::vec(-10.0f64..10.0, 3),
        mu in prop::collection::vec(-10.0f64..10.0, 3),
        a in prop::collection::vec(-2.0f64..2.0, 9),
    ) {
        let a = DMatrix::from_row_slice(3, 3, &a);
        let cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.5;
        let (y, mu) = (DVector::from_vec(y), DVector::from_vec(mu));
        let d = mahalanobis(&y, &mu, &cov).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(mahalanobis(&mu, &mu, &cov).unwrap(), 0.0);
        if (&y - &mu).amax() > 1e-6 {
            prop_assert!(d > 0.0);
        }
    }
}
