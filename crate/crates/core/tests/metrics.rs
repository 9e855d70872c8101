mod common;

use common::oracles;
use expert_nas::data::{apply_splits, generate_synthetic, Difficulty, Split, DEFAULT_FRACTIONS};
use expert_nas::metrics::{binary_metrics, multiclass_metrics};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores on a coarse grid so ties are common.
fn instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(1..=200);
    let grid = rng.random_range(2..50) as f64;
    let scores = (0..n).map(|_| (rng.random::<f64>() * grid).floor() / grid).collect();
    let p = rng.random_range(0.05..0.95);
    let labels = (0..n).map(|_| rng.random_bool(p) as u8).collect();
    (scores, labels)
}

#[test]
fn binary_metrics_match_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..100 {
        let (scores, labels) = instance(&mut rng);
        let threshold = rng.random_range(0.2..0.8);
        let m = binary_metrics(&scores, &labels, threshold);
        assert_eq!(m.f1, oracles::f1(&scores, &labels, threshold), "case {case}: f1");
        assert_eq!(
            m.balanced_accuracy,
            oracles::balanced_accuracy(&scores, &labels, threshold),
            "case {case}: balanced accuracy"
        );
        match (m.auc, oracles::auc(&scores, &labels)) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "case {case}: auc {a} vs {b}"),
            (a, b) => assert_eq!(a, b, "case {case}: auc definedness"),
        }
    }
}

#[test]
fn macro_f1_matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..100 {
        let n = rng.random_range(1..=200);
        let classes = rng.random_range(2..7);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&y| {
                if rng.random_bool(0.6) {
                    y
                } else {
                    rng.random_range(0..classes)
                }
            })
            .collect();
        let m = multiclass_metrics(&preds, &labels, classes);
        assert_eq!(
            m.macro_f1,
            oracles::macro_f1(&preds, &labels, classes),
            "case {case}: macro f1"
        );
        assert_eq!(m.accuracy, oracles::accuracy(&preds, &labels), "case {case}: accuracy");
    }
}

#[test]
fn single_class_labels_leave_auc_undefined() {
    let m = binary_metrics(&[0.1, 0.9, 0.4], &[0, 0, 0], 0.5);
    assert_eq!(m.auc, None);
    assert_eq!(m.f1, 0.0);
    assert_eq!(m.balanced_accuracy, 2.0 / 3.0);
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (1usize..120).prop_flat_map(|n| {
        (
            proptest::collection::vec((0u8..20).prop_map(|v| v as f64 / 20.0), n),
            proptest::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #[test]
    fn binary_metrics_stay_in_unit_interval((scores, labels) in scored(), threshold in 0.0f64..1.0) {
        let m = binary_metrics(&scores, &labels, threshold);
        prop_assert!((0.0..=1.0).contains(&m.f1));
        prop_assert!((0.0..=1.0).contains(&m.balanced_accuracy));
        prop_assert!((0.0..=1.0).contains(&m.prevalence));
        prop_assert_eq!((m.tp + m.fp + m.tn + m.fn_) as usize, scores.len());
        if let Some(a) = m.auc {
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn negating_scores_reflects_auc((scores, labels) in scored()) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = binary_metrics(&scores, &labels, 0.5).auc;
        let b = binary_metrics(&neg, &labels, 0.5).auc;
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a + b - 1.0).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn metrics_ignore_sample_order((scores, labels) in scored(), rot in 0usize..200) {
        let k = rot % scores.len();
        let mut s2 = scores.clone();
        let mut l2 = labels.clone();
        s2.rotate_left(k);
        l2.rotate_left(k);
        prop_assert_eq!(binary_metrics(&scores, &labels, 0.5), binary_metrics(&s2, &l2, 0.5));
    }

    #[test]
    fn perfect_predictions_score_one(labels in proptest::collection::vec(0usize..4, 1..100)) {
        let m = multiclass_metrics(&labels, &labels, 4);
        prop_assert_eq!(m.accuracy, 1.0);
        let present = (0..4).filter(|c| labels.contains(c)).count() as f64;
        prop_assert!((m.macro_f1 - present / 4.0).abs() < 1e-12);
    }
}

/// Nearest-centroid band-power accuracy of each modality alone.
fn band_power_scores(difficulty: Difficulty) -> Vec<f64> {
    let spec = common::runs::spec(7, 500, 64, difficulty);
    let bundle = apply_splits(generate_synthetic(&spec).unwrap(), DEFAULT_FRACTIONS, 7).unwrap();
    let splits = bundle.splits.clone().unwrap();
    let t = bundle.series_len;
    (0..bundle.n_modalities())
        .map(|m| {
            let [_, w] = bundle.modality_shape(m);
            let values = bundle.modality_values(m);
            let features: Vec<Vec<f64>> = values.chunks(t * w).map(|s| oracles::band_power(s, t, w)).collect();
            oracles::band_power_accuracy(
                &features,
                &bundle.labels,
                bundle.n_classes(),
                splits.rows(Split::Train),
                splits.rows(Split::Validation),
            )
        })
        .collect()
}

#[test]
fn separable_fixture_is_separable_per_modality() {
    for (m, acc) in band_power_scores(Difficulty::Separable).into_iter().enumerate() {
        assert!(acc >= 0.95, "modality {m}: band-power accuracy {acc}");
    }
}

#[test]
fn hard_fixture_defeats_single_modality_band_power() {
    for (m, acc) in band_power_scores(Difficulty::Hard).into_iter().enumerate() {
        assert!(acc <= 0.7, "modality {m}: band-power accuracy {acc}");
    }
}
