use std::collections::BTreeSet;

use comprehend_core::balance::{smote, tomek_links};
use comprehend_core::dataset::{
    derive_confusion_labels, known_unknown_matrix, ConfusionLabel, CorrectLabel, Dataset, FeatureRow, RowKey,
};
use comprehend_core::ensemble::{grouped_kfold, BinaryCounts};
use comprehend_core::learners::{GbtConfig, LearnerConfig, LrConfig, ProbClassifier, RfConfig, SvmConfig};
use comprehend_core::matrix::Matrix;
use comprehend_core::nlp::{dependency_metrics, DependencySentence};
use comprehend_core::signal::SosFilter;
use comprehend_core::spectral::{band_power, welch_psd, BandDef};
use proptest::prelude::*;

fn matrix_strategy(max_rows: usize, d: usize) -> impl Strategy<Value = (Matrix<f64>, Vec<bool>)> {
    (6..max_rows).prop_flat_map(move |n| {
        (prop::collection::vec(-3.0f64..3.0, n * d), prop::collection::vec(any::<bool>(), n)).prop_map(
            move |(data, mut y)| {
                // both classes present
                y[0] = true;
                y[1] = false;
                (Matrix::from_vec(n, d, data), y)
            },
        )
    })
}

fn rows_with_labels(labels: &[(Option<u8>, Option<bool>)]) -> Dataset {
    let rows = labels
        .iter()
        .enumerate()
        .map(|(i, &(rating, correct))| FeatureRow {
            key: RowKey::new(format!("S{:02}", i % 5), "passage1", i as u32 + 1),
            eeg: vec![i as f64],
            nlp: vec![0.0],
            confusion_rating: rating,
            confusion_label: None,
            correct_label: correct.map(CorrectLabel::from_bool),
        })
        .collect();
    Dataset::new(rows, vec!["e".into()], vec!["n".into()]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn probabilities_stay_in_unit_interval((x, y) in matrix_strategy(40, 3), seed in 0u64..1000) {
        let configs = [
            LearnerConfig::Lr(LrConfig::default()),
            LearnerConfig::Rf(RfConfig { n_trees: 10, ..Default::default() }),
            LearnerConfig::Svm(SvmConfig::default()),
            LearnerConfig::Gbt(GbtConfig { rounds: 10, ..Default::default() }),
        ];
        for cfg in configs {
            let m = cfg.fit(&x, &y, seed).unwrap();
            for p in m.predict_proba(&x) {
                prop_assert!((0.0..=1.0).contains(&p), "{} gave {p}", m.kind_name());
            }
            // re-seeding restores bit equality
            let again = cfg.fit(&x, &y, seed).unwrap();
            prop_assert_eq!(m.predict_proba(&x), again.predict_proba(&x));
        }
    }

    #[test]
    fn lr_ignores_row_order((x, y) in matrix_strategy(30, 2)) {
        let n = x.nrows();
        let order: Vec<usize> = (0..n).rev().collect();
        let xr = x.select_rows(&order);
        let yr: Vec<bool> = order.iter().map(|&i| y[i]).collect();
        let cfg = LearnerConfig::Lr(LrConfig::default());
        let a = cfg.fit(&x, &y, 0).unwrap().predict_proba(&x);
        let b = cfg.fit(&xr, &yr, 0).unwrap().predict_proba(&x);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn f32_and_f64_agree_on_lr((x, y) in matrix_strategy(30, 2)) {
        let x32 = Matrix::from_vec(x.nrows(), x.ncols(), x.as_slice().iter().map(|&v| v as f32).collect());
        let cfg = LearnerConfig::Lr(LrConfig::default());
        let a = cfg.fit(&x, &y, 0).unwrap().predict_proba(&x);
        let b = cfg.fit(&x32, &y, 0).unwrap().predict_proba(&x32);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - f64::from(*q)).abs() < 1e-3);
        }
    }

    #[test]
    fn smote_balances_and_keeps_originals((x, y) in matrix_strategy(50, 3), seed in 0u64..1000) {
        let pos = y.iter().filter(|&&b| b).count();
        prop_assume!(pos >= 2 && y.len() - pos >= 2);
        let r = smote(&x, &y, 3, 1.0, seed).unwrap();
        let rp = r.y.iter().filter(|&&b| b).count();
        prop_assert_eq!(rp, r.y.len() - rp);
        for i in 0..x.nrows() {
            prop_assert_eq!(r.x.row(i), x.row(i));
            prop_assert_eq!(r.y[i], y[i]);
        }
    }

    #[test]
    fn tomek_links_are_mutual_and_mixed((x, y) in matrix_strategy(40, 2)) {
        let links = tomek_links(&x, &y);
        let mut seen = BTreeSet::new();
        for (a, b) in links {
            prop_assert!(a < b && y[a] != y[b]);
            prop_assert!(seen.insert(a) && seen.insert(b), "row in two links");
        }
    }

    #[test]
    fn band_powers_add_over_a_partition(cuts in prop::collection::btree_set(1u32..127, 1..6)) {
        let x: Vec<f64> = (0..2048).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let psd = welch_psd(&x, 256.0, 256, 0.5).unwrap();
        let mut edges: Vec<f64> = vec![0.0];
        edges.extend(cuts.iter().map(|&c| f64::from(c)));
        edges.push(128.0);
        let sum: f64 = edges.windows(2).map(|w| band_power(&psd, &BandDef::new("b", w[0], w[1])).unwrap()).sum();
        let total = psd.total_power();
        prop_assert!((sum - total).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn filter_output_is_linear(a in -2.0f64..2.0, seed in 0u64..100) {
        let f = SosFilter::butterworth_bandpass(4.0, 40.0, 2, 256.0).unwrap();
        let u: Vec<f64> = (0..400).map(|i| (((i as u64 + seed) * 2654435761) % 1000) as f64 / 500.0 - 1.0).collect();
        let v: Vec<f64> = (0..400).map(|i| (i as f64 * 0.21).sin()).collect();
        let mix: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + q).collect();
        let (fu, fv, fm) = (f.filtfilt(&u), f.filtfilt(&v), f.filtfilt(&mix));
        for i in 0..400 {
            prop_assert!((fm[i] - (a * fu[i] + fv[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn dependency_totals_bound_each_other(seed in 0u64..10_000, n in 1usize..25) {
        let mut s = seed;
        let heads: Vec<usize> = (1..=n)
            .map(|i| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if i == 1 { 0 } else { 1 + (s >> 33) as usize % (i - 1) }
            })
            .collect();
        let m = dependency_metrics(&DependencySentence::from_heads(&heads).unwrap());
        prop_assert!(m.max <= m.total && m.total <= m.max * (n - 1).max(1));
        prop_assert!(m.avg <= m.max as f64 + 1e-12);
        prop_assert!((m.normalized * n as f64 - m.total as f64).abs() < 1e-9);
    }

    #[test]
    fn median_split_and_matrix_marginals(
        labels in prop::collection::vec((prop::option::of(1u8..=10), prop::option::of(any::<bool>())), 1..80),
    ) {
        prop_assume!(labels.iter().any(|l| l.0.is_some()));
        let ds = derive_confusion_labels(&rows_with_labels(&labels), false).unwrap();
        for r in &ds.rows {
            prop_assert_eq!(r.confusion_rating.is_some(), r.confusion_label.is_some());
        }
        let both = ds.rows.iter().filter(|r| r.confusion_label.is_some() && r.correct_label.is_some()).count();
        match known_unknown_matrix(&ds) {
            Ok(m) => {
                prop_assert_eq!(m.total(), both);
                prop_assert_eq!(m.confused_total() + m.notconfused_total(), m.correct_total() + m.incorrect_total());
                let confused_both = ds.rows.iter()
                    .filter(|r| r.confusion_label == Some(ConfusionLabel::Confused) && r.correct_label.is_some())
                    .count();
                prop_assert_eq!(m.confused_total(), confused_both);
            }
            Err(_) => prop_assert_eq!(both, 0),
        }
    }

    #[test]
    fn grouped_folds_partition_participants(n in 2usize..30, k in 2usize..12, seed in 0u64..1000) {
        prop_assume!(k <= n);
        let ids: Vec<String> = (0..n).map(|i| format!("P{i}")).collect();
        let folds = grouped_kfold(&ids, k, seed).unwrap();
        let mut seen = BTreeSet::new();
        for f in &folds {
            prop_assert!(f.test_ids.len() == n / k || f.test_ids.len() == n / k + 1);
            prop_assert_eq!(f.train_ids.len() + f.test_ids.len(), n);
            for t in &f.test_ids {
                prop_assert!(seen.insert(t.clone()));
                prop_assert!(!f.train_ids.contains(t));
            }
        }
        prop_assert_eq!(seen.len(), n);
    }

    #[test]
    fn metric_arithmetic(truth in prop::collection::vec(any::<bool>(), 1..60), flips in any::<u64>()) {
        let pred: Vec<bool> = truth.iter().enumerate().map(|(i, &t)| t ^ (flips >> (i % 64) & 1 == 1)).collect();
        let c = BinaryCounts::from_predictions(&truth, &pred);
        prop_assert_eq!(c.total(), truth.len());
        let agree = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
        prop_assert!((c.accuracy() - agree as f64 / truth.len() as f64).abs() < 1e-12);
        let denom = 2 * c.tp + c.fp + c.fn_;
        let f1 = if denom == 0 { 0.0 } else { 2.0 * c.tp as f64 / denom as f64 };
        prop_assert!((c.f1() - f1).abs() < 1e-12);
    }
}
