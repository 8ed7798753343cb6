mod common;

use common::rng;
use hinet::data::Outcome;
use hinet::error::Error;
use hinet::metrics::{
    alarms_at, alarms_per_10h, operating_point, pr_auc, report, rmse, roc_auc, threshold_for_sensitivity,
    PredictionSet,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn set(scores: &[f64], labels: &[u8]) -> PredictionSet {
    let mut ps = PredictionSet::new();
    ps.push_surgery("s", scores, labels, &vec![1; scores.len()]).unwrap();
    ps
}

fn random_set(n: usize, seed: u64, ties: bool) -> PredictionSet {
    let mut r = rng(seed);
    let labels: Vec<u8> = (0..n).map(|_| r.gen_bool(0.3) as u8).collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|&y| {
            let s = r.gen::<f64>() + 0.4 * f64::from(y);
            if ties {
                (s * 10.0).round() / 10.0
            } else {
                s
            }
        })
        .collect();
    set(&scores, &labels)
}

fn pairwise_auc(ps: &PredictionSet) -> f64 {
    let items: Vec<(f64, u8)> = ps.labelled().collect();
    let (mut wins, mut pairs) = (0.0, 0.0);
    for &(sp, yp) in &items {
        if yp != 1 {
            continue;
        }
        for &(sn, yn) in &items {
            if yn != 0 {
                continue;
            }
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Precision at each positive, averaged, with tied scores resolved as a
/// single threshold.
fn scan_average_precision(ps: &PredictionSet) -> f64 {
    let items: Vec<(f64, u8)> = ps.labelled().collect();
    let pos = items.iter().filter(|p| p.1 == 1).count() as f64;
    let mut thresholds: Vec<f64> = items.iter().map(|p| p.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for thr in thresholds {
        let tp = items.iter().filter(|p| p.0 >= thr && p.1 == 1).count() as f64;
        let alarms = items.iter().filter(|p| p.0 >= thr).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * (tp / alarms);
        prev_recall = recall;
    }
    ap
}

#[test]
fn roc_matches_pairwise_oracle() {
    for (n, seed) in [(200, 1), (1000, 2)] {
        for ties in [false, true] {
            let ps = random_set(n, seed, ties);
            let diff = (roc_auc(&ps).unwrap() - pairwise_auc(&ps)).abs();
            assert!(diff < 1e-12, "n={n} ties={ties} diff={diff}");
        }
    }
}

#[test]
fn roc_invariant_under_monotone_transform() {
    let ps = random_set(500, 3, false);
    let mut moved = ps.clone();
    moved.scores.iter_mut().for_each(|s| *s = (3.0 * *s).exp() - 7.0);
    assert!((roc_auc(&ps).unwrap() - roc_auc(&moved).unwrap()).abs() < 1e-12);
    assert!((pr_auc(&ps).unwrap() - pr_auc(&moved).unwrap()).abs() < 1e-12);
}

#[test]
fn roc_reversed_scores() {
    let ps = random_set(300, 4, false);
    let mut flipped = ps.clone();
    flipped.scores.iter_mut().for_each(|s| *s = -*s);
    assert!((roc_auc(&ps).unwrap() + roc_auc(&flipped).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn masked_entries_are_ignored() {
    let mut ps = PredictionSet::new();
    ps.push_surgery("a", &[0.9, 0.1, 0.95, 0.2], &[1, 0, 0, 1], &[1, 1, 0, 0]).unwrap();
    assert_eq!(roc_auc(&ps).unwrap(), 1.0);
    assert_eq!(pr_auc(&ps).unwrap(), 1.0);
    assert_eq!(ps.prevalence().unwrap(), 0.5);
    assert_eq!(alarms_per_10h(&ps, 0.5, false).unwrap(), 300.0);
    assert_eq!(alarms_per_10h(&ps, 0.5, true).unwrap(), 300.0);
    assert_eq!(alarms_per_10h(&ps, 0.92, true).unwrap(), 0.0);
}

#[test]
fn pr_matches_threshold_scan() {
    for seed in 0..20 {
        let ps = random_set(150, 10 + seed, seed % 2 == 0);
        let diff = (pr_auc(&ps).unwrap() - scan_average_precision(&ps)).abs();
        assert!(diff < 1e-12, "seed {seed}: {diff}");
    }
}

#[test]
fn random_scores_have_pr_near_prevalence() {
    let mut r = rng(5);
    let n = 20_000;
    let labels: Vec<u8> = (0..n).map(|_| r.gen_bool(0.05) as u8).collect();
    let scores: Vec<f64> = (0..n).map(|_| r.gen()).collect();
    let ps = set(&scores, &labels);
    let prevalence = ps.prevalence().unwrap();
    assert!((pr_auc(&ps).unwrap() - prevalence).abs() < 0.02);
    assert!((roc_auc(&ps).unwrap() - 0.5).abs() < 0.03);
}

#[test]
fn pr_invariant_to_order_of_entries() {
    let ps = random_set(400, 6, true);
    let mut idx: Vec<usize> = (0..ps.len()).collect();
    idx.shuffle(&mut rng(7));
    let scores: Vec<f64> = idx.iter().map(|&i| ps.scores[i]).collect();
    let labels: Vec<u8> = idx.iter().map(|&i| ps.labels[i]).collect();
    let shuffled = set(&scores, &labels);
    assert!((pr_auc(&ps).unwrap() - pr_auc(&shuffled).unwrap()).abs() < 1e-12);
    assert!((roc_auc(&ps).unwrap() - roc_auc(&shuffled).unwrap()).abs() < 1e-12);
}

#[test]
fn undefined_metrics_reported() {
    let ps = set(&[0.1, 0.2], &[0, 0]);
    assert!(matches!(roc_auc(&ps), Err(Error::UndefinedMetric(_))));
    assert!(matches!(pr_auc(&ps), Err(Error::UndefinedMetric(_))));
    assert!(matches!(threshold_for_sensitivity(&ps, 0.8), Err(Error::UndefinedMetric(_))));
    let nan = set(&[f64::NAN, 0.2], &[1, 0]);
    assert!(matches!(roc_auc(&nan), Err(Error::UndefinedMetric(_))));
    assert!(matches!(threshold_for_sensitivity(&set(&[0.5], &[1]), 1.5), Err(Error::Param(_))));
    let mut bad = PredictionSet::new();
    assert!(matches!(bad.push_surgery("x", &[0.1], &[1, 0], &[1]), Err(Error::Shape(_))));
}

/// Largest threshold among candidate scores with sensitivity ≥ target.
fn scan_threshold(ps: &PredictionSet, target: f64) -> f64 {
    let items: Vec<(f64, u8)> = ps.labelled().collect();
    let pos = items.iter().filter(|p| p.1 == 1).count() as f64;
    let mut best = f64::NEG_INFINITY;
    for &(thr, _) in &items {
        let tp = items.iter().filter(|p| p.0 >= thr && p.1 == 1).count() as f64;
        if tp / pos >= target && thr > best {
            best = thr;
        }
    }
    best
}

#[test]
fn threshold_matches_scan() {
    for seed in 0..20 {
        let ps = random_set(120, 40 + seed, seed % 3 == 0);
        for target in [0.1, 0.5, 0.8, 0.95, 1.0] {
            assert_eq!(threshold_for_sensitivity(&ps, target).unwrap(), scan_threshold(&ps, target));
        }
    }
}

#[test]
fn threshold_examples() {
    let ps = set(&[0.9, 0.8, 0.7, 0.6, 0.5, 0.1], &[1, 1, 1, 1, 1, 0]);
    assert_eq!(threshold_for_sensitivity(&ps, 0.8).unwrap(), 0.6);
    assert_eq!(threshold_for_sensitivity(&ps, 1.0).unwrap(), 0.5);
    let (sens, precision) = operating_point(&ps, &alarms_at(&ps, 0.6)).unwrap();
    assert_eq!(sens, 0.8);
    assert_eq!(precision, Some(1.0));
    let (sens, precision) = operating_point(&ps, &[false; 6]).unwrap();
    assert_eq!((sens, precision), (0.0, None));
}

#[test]
fn alarms_match_counting_oracle() {
    let ps = random_set(997, 8, false);
    for thr in [0.0, 0.3, 0.7, 1.2, 2.0] {
        let count = ps.scores.iter().filter(|&&s| s >= thr).count() as f64;
        let hours = 997.0 / 60.0;
        let expected = count / hours * 10.0;
        assert!((alarms_per_10h(&ps, thr, false).unwrap() - expected).abs() < 1e-9);
    }
}

#[test]
fn alarms_fall_as_threshold_rises() {
    let ps = random_set(500, 9, true);
    let mut last = f64::INFINITY;
    for k in 0..=50 {
        let rate = alarms_per_10h(&ps, -0.1 + 0.05 * f64::from(k), false).unwrap();
        assert!(rate <= last);
        last = rate;
    }
    assert_eq!(last, 0.0);
}

#[test]
fn report_fields_consistent() {
    let mut ps = PredictionSet::new();
    let mut r = rng(11);
    for s in 0..5 {
        let n = 30 + s;
        let labels: Vec<u8> = (0..n).map(|_| r.gen_bool(0.2) as u8).collect();
        let scores: Vec<f64> = labels.iter().map(|&y| r.gen::<f64>() + f64::from(y)).collect();
        let mask: Vec<u8> = (0..n).map(|_| r.gen_bool(0.9) as u8).collect();
        ps.push_surgery(&format!("s{s}"), &scores, &labels, &mask).unwrap();
    }
    let rep = report(&ps, Outcome::General, false).unwrap();
    assert_eq!(rep.n_surgeries, 5);
    assert_eq!(rep.n_samples, ps.len());
    assert_eq!(rep.roc_auc, roc_auc(&ps).unwrap());
    let json = serde_json::to_string(&rep).unwrap();
    assert!(json.contains("\"threshold_at_0.8_sens\""));
}

#[test]
fn rmse_matches_loop() {
    let mut r = rng(12);
    let a: Vec<f64> = (0..257).map(|_| r.gen_range(-3.0..3.0)).collect();
    let b: Vec<f64> = (0..257).map(|_| r.gen_range(-3.0..3.0)).collect();
    let mut sse = 0.0;
    for i in 0..a.len() {
        sse += (a[i] - b[i]).powi(2);
    }
    assert!((rmse(&a, &b).unwrap() - (sse / 257.0).sqrt()).abs() < 1e-12);
    assert!(matches!(rmse(&a, &b[1..]), Err(Error::Shape(_))));
}

proptest! {
    #[test]
    fn auc_bounded(scores in prop::collection::vec(0.0f64..1.0, 2..60), seed in 0u64..1000) {
        let mut r = rng(seed);
        let mut labels: Vec<u8> = scores.iter().map(|_| r.gen_bool(0.5) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let ps = set(&scores, &labels);
        let roc = roc_auc(&ps).unwrap();
        let pr = pr_auc(&ps).unwrap();
        prop_assert!((0.0..=1.0).contains(&roc));
        prop_assert!(pr > 0.0 && pr <= 1.0 + 1e-12);
        prop_assert!((roc - pairwise_auc(&ps)).abs() < 1e-12);
    }

    #[test]
    fn threshold_meets_target(scores in prop::collection::vec(0.0f64..1.0, 1..60), target in 0.0f64..1.0) {
        let labels = vec![1u8; scores.len()];
        let ps = set(&scores, &labels);
        let thr = threshold_for_sensitivity(&ps, target).unwrap();
        let (sens, _) = operating_point(&ps, &alarms_at(&ps, thr)).unwrap();
        prop_assert!(sens >= target);
    }

    #[test]
    fn rmse_symmetric(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..50)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!((rmse(&a, &b).unwrap() - rmse(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(rmse(&a, &b).unwrap() >= 0.0);
    }
}
