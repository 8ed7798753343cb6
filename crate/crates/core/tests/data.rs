mod common;

use common::{brute_events, brute_labels, random_trace};
use std::collections::HashSet;

use hinet::data::{
    assign_labels_and_mask, cohort_stats, extract_windows, impute, label_events, prepare, read_cohort,
    read_surgery, split_cohort, synth_generate, write_cohort, write_surgery, CohortSpec, Interval, LabelSpec,
    Normalizer, Outcome, PreparedSurgery, SurgeryRecord, WindowSpec, CHANNELS, SPO2,
};
use hinet::numcore::Tensor;
use hinet::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(id: &str, rows: &[Vec<Option<f64>>]) -> SurgeryRecord {
    let t = rows[0].len();
    let values = rows.iter().flatten().map(|v| v.unwrap_or(0.0)).collect();
    let observed = rows.iter().flatten().map(Option::is_some).collect();
    SurgeryRecord::new(id, Tensor::new(&[rows.len(), t], values).unwrap(), observed).unwrap()
}

#[test]
fn imputation_carries_twenty_minutes() {
    let mut spo2 = vec![None; 40];
    spo2[10] = Some(97.0);
    let rec = record("a", &[spo2]);
    let out = impute(&rec, Some(0));
    for t in 0..10 {
        assert_eq!(out.value(0, t), None);
        assert_eq!(out.values.at(&[0, t]), 0.0);
    }
    for t in 10..=30 {
        assert_eq!(out.value(0, t), Some(97.0), "minute {t}");
    }
    for t in 31..40 {
        assert_eq!(out.values.at(&[0, t]), 0.0);
    }
}

#[test]
fn imputation_examples() {
    let never = record("n", &[vec![None; 5]]);
    assert!(impute(&never, None).values.data().iter().all(|&v| v == 0.0));
    let full = record("f", &[vec![Some(1.0), Some(2.0), Some(3.0)]]);
    assert_eq!(impute(&full, None), full);
    let aberrant = record("s", &[vec![Some(95.0), Some(40.0), Some(96.0)]]);
    assert_eq!(impute(&aberrant, Some(0)).value(0, 1), Some(95.0));
}

#[test]
fn normalized_training_data_has_unit_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<SurgeryRecord> = (0..5)
        .map(|i| {
            let rows: Vec<Vec<Option<f64>>> = (0..3)
                .map(|c| (0..30).map(|_| Some(10.0 * c as f64 + rng.gen_range(-3.0..3.0))).collect())
                .collect();
            record(&format!("s{i}"), &rows)
        })
        .collect();
    let norm = Normalizer::fit(&records).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = records
            .iter()
            .flat_map(|r| norm.apply(r).unwrap().values.data()[c * 30..(c + 1) * 30].to_vec())
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9, "channel {c}: {mean} {var}");
    }
    assert!(matches!(Normalizer::fit(&[]), Err(Error::Data(_))));
}

#[test]
fn normalizer_ignores_held_out_records() {
    let train = vec![record("t", &[vec![Some(1.0), Some(3.0)]])];
    let held_out = record("h", &[vec![Some(100.0), Some(300.0)]]);
    let norm = Normalizer::fit(&train).unwrap();
    assert_eq!(norm, Normalizer::fit(&train).unwrap());
    assert_eq!(norm.mean, vec![2.0]);
    assert_eq!(norm.std, vec![1.0]);
    assert_eq!(norm.apply(&held_out).unwrap().values.data(), &[98.0, 298.0]);
}

#[test]
fn labeling_examples() {
    let g = label_events(&[95.0, 95.0, 89.0, 95.0], Outcome::General);
    assert_eq!(g, vec![Interval { start: 2, end: 2 }]);
    assert!(label_events(&[95.0, 95.0, 89.0, 95.0], Outcome::Persistent).is_empty());
    let trace = [95.0, 89.0, 89.0, 89.0, 89.0, 89.0, 95.0];
    let want = vec![Interval { start: 1, end: 5 }];
    assert_eq!(label_events(&trace, Outcome::General), want);
    assert_eq!(label_events(&trace, Outcome::Persistent), want);

    let event = [Interval { start: 20, end: 24 }];
    let (y, m) = assign_labels_and_mask(&event, 40, 5);
    for t in 0..40 {
        assert_eq!(y[t], u8::from((15..=19).contains(&t)), "y at {t}");
        assert_eq!(m[t], u8::from(!(20..=24).contains(&t)), "m at {t}");
    }
    let (y, m) = assign_labels_and_mask(&[], 10, 5);
    assert!(y.iter().all(|&v| v == 0) && m.iter().all(|&v| v == 1));
}

#[test]
fn back_to_back_events() {
    let events = [Interval { start: 10, end: 14 }, Interval { start: 18, end: 25 }];
    let (y, m) = assign_labels_and_mask(&events, 30, 5);
    for t in 15..18 {
        assert_eq!((y[t], m[t]), (1, 1), "minute {t}");
    }
    assert_eq!((y, m), brute_labels(&events, 30, 5));
}

#[test]
fn labeling_matches_brute_force_on_random_traces() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let trace = random_trace(&mut rng);
        for (outcome, run) in [(Outcome::General, 1), (Outcome::Persistent, 5)] {
            let events = label_events(&trace, outcome);
            assert_eq!(events, brute_events(&trace, run));
            let (y, m) = assign_labels_and_mask(&events, trace.len(), 5);
            assert_eq!((y.clone(), m.clone()), brute_labels(&events, trace.len(), 5));
            // m=0 only inside events; y=1 with m=1 only before an event start.
            for t in 0..trace.len() {
                if m[t] == 0 {
                    assert!(events.iter().any(|e| e.contains(t)));
                }
                if y[t] == 1 && m[t] == 1 {
                    assert!(events.iter().any(|e| e.start > t && e.start <= t + 5));
                }
            }
        }
        let general = label_events(&trace, Outcome::General);
        for p in label_events(&trace, Outcome::Persistent) {
            assert!(general.contains(&p));
        }
    }
}

fn prepared(spo2: &[f64], channels: usize, outcome: Outcome) -> PreparedSurgery {
    let t = spo2.len();
    let mut rows = vec![vec![Some(1.0); t]; channels];
    rows[SPO2.min(channels - 1)] = spo2.iter().map(|&v| Some(v)).collect();
    let rec = record("p", &rows);
    let norm = Normalizer::fit(std::slice::from_ref(&rec)).unwrap();
    let spec = LabelSpec {
        outcome,
        horizon: 5,
        persistent_run: 5,
        spo2_channel: SPO2.min(channels - 1),
    };
    prepare(&rec, &norm, &spec).unwrap()
}

#[test]
fn windows_are_zero_padded() {
    let trace: Vec<f64> = (0..40).map(|t| 95.0 + (t % 3) as f64).collect();
    let surgery = prepared(&trace, 18, Outcome::General);
    let spec = WindowSpec {
        observation: 16,
        forecast_shift: 6,
    };
    let samples: Vec<_> = extract_windows(&surgery, spec).collect();
    assert_eq!(samples.len(), 40);
    // The third minute (index 2) leaves 13 leading zero columns.
    let w = &samples[2];
    assert_eq!(w.x.shape(), &[18, 16]);
    for c in 0..18 {
        for k in 0..16 {
            let want = if k < 13 { 0.0 } else { surgery.values.at(&[c, k - 13]) };
            assert_eq!(w.x.at(&[c, k]), want);
        }
    }
    assert!(samples.iter().enumerate().all(|(t, s)| s.t == t));
    assert!(samples[34].truncated && !samples[33].truncated);
}

#[test]
fn forecast_target_alignment() {
    let spec = WindowSpec {
        observation: 16,
        forecast_shift: 6,
    };
    for tau in [0usize, 7, 20, 49] {
        let mut trace = vec![97.0; 50];
        trace[tau] = 85.0;
        let surgery = prepared(&trace, 3, Outcome::General);
        for s in extract_windows(&surgery, spec) {
            for (k, &u) in s.u.iter().enumerate() {
                let minute = s.t as isize - 16 + 1 + k as isize + 6;
                assert_eq!(u == 1, minute == tau as isize, "t={} k={k}", s.t);
            }
        }
    }
}

#[test]
fn targets_reproduce_thresholded_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trace = random_trace(&mut rng);
    let surgery = prepared(&trace, 2, Outcome::General);
    let spec = WindowSpec {
        observation: 8,
        forecast_shift: 3,
    };
    let mut rebuilt = vec![None; trace.len()];
    for s in extract_windows(&surgery, spec) {
        for (k, &u) in s.u.iter().enumerate() {
            let minute = s.t as isize - 8 + 1 + k as isize + 3;
            if (0..trace.len() as isize).contains(&minute) {
                let slot = &mut rebuilt[minute as usize];
                assert!(slot.is_none() || *slot == Some(u));
                *slot = Some(u);
            }
        }
    }
    for (t, v) in trace.iter().enumerate() {
        assert_eq!(rebuilt[t], Some(u8::from(*v <= 90.0)));
    }
}

#[test]
fn splits_are_disjoint_and_exhaustive() {
    let ids: Vec<String> = (0..57).map(|i| format!("s{i}")).collect();
    for seed in 0..100 {
        let split = split_cohort(&ids, seed).unwrap();
        let all: Vec<&String> = split.train.iter().chain(&split.validation).chain(&split.test).collect();
        let unique: HashSet<&String> = all.iter().copied().collect();
        assert_eq!(all.len(), ids.len());
        assert_eq!(unique.len(), ids.len());
    }
    let ten: Vec<String> = (0..10).map(|i| i.to_string()).collect();
    let s = split_cohort(&ten, 1).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 1, 2));
    assert_eq!(s, split_cohort(&ten, 1).unwrap());
}

#[test]
fn synthetic_incidence_hits_targets() {
    let spec = CohortSpec::default();
    let cohort = synth_generate(&spec).unwrap();
    assert_eq!(cohort.len(), 2000);
    let stats = cohort_stats(&cohort, 5);
    assert!((stats.general_incidence - 0.24).abs() <= 0.03, "{stats:?}");
    assert!((stats.persistent_incidence - 0.019).abs() <= 0.01, "{stats:?}");
    assert!((stats.mean_duration - 89.0).abs() < 10.0, "{stats:?}");
    for rec in &cohort {
        assert_eq!(rec.channels(), CHANNELS.len());
    }
}

#[test]
fn synthetic_cohort_round_trips_through_csv() {
    let spec = CohortSpec {
        n_surgeries: 12,
        ..CohortSpec::default()
    };
    let cohort = synth_generate(&spec).unwrap();
    assert_eq!(cohort, synth_generate(&spec).unwrap());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_cohort(a.path(), &cohort).unwrap();
    write_cohort(b.path(), &synth_generate(&spec).unwrap()).unwrap();
    for rec in &cohort {
        let name = format!("{}.csv", rec.id);
        assert_eq!(
            std::fs::read(a.path().join(&name)).unwrap(),
            std::fs::read(b.path().join(&name)).unwrap()
        );
    }
    assert_eq!(read_cohort(a.path()).unwrap(), cohort);
}

#[test]
fn malformed_csv_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let rec = record("x", &vec![vec![Some(1.0), None]; 18]);
    let path = dir.path().join("x.csv");
    write_surgery(&path, &rec).unwrap();
    assert_eq!(read_surgery(&path).unwrap(), rec);
    let text = std::fs::read_to_string(&path).unwrap().replacen("1.00", "abc", 1);
    std::fs::write(&path, text).unwrap();
    match read_surgery(&path) {
        Err(Error::Malformed { msg, .. }) => assert!(msg.contains("line 2") && msg.contains("ibp_diastolic"), "{msg}"),
        other => panic!("expected malformed error, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn labeling_is_pure(trace in prop::collection::vec(80.0f64..100.0, 1..60)) {
        let a = label_events(&trace, Outcome::General);
        let b = label_events(&trace, Outcome::General);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(assign_labels_and_mask(&a, trace.len(), 5), assign_labels_and_mask(&b, trace.len(), 5));
    }

    #[test]
    fn every_minute_yields_one_window(t_len in 1usize..50, w_o in 1usize..20, shift in 0usize..12) {
        let trace = vec![96.0; t_len];
        let surgery = prepared(&trace, 2, Outcome::Persistent);
        let spec = WindowSpec { observation: w_o, forecast_shift: shift };
        let samples: Vec<_> = extract_windows(&surgery, spec).collect();
        prop_assert_eq!(samples.len(), t_len);
        for s in &samples {
            prop_assert_eq!(s.u.len(), w_o);
            prop_assert_eq!(s.truncated, s.t + shift >= t_len);
        }
    }
}
