//! Event detection on the raw SpO2 stream and per-minute label/mask
//! assignment for the classifier.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// SpO2 at or below this percentage is a low reading.
pub const LOW_SPO2: f64 = 90.0;

/// Default minimum run, in minutes, of a persistent event.
pub const PERSISTENT_MIN_RUN: usize = 5;

/// Which hypoxemic outcome is predicted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// Any minute with SpO2 ≤ 90%.
    General,
    /// SpO2 ≤ 90% for a run of consecutive minutes.
    Persistent,
}

impl Outcome {
    pub fn min_run(self, persistent_run: usize) -> usize {
        match self {
            Outcome::General => 1,
            Outcome::Persistent => persistent_run,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::General => "general",
            Outcome::Persistent => "persistent",
        })
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "general" => Ok(Outcome::General),
            "persistent" => Ok(Outcome::Persistent),
            other => Err(Error::Param(format!("unknown outcome `{other}`"))),
        }
    }
}

/// Inclusive minute interval `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..=self.end).contains(&t)
    }
}

/// Per-minute low-SpO2 flags. NaN (unavailable) readings are never low.
pub fn low_flags(spo2: &[f64]) -> Vec<bool> {
    spo2.iter().map(|&v| v <= LOW_SPO2).collect()
}

/// Maximal runs of low readings lasting at least `min_run` minutes.
pub fn events_from_flags(low: &[bool], min_run: usize) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < low.len() {
        if !low[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < low.len() && low[t] {
            t += 1;
        }
        if t - start >= min_run.max(1) {
            out.push(Interval { start, end: t - 1 });
        }
    }
    out
}

/// Event intervals of `outcome` on a raw SpO2 trace in percent.
pub fn label_events(spo2: &[f64], outcome: Outcome) -> Vec<Interval> {
    label_events_with_run(spo2, outcome.min_run(PERSISTENT_MIN_RUN))
}

pub fn label_events_with_run(spo2: &[f64], min_run: usize) -> Vec<Interval> {
    events_from_flags(&low_flags(spo2), min_run)
}

/// Per-minute classifier labels `y` and mask `m`.
///
/// `y_t = 1` for the `horizon` minutes right before each event start;
/// `m_t = 0` inside any event, and masking wins over a positive label.
pub fn assign_labels_and_mask(events: &[Interval], minutes: usize, horizon: usize) -> (Vec<u8>, Vec<u8>) {
    let mut y = vec![0u8; minutes];
    let mut m = vec![1u8; minutes];
    for ev in events {
        let from = ev.start.saturating_sub(horizon);
        for label in y.iter_mut().take(ev.start.min(minutes)).skip(from) {
            *label = 1;
        }
    }
    for ev in events {
        for t in ev.start..=ev.end.min(minutes.saturating_sub(1)) {
            m[t] = 0;
            y[t] = 0;
        }
    }
    (y, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn general_and_persistent_examples() {
        let s = [95.0, 95.0, 89.0, 95.0];
        assert_eq!(label_events(&s, Outcome::General), vec![Interval { start: 2, end: 2 }]);
        assert!(label_events(&s, Outcome::Persistent).is_empty());

        let s = [95.0, 89.0, 89.0, 89.0, 89.0, 89.0, 95.0];
        let want = vec![Interval { start: 1, end: 5 }];
        assert_eq!(label_events(&s, Outcome::General), want);
        assert_eq!(label_events(&s, Outcome::Persistent), want);
    }

    #[test]
    fn threshold_is_inclusive_and_nan_is_normal() {
        assert_eq!(low_flags(&[90.0, 90.0001, f64::NAN]), vec![true, false, false]);
    }

    #[test]
    fn event_at_twenty() {
        let ev = [Interval { start: 20, end: 24 }];
        let (y, m) = assign_labels_and_mask(&ev, 40, 5);
        for t in 0..40 {
            assert_eq!(y[t], u8::from((15..=19).contains(&t)), "y at {t}");
            assert_eq!(m[t], u8::from(!(20..=24).contains(&t)), "m at {t}");
        }
    }

    #[test]
    fn event_free_surgery() {
        let (y, m) = assign_labels_and_mask(&[], 12, 5);
        assert!(y.iter().all(|&v| v == 0));
        assert!(m.iter().all(|&v| v == 1));
    }

    #[test]
    fn event_near_start_clips_window() {
        let (y, m) = assign_labels_and_mask(&[Interval { start: 2, end: 3 }], 6, 5);
        assert_eq!(y, vec![1, 1, 0, 0, 0, 0]);
        assert_eq!(m, vec![1, 1, 0, 0, 1, 1]);
    }

    #[test]
    fn outcome_parses() {
        assert_eq!("general".parse::<Outcome>().unwrap(), Outcome::General);
        assert!("acute".parse::<Outcome>().is_err());
    }
}
