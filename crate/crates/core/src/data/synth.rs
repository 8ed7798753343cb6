//! Synthetic surgical cohort with controlled hypoxemia incidence.
//!
//! Channels follow discretised Ornstein–Uhlenbeck dynamics around
//! per-surgery physiological baselines. A hidden risk process nudges SpO2
//! and respiration, some surgeries carry harmless "decoy" drifts, and each
//! scheduled event is preceded by a 10–15 minute precursor (respiratory rate
//! up, tidal volume down, SpO2 drifting toward 90) before SpO2 crosses the
//! threshold. Low SpO2 readings occur only inside scheduled events, so the
//! per-surgery incidence of both outcomes is set by construction.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data::labels::{label_events, Outcome};
use crate::data::impute::impute;
use crate::data::record::{SurgeryRecord, CHANNELS, SPO2};
use crate::error::{Error, Result};
use crate::numcore::rng::{rng_for, stream, Rng};
use crate::numcore::Tensor;

/// Generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_surgeries: usize,
    /// Mean surgery length in minutes.
    pub mean_duration: f64,
    /// Fraction of surgeries with at least one general event.
    pub general_incidence: f64,
    /// Fraction of surgeries with at least one persistent event.
    pub persistent_incidence: f64,
    /// Per-entry probability that a reading is missing.
    pub missing_rate: f64,
    /// Fraction of event-free surgeries that show a precursor-like drift.
    pub decoy_rate: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_surgeries: 2000,
            mean_duration: 89.0,
            general_incidence: 0.24,
            persistent_incidence: 0.019,
            missing_rate: 0.02,
            decoy_rate: 0.25,
            seed: 7,
        }
    }
}

impl CohortSpec {
    fn validate(&self) -> Result<()> {
        let in_unit = |p: f64| p > 0.0 && p < 1.0;
        if self.n_surgeries == 0 {
            return Err(Error::Param("cohort needs at least one surgery".into()));
        }
        if !in_unit(self.general_incidence) || !in_unit(self.persistent_incidence) {
            return Err(Error::Param("incidence targets must lie in (0, 1)".into()));
        }
        if self.persistent_incidence > self.general_incidence {
            return Err(Error::Param(format!(
                "infeasible targets: persistent {} exceeds general {}",
                self.persistent_incidence, self.general_incidence
            )));
        }
        if !(0.0..1.0).contains(&self.missing_rate) || !(0.0..=1.0).contains(&self.decoy_rate) {
            return Err(Error::Param("missing and decoy rates must lie in [0, 1)".into()));
        }
        if self.mean_duration < 40.0 {
            return Err(Error::Param("mean duration must be at least 40 minutes".into()));
        }
        Ok(())
    }
}

/// Measured properties of a cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub n_surgeries: usize,
    pub total_minutes: usize,
    pub mean_duration: f64,
    pub general_incidence: f64,
    pub persistent_incidence: f64,
    /// Fraction of minutes spent inside a general event.
    pub general_minute_prevalence: f64,
    pub persistent_minute_prevalence: f64,
}

/// Incidence and prevalence measured through the same imputation and
/// event rules used for training labels.
pub fn cohort_stats(records: &[SurgeryRecord], persistent_run: usize) -> CohortStats {
    let mut total = 0;
    let (mut gen_s, mut per_s, mut gen_m, mut per_m) = (0, 0, 0, 0);
    for rec in records {
        total += rec.minutes();
        let spo2: Vec<f64> = impute(rec, Some(SPO2))
            .channel(SPO2)
            .into_iter()
            .map(|v| v.unwrap_or(f64::NAN))
            .collect();
        let general = label_events(&spo2, Outcome::General);
        let persistent = crate::data::labels::label_events_with_run(&spo2, persistent_run);
        gen_s += usize::from(!general.is_empty());
        per_s += usize::from(!persistent.is_empty());
        gen_m += general.iter().map(|e| e.len()).sum::<usize>();
        per_m += persistent.iter().map(|e| e.len()).sum::<usize>();
    }
    let n = records.len().max(1) as f64;
    let tm = total.max(1) as f64;
    CohortStats {
        n_surgeries: records.len(),
        total_minutes: total,
        mean_duration: total as f64 / n,
        general_incidence: gen_s as f64 / n,
        persistent_incidence: per_s as f64 / n,
        general_minute_prevalence: gen_m as f64 / tm,
        persistent_minute_prevalence: per_m as f64 / tm,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Quiet,
    General,
    Persistent,
}

/// Baseline mean and fluctuation scale of each channel.
const BASELINES: [(f64, f64); 18] = [
    (60.0, 5.0),   // ibp_diastolic
    (80.0, 6.0),   // ibp_mean
    (115.0, 8.0),  // ibp_systolic
    (62.0, 5.0),   // nibp_diastolic
    (82.0, 6.0),   // nibp_mean
    (118.0, 8.0),  // nibp_systolic
    (95.0, 8.0),   // heart_rate
    (98.0, 0.6),   // spo2
    (20.0, 2.5),   // respiratory_rate
    (5.0, 0.8),    // peep
    (18.0, 2.0),   // peak_pressure
    (250.0, 30.0), // tidal_volume
    (95.0, 8.0),   // pulse
    (38.0, 3.0),   // etco2
    (2.0, 0.3),    // o2_flow
    (0.5, 0.3),    // n2o_flow
    (1.5, 0.4),    // air_flow
    (36.5, 0.2),   // temperature
];

const HR: usize = 6;
const RR: usize = 8;
const PEAK: usize = 10;
const TIDAL: usize = 11;
const PULSE: usize = 12;
const ETCO2: usize = 13;

/// Per-unit-severity precursor shift of the channels it touches.
const PRECURSOR: [(usize, f64); 6] = [(RR, 9.0), (TIDAL, -70.0), (HR, 12.0), (PULSE, 12.0), (ETCO2, 5.0), (PEAK, 4.0)];

/// SpO2 outside events never reaches this level.
const SAFE_SPO2: f64 = 90.8;

#[derive(Clone, Copy, Debug)]
struct ScheduledEvent {
    start: usize,
    len: usize,
    precursor: usize,
    severity: f64,
    persistent: bool,
}

/// Generates a cohort; surgery `i` depends only on `(seed, i)` and the
/// cohort-level kind assignment.
pub fn synth_generate(spec: &CohortSpec) -> Result<Vec<SurgeryRecord>> {
    spec.validate()?;
    let n = spec.n_surgeries;
    let n_general = (n as f64 * spec.general_incidence).round() as usize;
    let n_persistent = ((n as f64 * spec.persistent_incidence).round() as usize).min(n_general);
    let mut kinds: Vec<Kind> = (0..n)
        .map(|i| {
            if i < n_persistent {
                Kind::Persistent
            } else if i < n_general {
                Kind::General
            } else {
                Kind::Quiet
            }
        })
        .collect();
    kinds.shuffle(&mut rng_for(spec.seed, stream::SYNTH));
    let width = n.to_string().len().max(5);
    kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let mut rng = rng_for(spec.seed, stream::SYNTH_SURGERY + i as u64);
            generate_surgery(format!("surgery_{i:0width$}"), kind, spec, &mut rng)
        })
        .collect()
}

fn draw_duration(spec: &CohortSpec, rng: &mut Rng) -> usize {
    const MIN: f64 = 30.0;
    let shape = 2.0;
    let gamma = Gamma::new(shape, (spec.mean_duration - MIN) / shape).expect("valid gamma");
    (MIN + gamma.sample(rng)).round().min(600.0) as usize
}

fn schedule(kind: Kind, duration: &mut usize, rng: &mut Rng) -> Vec<ScheduledEvent> {
    let mut plan: Vec<(usize, f64, bool)> = match kind {
        Kind::Quiet => Vec::new(),
        Kind::General => {
            let count = if rng.gen_bool(0.3) { 2 } else { 1 };
            (0..count).map(|_| (rng.gen_range(1..=4), 1.0, false)).collect()
        }
        Kind::Persistent => {
            let mut v = vec![(rng.gen_range(5..=14), 1.4, true)];
            if rng.gen_bool(0.3) {
                v.push((rng.gen_range(1..=4), 1.0, false));
            }
            v
        }
    };
    plan.shuffle(rng);
    const LEAD: usize = 20;
    const GAP: usize = 25;
    const TAIL: usize = 12;
    let needed: usize = LEAD + plan.iter().map(|(len, _, _)| len + GAP).sum::<usize>() + TAIL;
    if *duration < needed {
        *duration = needed + rng.gen_range(0..20);
    }
    // Spread the slack randomly in front of each event.
    let mut slack = *duration - needed;
    let mut t = LEAD;
    let count = plan.len();
    let mut out = Vec::with_capacity(count);
    for (i, (len, severity, persistent)) in plan.into_iter().enumerate() {
        let share = if i + 1 == count { slack } else { rng.gen_range(0..=slack) };
        let jitter = rng.gen_range(0..=share);
        slack -= jitter;
        t += jitter;
        out.push(ScheduledEvent {
            start: t,
            len,
            precursor: rng.gen_range(10..=15),
            severity,
            persistent,
        });
        t += len + GAP;
    }
    out
}

fn generate_surgery(id: String, kind: Kind, spec: &CohortSpec, rng: &mut Rng) -> Result<SurgeryRecord> {
    let mut t_len = draw_duration(spec, rng);
    let events = schedule(kind, &mut t_len, rng);
    let v = CHANNELS.len();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Per-surgery baselines.
    let base: Vec<f64> = BASELINES
        .iter()
        .map(|&(mu, sd)| mu + 0.5 * sd * std_normal.sample(rng))
        .collect();
    let spo2_base = base[SPO2].clamp(96.0, 99.5);

    // Hidden risk: slow OU process, positive part matters.
    let mut risk = vec![0.0; t_len];
    let mut r = 0.0;
    for slot in risk.iter_mut() {
        r += -0.05 * r + 0.3 * std_normal.sample(rng);
        *slot = r.max(0.0);
    }

    // Precursor intensity per minute in [0, 1] (events) or below (decoys).
    let mut drive = vec![0.0; t_len];
    let mut in_event = vec![false; t_len];
    let mut event_spo2 = vec![f64::NAN; t_len];
    for ev in &events {
        let from = ev.start - ev.precursor;
        for (k, t) in (from..ev.start).enumerate() {
            let phase = (k + 1) as f64 / ev.precursor as f64;
            drive[t] = f64::max(drive[t], ev.severity * phase);
        }
        let (lo, hi) = if ev.persistent { (75.0, 88.0) } else { (84.0, 89.5) };
        for t in ev.start..ev.start + ev.len {
            drive[t] = ev.severity;
            in_event[t] = true;
            event_spo2[t] = rng.gen_range(lo..hi);
        }
        // Recovery over 8 minutes.
        for k in 0..8 {
            let t = ev.start + ev.len + k;
            if t < t_len {
                drive[t] = f64::max(drive[t], ev.severity * (1.0 - (k + 1) as f64 / 9.0));
            }
        }
    }
    if events.is_empty() && rng.gen_bool(spec.decoy_rate) && t_len > 40 {
        let amp = rng.gen_range(0.3..0.7);
        let len = rng.gen_range(10..=15);
        let start = rng.gen_range(15..t_len - len - 8);
        for k in 0..len + 8 {
            let phase = if k < len {
                (k + 1) as f64 / len as f64
            } else {
                1.0 - (k - len + 1) as f64 / 9.0
            };
            drive[start + k] = f64::max(drive[start + k], amp * phase);
        }
    }

    let mut values = vec![0.0; v * t_len];
    for c in 0..v {
        let sd = BASELINES[c].1;
        let theta: f64 = 0.1;
        let ou_sd = 0.6 * sd;
        let kick = ou_sd * (2.0 * theta).sqrt();
        let mut dev = ou_sd * std_normal.sample(rng);
        let shift = PRECURSOR.iter().find(|(ch, _)| *ch == c).map(|(_, s)| *s);
        for t in 0..t_len {
            dev += -theta * dev + kick * std_normal.sample(rng);
            let noise = 0.3 * sd * std_normal.sample(rng);
            let mut x = if c == SPO2 {
                spo2_base + 0.7 * dev + 0.3 * noise - 1.2 * risk[t].min(2.0) * 0.5
            } else {
                base[c] + dev + noise
            };
            if let Some(s) = shift {
                x += s * drive[t];
            }
            if c == RR {
                x += 1.5 * risk[t];
            }
            if c == SPO2 {
                if in_event[t] {
                    x = event_spo2[t];
                } else {
                    // Drift toward the threshold while staying above it.
                    let d = drive[t].min(1.0);
                    x = x - (x - 91.5) * d.powf(1.5);
                    x = x.clamp(SAFE_SPO2, 100.0);
                }
            }
            if c != SPO2 {
                x = x.max(0.0);
            }
            values[c * t_len + t] = (x * 100.0).round() / 100.0;
        }
    }

    let mut observed = vec![true; v * t_len];
    if spec.missing_rate > 0.0 {
        for c in 0..v {
            for t in 0..t_len {
                // SpO2 stays observed through events and the minute after, so
                // imputation can neither erase nor extend an event.
                let pinned = c == SPO2 && (in_event[t] || (t > 0 && in_event[t - 1]));
                if !pinned && rng.gen_bool(spec.missing_rate) {
                    observed[c * t_len + t] = false;
                    values[c * t_len + t] = 0.0;
                }
            }
        }
    }
    SurgeryRecord::new(id, Tensor::new(&[v, t_len], values)?, observed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infeasible_targets_rejected() {
        let spec = CohortSpec {
            general_incidence: 0.01,
            persistent_incidence: 0.02,
            ..CohortSpec::default()
        };
        assert!(matches!(synth_generate(&spec), Err(Error::Param(_))));
        let spec = CohortSpec {
            general_incidence: 1.0,
            ..CohortSpec::default()
        };
        assert!(synth_generate(&spec).is_err());
    }

    #[test]
    fn zero_missingness_observes_everything() {
        let spec = CohortSpec {
            n_surgeries: 20,
            missing_rate: 0.0,
            ..CohortSpec::default()
        };
        for rec in synth_generate(&spec).unwrap() {
            assert!(rec.observed.iter().all(|&o| o));
        }
    }

    #[test]
    fn spo2_never_aberrant() {
        let spec = CohortSpec {
            n_surgeries: 60,
            ..CohortSpec::default()
        };
        for rec in synth_generate(&spec).unwrap() {
            for v in rec.channel(SPO2).into_iter().flatten() {
                assert!((60.0..=100.0).contains(&v));
            }
        }
    }
}
