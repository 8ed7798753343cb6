//! Evaluation of per-minute predictions.
//!
//! Label-dependent quantities use only entries with `mask = 1`; alarm
//! accounting counts every monitored minute unless asked otherwise.

use serde::{Deserialize, Serialize};

use crate::data::Outcome;
use crate::error::{Error, Result};

/// Aligned per-minute predictions of one or more surgeries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub mask: Vec<u8>,
    pub surgery_ids: Vec<String>,
    pub minutes: Vec<usize>,
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one surgery's minutes `0..scores.len()`.
    pub fn push_surgery(&mut self, id: &str, scores: &[f64], labels: &[u8], mask: &[u8]) -> Result<()> {
        if labels.len() != scores.len() || mask.len() != scores.len() {
            return Err(Error::Shape(format!(
                "surgery {id}: {} scores, {} labels, {} mask entries",
                scores.len(),
                labels.len(),
                mask.len()
            )));
        }
        if labels.iter().chain(mask).any(|&v| v > 1) {
            return Err(Error::Data(format!("surgery {id}: labels and mask must be 0 or 1")));
        }
        self.scores.extend_from_slice(scores);
        self.labels.extend_from_slice(labels);
        self.mask.extend_from_slice(mask);
        self.surgery_ids.extend(std::iter::repeat(id.to_string()).take(scores.len()));
        self.minutes.extend(0..scores.len());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Every entry is one monitored minute.
    pub fn total_minutes(&self) -> usize {
        self.scores.len()
    }

    pub fn n_surgeries(&self) -> usize {
        let mut n = 0;
        for (i, id) in self.surgery_ids.iter().enumerate() {
            if i == 0 || self.surgery_ids[i - 1] != *id {
                n += 1;
            }
        }
        n
    }

    /// `(score, label)` of labelled entries.
    pub fn labelled(&self) -> impl Iterator<Item = (f64, u8)> + '_ {
        (0..self.len())
            .filter(|&i| self.mask[i] == 1)
            .map(|i| (self.scores[i], self.labels[i]))
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labelled().filter(|&(_, y)| y == 1).count();
        (pos, self.labelled().count() - pos)
    }

    /// Fraction of labelled entries that are positive.
    pub fn prevalence(&self) -> Result<f64> {
        let (pos, neg) = self.class_counts();
        if pos + neg == 0 {
            return Err(Error::UndefinedMetric("no labelled entries".into()));
        }
        Ok(pos as f64 / (pos + neg) as f64)
    }
}

fn check_scores(scores: impl Iterator<Item = f64>) -> Result<()> {
    for s in scores {
        if s.is_nan() {
            return Err(Error::UndefinedMetric("NaN score".into()));
        }
    }
    Ok(())
}

/// Mann–Whitney ROC-AUC with midranks for ties.
pub fn roc_auc(ps: &PredictionSet) -> Result<f64> {
    let mut pairs: Vec<(f64, u8)> = ps.labelled().collect();
    check_scores(pairs.iter().map(|p| p.0))?;
    let pos = pairs.iter().filter(|p| p.1 == 1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC-AUC needs both classes, have {pos} positive and {neg} negative"
        )));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        let tied_pos = pairs[i..=j].iter().filter(|p| p.1 == 1).count();
        rank_sum += midrank * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Step-wise average precision `Σ (R_k − R_{k−1}) · P_k` over distinct
/// score thresholds, highest first.
pub fn pr_auc(ps: &PredictionSet) -> Result<f64> {
    let mut pairs: Vec<(f64, u8)> = ps.labelled().collect();
    check_scores(pairs.iter().map(|p| p.0))?;
    let pos = pairs.iter().filter(|p| p.1 == 1).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("PR-AUC needs at least one positive".into()));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        let new_tp = pairs[i..=j].iter().filter(|p| p.1 == 1).count();
        seen += j - i + 1;
        if new_tp > 0 {
            tp += new_tp;
            ap += (new_tp as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
        i = j + 1;
    }
    Ok(ap)
}

/// Largest threshold whose sensitivity over labelled entries is at least
/// `target` (alarm when `score ≥ threshold`).
pub fn threshold_for_sensitivity(ps: &PredictionSet, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Param(format!("target sensitivity {target} outside [0, 1]")));
    }
    let mut pos: Vec<f64> = ps.labelled().filter(|&(_, y)| y == 1).map(|(s, _)| s).collect();
    check_scores(pos.iter().copied())?;
    if pos.is_empty() {
        return Err(Error::UndefinedMetric("sensitivity needs at least one positive".into()));
    }
    pos.sort_by(|a, b| b.total_cmp(a));
    let n = pos.len();
    let k = (1..=n).find(|&k| k as f64 / n as f64 >= target).unwrap_or(n);
    Ok(pos[k - 1])
}

/// Sensitivity and precision over labelled entries of the alarm rule
/// `alarm[i]`. Precision is `None` when nothing alarms.
pub fn operating_point(ps: &PredictionSet, alarms: &[bool]) -> Result<(f64, Option<f64>)> {
    if alarms.len() != ps.len() {
        return Err(Error::Shape("one alarm flag per prediction".into()));
    }
    let (mut tp, mut fp, mut pos) = (0usize, 0usize, 0usize);
    for i in (0..ps.len()).filter(|&i| ps.mask[i] == 1) {
        let y = ps.labels[i] == 1;
        pos += usize::from(y);
        if alarms[i] {
            if y {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    if pos == 0 {
        return Err(Error::UndefinedMetric("sensitivity needs at least one positive".into()));
    }
    let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    Ok((tp as f64 / pos as f64, precision))
}

/// Alarm flags `score ≥ threshold`.
pub fn alarms_at(ps: &PredictionSet, threshold: f64) -> Vec<bool> {
    ps.scores.iter().map(|&s| s >= threshold).collect()
}

/// Minutes with `score ≥ threshold` per 600 monitored minutes. With
/// `labelled_only`, masked minutes neither alarm nor count as time.
pub fn alarms_per_10h(ps: &PredictionSet, threshold: f64, labelled_only: bool) -> Result<f64> {
    let keep = |i: usize| !labelled_only || ps.mask[i] == 1;
    let minutes = (0..ps.len()).filter(|&i| keep(i)).count();
    if minutes == 0 {
        return Err(Error::UndefinedMetric("no monitored time".into()));
    }
    let alarms = (0..ps.len()).filter(|&i| keep(i) && ps.scores[i] >= threshold).count();
    Ok(alarms as f64 * 600.0 / minutes as f64)
}

pub fn rmse(forecast: &[f64], truth: &[f64]) -> Result<f64> {
    if forecast.len() != truth.len() {
        return Err(Error::Shape(format!("rmse of {} vs {} values", forecast.len(), truth.len())));
    }
    if forecast.is_empty() {
        return Err(Error::UndefinedMetric("rmse of nothing".into()));
    }
    let sse: f64 = forecast.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / forecast.len() as f64).sqrt())
}

/// Summary of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub outcome: Outcome,
    pub roc_auc: f64,
    pub pr_auc: f64,
    #[serde(rename = "threshold_at_0.8_sens")]
    pub threshold_at_0_8_sens: f64,
    pub alarms_per_10h: f64,
    pub n_surgeries: usize,
    pub n_samples: usize,
    pub prevalence: f64,
}

pub fn report(ps: &PredictionSet, outcome: Outcome, labelled_only_alarms: bool) -> Result<MetricsReport> {
    let threshold = threshold_for_sensitivity(ps, 0.8)?;
    Ok(MetricsReport {
        outcome,
        roc_auc: roc_auc(ps)?,
        pr_auc: pr_auc(ps)?,
        threshold_at_0_8_sens: threshold,
        alarms_per_10h: alarms_per_10h(ps, threshold, labelled_only_alarms)?,
        n_surgeries: ps.n_surgeries(),
        n_samples: ps.len(),
        prevalence: ps.prevalence()?,
    })
}
