//! Window extraction: for every minute `t` the observation window covers
//! minutes `t−W_o+1 ..= t` (zero columns before the surgery starts) and the
//! forecast target covers minutes `t−W_o+L+1 ..= t+L`. Minutes are 0-based.

use crate::data::impute::impute;
use crate::data::labels::{assign_labels_and_mask, events_from_flags, Interval, Outcome};
use crate::data::normalize::Normalizer;
use crate::data::record::SurgeryRecord;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Labelling options shared by preprocessing and evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelSpec {
    pub outcome: Outcome,
    /// Prediction horizon `W_h` in minutes.
    pub horizon: usize,
    /// Minimum run of a persistent event.
    pub persistent_run: usize,
    pub spo2_channel: usize,
}

/// A surgery ready for window extraction.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSurgery {
    pub id: String,
    /// Normalised `[V, T]` inputs.
    pub values: Tensor,
    /// Imputed SpO2 in percent, NaN where unavailable.
    pub spo2: Vec<f64>,
    /// Per-minute low-SpO2 instance flags (forecast targets).
    pub low: Vec<bool>,
    pub events: Vec<Interval>,
    pub y: Vec<u8>,
    pub m: Vec<u8>,
}

impl PreparedSurgery {
    pub fn minutes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }
}

/// Imputes, labels from the raw SpO2 stream, then normalises.
pub fn prepare(record: &SurgeryRecord, normalizer: &Normalizer, spec: &LabelSpec) -> Result<PreparedSurgery> {
    if spec.spo2_channel >= record.channels() {
        return Err(Error::Data(format!(
            "SpO2 channel {} out of range for {} channels",
            spec.spo2_channel,
            record.channels()
        )));
    }
    let imputed = impute(record, Some(spec.spo2_channel));
    let spo2: Vec<f64> = imputed
        .channel(spec.spo2_channel)
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    let low = crate::data::labels::low_flags(&spo2);
    let events = events_from_flags(&low, spec.outcome.min_run(spec.persistent_run));
    let (y, m) = assign_labels_and_mask(&events, record.minutes(), spec.horizon);
    let values = normalizer.apply(&imputed)?.values;
    Ok(PreparedSurgery {
        id: record.id.clone(),
        values,
        spo2,
        low,
        events,
        y,
        m,
    })
}

/// One training/evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// `[V, W_o]`.
    pub x: Tensor,
    pub y: u8,
    pub m: u8,
    /// Low-SpO2 flags over the forecast window; 0 beyond surgery end.
    pub u: Vec<u8>,
    /// The forecast window runs past the end of the surgery.
    pub truncated: bool,
    pub surgery_id: String,
    pub t: usize,
}

/// Window geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub observation: usize,
    pub forecast_shift: usize,
}

/// Writes the `[V, W_o]` window ending at minute `t` into `out`.
pub fn fill_window(values: &Tensor, t: usize, w_o: usize, out: &mut [f64]) {
    let (v, t_len) = (values.shape()[0], values.shape()[1]);
    debug_assert!(t < t_len && out.len() == v * w_o);
    let src = values.data();
    for c in 0..v {
        for k in 0..w_o {
            // column k holds minute t − w_o + 1 + k
            let minute = (t + 1 + k) as isize - w_o as isize;
            out[c * w_o + k] = if minute >= 0 { src[c * t_len + minute as usize] } else { 0.0 };
        }
    }
}

/// Forecast targets for the window ending at `t`, plus the truncation flag.
pub fn forecast_target(low: &[bool], t: usize, spec: WindowSpec) -> (Vec<u8>, bool) {
    let t_len = low.len() as isize;
    let u = (0..spec.observation)
        .map(|k| {
            let minute = t as isize - spec.observation as isize + 1 + k as isize + spec.forecast_shift as isize;
            u8::from(minute >= 0 && minute < t_len && low[minute as usize])
        })
        .collect();
    (u, t + spec.forecast_shift >= low.len())
}

/// Every per-minute window of a surgery, in minute order.
pub fn extract_windows(surgery: &PreparedSurgery, spec: WindowSpec) -> impl Iterator<Item = WindowSample> + '_ {
    let v = surgery.channels();
    (0..surgery.minutes()).map(move |t| {
        let mut x = vec![0.0; v * spec.observation];
        fill_window(&surgery.values, t, spec.observation, &mut x);
        let (u, truncated) = forecast_target(&surgery.low, t, spec);
        WindowSample {
            x: Tensor::new(&[v, spec.observation], x).expect("window shape"),
            y: surgery.y[t],
            m: surgery.m[t],
            u,
            truncated,
            surgery_id: surgery.id.clone(),
            t,
        }
    })
}
