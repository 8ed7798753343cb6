use crate::data::record::SurgeryRecord;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Lower bound on a channel's standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Statistics over the available (observed or carried) entries of the
    /// given training records. Channels with no available entry get mean 0.
    pub fn fit(train: &[SurgeryRecord]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::Data("cannot fit a normalizer on an empty training set".into()))?;
        let v = first.channels();
        let mut n = vec![0usize; v];
        let mut sum = vec![0.0; v];
        for rec in train {
            if rec.channels() != v {
                return Err(Error::Data(format!("surgery {} has {} channels, expected {v}", rec.id, rec.channels())));
            }
            let t = rec.minutes();
            for c in 0..v {
                for k in 0..t {
                    if rec.observed[c * t + k] {
                        n[c] += 1;
                        sum[c] += rec.values.data()[c * t + k];
                    }
                }
            }
        }
        let mean: Vec<f64> = (0..v).map(|c| if n[c] > 0 { sum[c] / n[c] as f64 } else { 0.0 }).collect();
        let mut sq = vec![0.0; v];
        for rec in train {
            let t = rec.minutes();
            for c in 0..v {
                for k in 0..t {
                    if rec.observed[c * t + k] {
                        let d = rec.values.data()[c * t + k] - mean[c];
                        sq[c] += d * d;
                    }
                }
            }
        }
        let std = (0..v)
            .map(|c| {
                let s = if n[c] > 0 { (sq[c] / n[c] as f64).sqrt() } else { 0.0 };
                s.max(STD_FLOOR)
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// z-scores available entries; unavailable entries are 0 in normalised
    /// units.
    pub fn apply(&self, record: &SurgeryRecord) -> Result<SurgeryRecord> {
        let v = record.channels();
        if v != self.channels() {
            return Err(Error::Data(format!(
                "surgery {} has {v} channels, normalizer expects {}",
                record.id,
                self.channels()
            )));
        }
        let t = record.minutes();
        let mut out = record.clone();
        for c in 0..v {
            for k in 0..t {
                let idx = c * t + k;
                out.values.data_mut()[idx] = if record.observed[idx] {
                    (record.values.data()[idx] - self.mean[c]) / self.std[c]
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn rec(rows: &[Vec<f64>]) -> SurgeryRecord {
        let t = Tensor::from_rows(rows).unwrap();
        let n = t.len();
        SurgeryRecord::new("r", t, vec![true; n]).unwrap()
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let r = rec(&[vec![5.0; 8]]);
        let norm = Normalizer::fit(std::slice::from_ref(&r)).unwrap();
        assert_eq!(norm.std[0], STD_FLOOR);
        assert!(norm.apply(&r).unwrap().values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardised_channel_unchanged() {
        let r = rec(&[vec![-1.0, 1.0, -1.0, 1.0]]);
        let norm = Normalizer::fit(std::slice::from_ref(&r)).unwrap();
        let out = norm.apply(&r).unwrap();
        assert!(out.values.max_abs_diff(&r.values) < 1e-9);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(matches!(Normalizer::fit(&[]), Err(Error::Data(_))));
    }
}
