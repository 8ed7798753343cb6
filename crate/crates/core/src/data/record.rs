use crate::error::{shape_err, Result};
use crate::numcore::Tensor;

/// Channel names, in column order, of the 18 intraoperative time series.
pub const CHANNELS: [&str; 18] = [
    "ibp_diastolic",
    "ibp_mean",
    "ibp_systolic",
    "nibp_diastolic",
    "nibp_mean",
    "nibp_systolic",
    "heart_rate",
    "spo2",
    "respiratory_rate",
    "peep",
    "peak_pressure",
    "tidal_volume",
    "pulse",
    "etco2",
    "o2_flow",
    "n2o_flow",
    "air_flow",
    "temperature",
];

/// Index of SpO2 in [`CHANNELS`].
pub const SPO2: usize = 7;

/// One surgery's minute-resolution multichannel series.
///
/// `values` is `[V, T]`; entries whose `observed` flag is false carry no
/// information and hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SurgeryRecord {
    pub id: String,
    pub values: Tensor,
    pub observed: Vec<bool>,
}

impl SurgeryRecord {
    pub fn new(id: impl Into<String>, values: Tensor, observed: Vec<bool>) -> Result<Self> {
        if values.ndim() != 2 {
            return shape_err(format!("record values must be [V,T], got {:?}", values.shape()));
        }
        if observed.len() != values.len() {
            return shape_err("observed mask does not match values");
        }
        if values.shape()[1] == 0 {
            return shape_err("a surgery needs at least one minute");
        }
        Ok(Self {
            id: id.into(),
            values,
            observed,
        })
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn minutes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn value(&self, channel: usize, minute: usize) -> Option<f64> {
        let idx = channel * self.minutes() + minute;
        self.observed[idx].then(|| self.values.data()[idx])
    }

    /// Channel series with `None` for unobserved minutes.
    pub fn channel(&self, channel: usize) -> Vec<Option<f64>> {
        (0..self.minutes()).map(|t| self.value(channel, t)).collect()
    }
}
