use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{LabelSpec, Outcome, WindowSpec, CHANNELS, PERSISTENT_MIN_RUN, SPO2};
use crate::error::{Error, Result};

/// Which branches of the network exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Memory encoder, reconstructor, forecaster and predictor.
    Full,
    /// Memory encoder replaced by two stacked linear layers.
    MemMinus,
    /// Forecaster removed.
    FMinus,
    /// Predictor removed; alarms come from decoded forecasts.
    RPlusF,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::MemMinus, Variant::FMinus, Variant::RPlusF];

    pub fn has_memory(self) -> bool {
        self != Variant::MemMinus
    }

    pub fn has_forecaster(self) -> bool {
        self != Variant::FMinus
    }

    pub fn has_predictor(self) -> bool {
        self != Variant::RPlusF
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::MemMinus => "mem_minus",
            Variant::FMinus => "f_minus",
            Variant::RPlusF => "r_plus_f",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Param(format!("unknown variant `{s}`")))
    }
}

/// Structural hyperparameters of the network and its labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiNetConfig {
    pub outcome: Outcome,
    pub variant: Variant,
    /// Input channels `V`.
    pub channels: usize,
    /// Observation window `W_o`.
    pub observation: usize,
    /// Prediction horizon `W_h`.
    pub horizon: usize,
    /// Forecast shift `L`.
    pub forecast_shift: usize,
    /// Memory bases `M`.
    pub bases: usize,
    /// TCN filters `F`.
    pub filters: usize,
    /// FC hidden width `H`.
    pub hidden: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub lambda: f64,
    pub dropout: f64,
    pub persistent_run: usize,
    pub spo2_channel: usize,
    pub seed: u64,
}

impl HiNetConfig {
    pub fn for_outcome(outcome: Outcome) -> Self {
        let horizon = 5;
        let (observation, forecast_shift, lambda) = match outcome {
            Outcome::Persistent => (32, horizon + 5, 0.1),
            Outcome::General => (16, horizon + 1, 0.01),
        };
        Self {
            outcome,
            variant: Variant::Full,
            channels: CHANNELS.len(),
            observation,
            horizon,
            forecast_shift,
            bases: 128,
            filters: 64,
            hidden: 128,
            kernel: 3,
            dilations: vec![2, 4, 8],
            lambda,
            dropout: 0.2,
            persistent_run: PERSISTENT_MIN_RUN,
            spo2_channel: SPO2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("observation", self.observation),
            ("horizon", self.horizon),
            ("bases", self.bases),
            ("filters", self.filters),
            ("hidden", self.hidden),
            ("kernel", self.kernel),
            ("persistent_run", self.persistent_run),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Param(format!("{name} must be positive")));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Param(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Param(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.spo2_channel >= self.channels {
            return Err(Error::Param("spo2_channel out of range".into()));
        }
        if self.dilations.is_empty() || self.dilations.iter().any(|d| !d.is_power_of_two()) {
            return Err(Error::Param(format!("dilations {:?} must be powers of two", self.dilations)));
        }
        if self.dilations.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Param(format!("dilations {:?} not strictly increasing", self.dilations)));
        }
        Ok(())
    }

    pub fn label_spec(&self) -> LabelSpec {
        LabelSpec {
            outcome: self.outcome,
            horizon: self.horizon,
            persistent_run: self.persistent_run,
            spo2_channel: self.spo2_channel,
        }
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            observation: self.observation,
            forecast_shift: self.forecast_shift,
        }
    }

    /// Consecutive low minutes that make a forecast alarm.
    pub fn alarm_run(&self) -> usize {
        self.outcome.min_run(self.persistent_run)
    }
}

/// Optimisation schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Surgeries whose windows form one optimiser step.
    pub batch_surgeries: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    /// Windows per forward/backward pass; gradients accumulate across chunks.
    pub chunk_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_surgeries: 32,
            max_epochs: 80,
            patience: 10,
            learning_rate: 1e-3,
            chunk_size: 256,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_surgeries == 0 || self.max_epochs == 0 || self.chunk_size == 0 {
            return Err(Error::Param("batch size, epochs and chunk size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Param("learning rate must be positive".into()));
        }
        Ok(())
    }
}
