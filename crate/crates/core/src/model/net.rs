//! Network assembly. All graph inputs are batched: windows are `[B, V, W]`,
//! latent vectors `[B, F]`.

use crate::data::{fill_window, forecast_target, PreparedSurgery, WindowSample};
use crate::error::{shape_err, Error, Result};
use crate::layers::{Crf, CrfParams, FcBlock, MemoryBank, StepLinear, TcnStack, NUM_LABELS};
use crate::model::config::HiNetConfig;
use crate::numcore::rng::{rng_for, stream, Rng};
use crate::numcore::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
enum InputMap {
    Memory(MemoryBank),
    /// Two stacked per-step linear layers `V → M → V`.
    Linear(StepLinear, StepLinear),
}

#[derive(Clone, Debug)]
struct Encoder {
    input: InputMap,
    tcn: TcnStack,
}

#[derive(Clone, Debug)]
struct Reconstructor {
    tcn: TcnStack,
    output: StepLinear,
}

#[derive(Clone, Debug)]
struct Forecaster {
    tcn: TcnStack,
    emission: StepLinear,
    crf: CrfParams,
}

/// The hybrid inference network with its parameter values.
#[derive(Clone, Debug)]
pub struct HiNet {
    pub config: HiNetConfig,
    pub params: ParamStore,
    encoder: Encoder,
    reconstructor: Reconstructor,
    transition: FcBlock,
    forecaster: Option<Forecaster>,
    predictor: Option<FcBlock>,
}

/// A batch of windows with their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, V, W_o]`.
    pub x: Tensor,
    pub y: Vec<f64>,
    pub m: Vec<f64>,
    pub u: Vec<Vec<u8>>,
    pub truncated: Vec<bool>,
}

impl Batch {
    /// Builds the windows `(surgery index, minute)` from prepared surgeries.
    pub fn gather(surgeries: &[PreparedSurgery], index: &[(usize, usize)], config: &HiNetConfig) -> Result<Self> {
        let (v, w) = (config.channels, config.observation);
        let mut x = vec![0.0; index.len() * v * w];
        let mut batch = Batch {
            x: Tensor::zeros(&[0]),
            y: Vec::with_capacity(index.len()),
            m: Vec::with_capacity(index.len()),
            u: Vec::with_capacity(index.len()),
            truncated: Vec::with_capacity(index.len()),
        };
        for (i, &(s, t)) in index.iter().enumerate() {
            let surgery = &surgeries[s];
            if surgery.channels() != v {
                return shape_err(format!("surgery {} has {} channels, model expects {v}", surgery.id, surgery.channels()));
            }
            fill_window(&surgery.values, t, w, &mut x[i * v * w..(i + 1) * v * w]);
            let (u, truncated) = forecast_target(&surgery.low, t, config.window_spec());
            batch.y.push(f64::from(surgery.y[t]));
            batch.m.push(f64::from(surgery.m[t]));
            batch.u.push(u);
            batch.truncated.push(truncated);
        }
        batch.x = Tensor::new(&[index.len(), v, w], x)?;
        Ok(batch)
    }

    pub fn from_samples(samples: &[WindowSample]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return shape_err("empty batch");
        };
        let shape = first.x.shape().to_vec();
        let mut x = Vec::with_capacity(samples.len() * first.x.len());
        for s in samples {
            if s.x.shape() != shape.as_slice() {
                return shape_err("windows of differing shapes in one batch");
            }
            x.extend_from_slice(s.x.data());
        }
        Ok(Batch {
            x: Tensor::new(&[samples.len(), shape[0], shape[1]], x)?,
            y: samples.iter().map(|s| f64::from(s.y)).collect(),
            m: samples.iter().map(|s| f64::from(s.m)).collect(),
            u: samples.iter().map(|s| s.u.clone()).collect(),
            truncated: samples.iter().map(|s| s.truncated).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Loss terms of one forward pass. Absent branches hold `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub predictor: Option<Var>,
    pub forecast: Option<Var>,
    pub reconstruction: Var,
}

impl HiNet {
    /// Fresh network initialised from `rng_for(config.seed, INIT)`.
    pub fn new(config: HiNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, stream::INIT);
        let mut store = ParamStore::new();
        let c = &config;
        let rng = &mut rng;
        let input = if c.variant.has_memory() {
            InputMap::Memory(MemoryBank::new(&mut store, "encoder.memory", c.bases, c.channels, rng)?)
        } else {
            InputMap::Linear(
                StepLinear::new(&mut store, "encoder.linear1", c.channels, c.bases, rng)?,
                StepLinear::new(&mut store, "encoder.linear2", c.bases, c.channels, rng)?,
            )
        };
        let tcn = |store: &mut ParamStore, name: &str, inputs: usize, rng: &mut Rng| {
            TcnStack::new(store, name, inputs, c.filters, c.kernel, &c.dilations, c.dropout, rng)
        };
        let encoder = Encoder {
            input,
            tcn: tcn(&mut store, "encoder.tcn", c.channels, rng)?,
        };
        let reconstructor = Reconstructor {
            tcn: tcn(&mut store, "reconstructor.tcn", c.filters, rng)?,
            output: StepLinear::new(&mut store, "reconstructor.output", c.filters, c.channels, rng)?,
        };
        let transition = FcBlock::new(&mut store, "transition", c.filters, c.hidden, c.filters, rng)?;
        let forecaster = if c.variant.has_forecaster() {
            Some(Forecaster {
                tcn: tcn(&mut store, "forecaster.tcn", c.filters, rng)?,
                emission: StepLinear::new(&mut store, "forecaster.emission", c.filters, NUM_LABELS, rng)?,
                crf: CrfParams::new(&mut store, "forecaster.crf", NUM_LABELS)?,
            })
        } else {
            None
        };
        let predictor = if c.variant.has_predictor() {
            Some(FcBlock::new(&mut store, "predictor", c.filters, c.hidden, 2, rng)?)
        } else {
            None
        };
        Ok(Self {
            config,
            params: store,
            encoder,
            reconstructor,
            transition,
            forecaster,
            predictor,
        })
    }

    pub fn has_forecaster(&self) -> bool {
        self.forecaster.is_some()
    }

    pub fn has_predictor(&self) -> bool {
        self.predictor.is_some()
    }

    /// Current CRF transition and start scores.
    pub fn crf_snapshot(&self) -> Option<Crf> {
        self.forecaster.as_ref().map(|f| f.crf.snapshot(&self.params))
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let shape = g.shape(x);
        let (v, w) = (self.config.channels, self.config.observation);
        if shape.len() != 3 || shape[1] != v || shape[2] != w {
            return shape_err(format!("expected windows [B, {v}, {w}], got {shape:?}"));
        }
        Ok(())
    }

    /// Latent summary `z` `[B, F]` of windows `[B, V, W_o]`.
    pub fn encode(&self, g: &mut Graph, rng: &mut Rng, x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        let store = &self.params;
        let mapped = match &self.encoder.input {
            InputMap::Memory(bank) => bank.forward(g, store, x)?.attended,
            InputMap::Linear(a, b) => {
                let h = a.forward(g, store, x)?;
                b.forward(g, store, h)?
            }
        };
        let (_, last) = self.encoder.tcn.encode(g, store, rng, mapped)?;
        Ok(last)
    }

    /// `z` copied over the window, disaggregated, projected back to `V` channels.
    pub fn reconstruct(&self, g: &mut Graph, rng: &mut Rng, z: Var) -> Result<Var> {
        let copies = g.repeat_last(z, self.config.observation);
        let h = self.reconstructor.tcn.forward(g, &self.params, rng, copies)?;
        self.reconstructor.output.forward(g, &self.params, h)
    }

    /// Patient state `p` `[B, F]`.
    pub fn transition(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.transition.forward(g, &self.params, z)
    }

    /// CRF emissions `[B, 2, W_o]` over the shifted future window.
    pub fn forecast(&self, g: &mut Graph, rng: &mut Rng, p: Var) -> Result<Var> {
        let f = self.forecaster.as_ref().ok_or_else(|| missing("forecaster", self))?;
        let copies = g.repeat_last(p, self.config.observation);
        let r = f.tcn.forward(g, &self.params, rng, copies)?;
        f.emission.forward(g, &self.params, r)
    }

    /// Positive-class probability `[B]` from a two-way softmax.
    pub fn predict(&self, g: &mut Graph, p: Var) -> Result<Var> {
        let fc = self.predictor.as_ref().ok_or_else(|| missing("predictor", self))?;
        let logits = fc.forward(g, &self.params, p)?;
        let probs = g.softmax(logits, 1)?;
        g.index_last(probs, 1)
    }

    /// `Σ_b [truncated_b = false] · NLL(u_b)` on emissions `[B, 2, W]`.
    pub fn forecast_nll(&self, g: &mut Graph, emissions: Var, u: &[Vec<u8>], truncated: &[bool]) -> Result<Var> {
        let f = self.forecaster.as_ref().ok_or_else(|| missing("forecaster", self))?;
        let w = self.config.observation;
        if let Some(bad) = u.iter().find(|t| t.len() != w) {
            return shape_err(format!("forecast target of length {} for window {w}", bad.len()));
        }
        let weights: Vec<f64> = truncated.iter().map(|&t| if t { 0.0 } else { 1.0 }).collect();
        f.crf.nll(g, &self.params, emissions, u, &weights)
    }

    /// Loss of one batch chunk. Sums are divided by `denominator` (the full
    /// batch size) and the reconstruction mean is weighted by the chunk's
    /// share, so chunk losses add up to the batch loss.
    pub fn loss(&self, g: &mut Graph, rng: &mut Rng, batch: &Batch, denominator: usize) -> Result<LossVars> {
        let n = batch.len();
        if n == 0 || denominator < n {
            return shape_err("chunk larger than its batch, or empty");
        }
        let x = g.constant(batch.x.clone());
        let z = self.encode(g, rng, x)?;
        let x_hat = self.reconstruct(g, rng, z)?;
        let mse = g.mse(x, x_hat)?;
        let reconstruction = g.scale(mse, n as f64 / denominator as f64);
        let p = self.transition(g, z)?;
        let forecast = if self.has_forecaster() {
            let e = self.forecast(g, rng, p)?;
            let nll = self.forecast_nll(g, e, &batch.u, &batch.truncated)?;
            Some(g.scale(nll, 1.0 / denominator as f64))
        } else {
            None
        };
        let predictor = if self.has_predictor() {
            let y_hat = self.predict(g, p)?;
            let lp = masked_predictor_loss(g, y_hat, &batch.y, &batch.m)?;
            Some(g.scale(lp, 1.0 / denominator as f64))
        } else {
            None
        };
        let total = joint_loss(g, predictor, forecast, reconstruction, self.config.lambda)?;
        Ok(LossVars {
            total,
            predictor,
            forecast,
            reconstruction,
        })
    }
}

fn missing(branch: &str, net: &HiNet) -> Error {
    Error::Contract(format!("variant {} has no {branch}", net.config.variant))
}

/// `Σ_b H(m_b·y_b, m_b·ŷ_b)`; masked samples add exactly 0 and no gradient.
pub fn masked_predictor_loss(g: &mut Graph, y_hat: Var, y: &[f64], m: &[f64]) -> Result<Var> {
    g.masked_bce(y_hat, y, m)
}

/// `L_P + λ(L_F + L_R)`, absent terms counting as 0.
pub fn joint_loss(g: &mut Graph, lp: Option<Var>, lf: Option<Var>, lr: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Param(format!("lambda must be non-negative, got {lambda}")));
    }
    let decoders = match lf {
        Some(lf) => g.add(lf, lr)?,
        None => lr,
    };
    let weighted = g.scale(decoders, lambda);
    match lp {
        Some(lp) => g.add(lp, weighted),
        None => Ok(weighted),
    }
}
