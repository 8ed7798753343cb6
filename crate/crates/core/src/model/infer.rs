use crate::data::PreparedSurgery;
use crate::error::{shape_err, Error, Result};
use crate::metrics::PredictionSet;
use crate::model::config::Variant;
use crate::model::net::{Batch, HiNet};
use crate::numcore::rng::{rng_for, stream};
use crate::numcore::{Graph, Tensor};

/// Windows per inference pass.
pub const INFER_CHUNK: usize = 512;

/// Latent vectors of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    pub z: Vec<f64>,
    pub p: Vec<f64>,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let width = t.shape().last().copied().unwrap_or(1).max(1);
    t.data().chunks(width).map(<[f64]>::to_vec).collect()
}

impl HiNet {
    fn check_surgery(&self, surgery: &PreparedSurgery) -> Result<()> {
        if surgery.channels() != self.config.channels {
            return shape_err(format!(
                "surgery {} has {} channels, model expects {}",
                surgery.id,
                surgery.channels(),
                self.config.channels
            ));
        }
        Ok(())
    }

    /// `ŷ` for each window of `x` `[B, V, W_o]`, dropout off.
    pub fn predict_windows(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut rng = rng_for(0, stream::DROPOUT);
        let mut g = Graph::inference();
        let x = g.constant(x.clone());
        let z = self.encode(&mut g, &mut rng, x)?;
        let p = self.transition(&mut g, z)?;
        let y = self.predict(&mut g, p)?;
        Ok(g.value(y).data().to_vec())
    }

    /// One prediction per minute from the zero-padded trailing window.
    pub fn infer_stream(&self, surgery: &PreparedSurgery) -> Result<Vec<f64>> {
        self.check_surgery(surgery)?;
        if !self.has_predictor() {
            return Err(Error::Contract(format!("variant {} has no predictor", self.config.variant)));
        }
        let surgeries = std::slice::from_ref(surgery);
        let index: Vec<(usize, usize)> = (0..surgery.minutes()).map(|t| (0, t)).collect();
        let mut out = Vec::with_capacity(index.len());
        for part in index.chunks(INFER_CHUNK) {
            let batch = Batch::gather(surgeries, part, &self.config)?;
            out.extend(self.predict_windows(&batch.x)?);
        }
        Ok(out)
    }

    /// Viterbi-decoded forecast target for every minute.
    pub fn decode_forecasts(&self, surgery: &PreparedSurgery) -> Result<Vec<Vec<usize>>> {
        self.check_surgery(surgery)?;
        if !self.has_forecaster() {
            return Err(Error::Contract(format!("variant {} has no forecaster", self.config.variant)));
        }
        let crf = self.crf_snapshot().expect("forecaster present");
        let surgeries = std::slice::from_ref(surgery);
        let index: Vec<(usize, usize)> = (0..surgery.minutes()).map(|t| (0, t)).collect();
        let mut rng = rng_for(0, stream::DROPOUT);
        let w = self.config.observation;
        let mut out = Vec::with_capacity(index.len());
        for part in index.chunks(INFER_CHUNK) {
            let batch = Batch::gather(surgeries, part, &self.config)?;
            let mut g = Graph::inference();
            let x = g.constant(batch.x);
            let z = self.encode(&mut g, &mut rng, x)?;
            let p = self.transition(&mut g, z)?;
            let e = self.forecast(&mut g, &mut rng, p)?;
            for em in g.value(e).data().chunks(2 * w) {
                out.push(crf.viterbi(&Tensor::new(&[2, w], em.to_vec())?)?);
            }
        }
        Ok(out)
    }

    /// Alarm at minute `t` iff the decoded forecast holds a run of low
    /// minutes meeting the outcome definition among minutes `t+1 ..= t+L`.
    pub fn detect_from_forecast(&self, surgery: &PreparedSurgery) -> Result<Vec<bool>> {
        if self.config.variant != Variant::RPlusF {
            return Err(Error::Contract(format!(
                "forecast detection needs the r_plus_f variant, model is {}",
                self.config.variant
            )));
        }
        let future = self.config.forecast_shift.min(self.config.observation);
        let run = self.config.alarm_run();
        Ok(self
            .decode_forecasts(surgery)?
            .iter()
            .map(|u| alarm_from_path(&u[u.len() - future..], run))
            .collect())
    }

    /// `z` and `p` of every window of a surgery.
    pub fn latents(&self, surgery: &PreparedSurgery) -> Result<Vec<Latent>> {
        self.check_surgery(surgery)?;
        let surgeries = std::slice::from_ref(surgery);
        let index: Vec<(usize, usize)> = (0..surgery.minutes()).map(|t| (0, t)).collect();
        let mut rng = rng_for(0, stream::DROPOUT);
        let mut out = Vec::with_capacity(index.len());
        for part in index.chunks(INFER_CHUNK) {
            let batch = Batch::gather(surgeries, part, &self.config)?;
            let mut g = Graph::inference();
            let x = g.constant(batch.x);
            let z = self.encode(&mut g, &mut rng, x)?;
            let p = self.transition(&mut g, z)?;
            let (zs, ps) = (rows(g.value(z)), rows(g.value(p)));
            out.extend(zs.into_iter().zip(ps).map(|(z, p)| Latent { z, p }));
        }
        Ok(out)
    }
}

/// Streams every surgery through the predictor.
pub fn stream_predictions(net: &HiNet, surgeries: &[PreparedSurgery]) -> Result<PredictionSet> {
    let mut ps = PredictionSet::new();
    for s in surgeries {
        ps.push_surgery(&s.id, &net.infer_stream(s)?, &s.y, &s.m)?;
    }
    Ok(ps)
}

/// Forecast-then-detect alarms of every surgery, scored as 0 or 1.
pub fn forecast_alarms(net: &HiNet, surgeries: &[PreparedSurgery]) -> Result<(PredictionSet, Vec<bool>)> {
    let mut ps = PredictionSet::new();
    let mut alarms = Vec::new();
    for s in surgeries {
        let a = net.detect_from_forecast(s)?;
        let scores: Vec<f64> = a.iter().map(|&x| f64::from(u8::from(x))).collect();
        ps.push_surgery(&s.id, &scores, &s.y, &s.m)?;
        alarms.extend(a);
    }
    Ok((ps, alarms))
}

/// True iff `path` contains `run` consecutive low labels.
pub fn alarm_from_path(path: &[usize], run: usize) -> bool {
    let mut current = 0;
    for &u in path {
        current = if u == 1 { current + 1 } else { 0 };
        if current >= run.max(1) {
            return true;
        }
    }
    false
}
