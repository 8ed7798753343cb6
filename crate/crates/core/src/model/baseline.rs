//! Logistic regression on per-channel window summary statistics.

use rand::seq::SliceRandom;

use crate::data::{fill_window, PreparedSurgery};
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::model::net::masked_predictor_loss;
use crate::numcore::rng::{rng_for, stream};
use crate::numcore::{AdamState, Graph, Grads, ParamStore, Tensor};

/// Statistics per channel: mean, standard deviation, min, max, last value.
pub const STATS: usize = 5;

#[derive(Clone, Debug)]
pub struct SummaryBaseline {
    pub observation: usize,
    pub channels: usize,
    pub params: ParamStore,
    layer: Linear,
}

/// Summary features of the window `[V, W]` in `window`.
pub fn summary_features(window: &[f64], channels: usize, w: usize, out: &mut Vec<f64>) {
    for c in 0..channels {
        let xs = &window[c * w..(c + 1) * w];
        let n = w as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.extend_from_slice(&[mean, var.sqrt(), min, max, xs[w - 1]]);
    }
}

impl SummaryBaseline {
    pub fn new(channels: usize, observation: usize, seed: u64) -> Result<Self> {
        if channels == 0 || observation == 0 {
            return Err(Error::Param("baseline needs channels and a window".into()));
        }
        let mut params = ParamStore::new();
        let mut rng = rng_for(seed, stream::INIT);
        let layer = Linear::new(&mut params, "baseline", channels * STATS, 2, &mut rng)?;
        Ok(Self {
            observation,
            channels,
            params,
            layer,
        })
    }

    fn features(&self, surgeries: &[PreparedSurgery], index: &[(usize, usize)]) -> Tensor {
        let (v, w) = (self.channels, self.observation);
        let mut window = vec![0.0; v * w];
        let mut feats = Vec::with_capacity(index.len() * v * STATS);
        for &(s, t) in index {
            fill_window(&surgeries[s].values, t, w, &mut window);
            summary_features(&window, v, w, &mut feats);
        }
        Tensor::new(&[index.len(), v * STATS], feats).expect("feature shape")
    }

    fn probabilities(&self, g: &mut Graph, feats: Tensor) -> Result<crate::numcore::Var> {
        let x = g.constant(feats);
        let logits = self.layer.forward(g, &self.params, x)?;
        let probs = g.softmax(logits, 1)?;
        g.index_last(probs, 1)
    }

    /// Full-batch-per-step Adam over shuffled minibatches of windows.
    pub fn fit(&mut self, surgeries: &[PreparedSurgery], epochs: usize, batch: usize, seed: u64) -> Result<()> {
        let mut index: Vec<(usize, usize)> = surgeries
            .iter()
            .enumerate()
            .flat_map(|(s, p)| (0..p.minutes()).map(move |t| (s, t)))
            .collect();
        if index.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        let mut rng = rng_for(seed, stream::SHUFFLE);
        let mut adam = AdamState::with_lr(&self.params, 1e-2);
        let mut grads = Grads::zeros_like(&self.params);
        for _ in 0..epochs {
            index.shuffle(&mut rng);
            for part in index.chunks(batch.max(1)) {
                let y: Vec<f64> = part.iter().map(|&(s, t)| f64::from(surgeries[s].y[t])).collect();
                let m: Vec<f64> = part.iter().map(|&(s, t)| f64::from(surgeries[s].m[t])).collect();
                let mut g = Graph::new();
                let p = self.probabilities(&mut g, self.features(surgeries, part))?;
                let sum = masked_predictor_loss(&mut g, p, &y, &m)?;
                let loss = g.scale(sum, 1.0 / part.len() as f64);
                g.backward(loss)?;
                grads.clear();
                g.accumulate_param_grads(&mut grads);
                adam.step(&mut self.params, &grads)?;
            }
        }
        Ok(())
    }

    pub fn infer_stream(&self, surgery: &PreparedSurgery) -> Result<Vec<f64>> {
        let index: Vec<(usize, usize)> = (0..surgery.minutes()).map(|t| (0, t)).collect();
        let mut g = Graph::inference();
        let p = self.probabilities(&mut g, self.features(std::slice::from_ref(surgery), &index))?;
        Ok(g.value(p).data().to_vec())
    }
}
