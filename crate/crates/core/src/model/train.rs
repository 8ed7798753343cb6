use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{atomic_write, PreparedSurgery};
use crate::error::{Error, Result};
use crate::model::config::TrainOptions;
use crate::model::net::{Batch, HiNet};
use crate::numcore::rng::{rng_for, stream, Rng};
use crate::numcore::{AdamState, Graph, Grads};

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_lp: f64,
    pub train_lf: f64,
    pub train_lr: f64,
    /// Per-sample validation masked classification loss.
    pub val_lp: Option<f64>,
    /// Per-sample validation forecast loss (selection criterion without a predictor).
    pub val_lf: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,l_p,l_f,l_r,val_l_p,val_l_f\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10}")).unwrap_or_default();
        for r in &self.history {
            let _ = writeln!(
                s,
                "{},{:.10},{:.10},{:.10},{:.10},{},{}",
                r.epoch,
                r.train_loss,
                r.train_lp,
                r.train_lf,
                r.train_lr,
                opt(r.val_lp),
                opt(r.val_lf)
            );
        }
        s
    }
}

/// Where a non-finite loss dumps the offending batch.
#[derive(Clone, Debug, Default)]
pub struct TrainHooks {
    pub diagnostics: Option<PathBuf>,
    /// Called after every epoch.
    pub on_epoch: Option<fn(&EpochRecord)>,
}

/// Every `(surgery, minute)` window of the given surgeries.
fn window_index(surgeries: &[PreparedSurgery], which: &[usize]) -> Vec<(usize, usize)> {
    which
        .iter()
        .flat_map(|&s| (0..surgeries[s].minutes()).map(move |t| (s, t)))
        .collect()
}

/// Mean per-sample validation losses `(L_P, L_F)` in inference mode.
pub fn validation_losses(net: &HiNet, surgeries: &[PreparedSurgery], chunk: usize) -> Result<(Option<f64>, Option<f64>)> {
    let all: Vec<usize> = (0..surgeries.len()).collect();
    let index = window_index(surgeries, &all);
    if index.is_empty() {
        return Ok((None, None));
    }
    let want_lf = !net.has_predictor();
    let mut rng = rng_for(0, stream::DROPOUT);
    let (mut lp, mut lf) = (0.0, 0.0);
    for part in index.chunks(chunk.max(1)) {
        let batch = Batch::gather(surgeries, part, &net.config)?;
        let mut g = Graph::inference();
        let x = g.constant(batch.x.clone());
        let z = net.encode(&mut g, &mut rng, x)?;
        let p = net.transition(&mut g, z)?;
        if net.has_predictor() {
            let y_hat = net.predict(&mut g, p)?;
            let l = crate::model::net::masked_predictor_loss(&mut g, y_hat, &batch.y, &batch.m)?;
            lp += g.value(l).data()[0];
        }
        if want_lf {
            let e = net.forecast(&mut g, &mut rng, p)?;
            let l = net.forecast_nll(&mut g, e, &batch.u, &batch.truncated)?;
            lf += g.value(l).data()[0];
        }
    }
    let n = index.len() as f64;
    Ok((net.has_predictor().then_some(lp / n), want_lf.then_some(lf / n)))
}

fn dump_diagnostics(path: &Option<PathBuf>, heading: &str, rows: &[(String, usize)]) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let mut s = format!("{heading}\nsurgery_id,minute\n");
    for (id, t) in rows {
        let _ = writeln!(s, "{id},{t}");
    }
    atomic_write(path, s.as_bytes())
}

/// Mini-batch training with early stopping on the validation criterion;
/// the network ends holding the best-epoch parameters.
pub fn train(
    net: &mut HiNet,
    train_set: &[PreparedSurgery],
    validation: &[PreparedSurgery],
    options: &TrainOptions,
    hooks: &TrainHooks,
) -> Result<TrainReport> {
    options.validate()?;
    if train_set.iter().all(|s| s.minutes() == 0) {
        return Err(Error::Data("empty training set".into()));
    }
    if validation.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    let mut adam = AdamState::with_lr(&net.params, options.learning_rate);
    let mut grads = Grads::zeros_like(&net.params);
    let mut shuffle_rng = rng_for(net.config.seed, stream::SHUFFLE);
    let mut dropout_rng: Rng = rng_for(net.config.seed, stream::DROPOUT);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, crate::numcore::ParamStore)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=options.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 4];
        let mut seen = 0usize;
        for group in order.chunks(options.batch_surgeries) {
            let mut index = window_index(train_set, group);
            if index.is_empty() {
                continue;
            }
            index.shuffle(&mut shuffle_rng);
            grads.clear();
            let mut step_terms = [0.0f64; 4];
            for part in index.chunks(options.chunk_size) {
                let batch = Batch::gather(train_set, part, &net.config)?;
                let mut g = Graph::new();
                let loss = net.loss(&mut g, &mut dropout_rng, &batch, index.len())?;
                let value = |v: Option<crate::numcore::Var>| v.map(|v| g.value(v).data()[0]).unwrap_or(0.0);
                let terms = [
                    value(Some(loss.total)),
                    value(loss.predictor),
                    value(loss.forecast),
                    value(Some(loss.reconstruction)),
                ];
                if terms.iter().any(|t| !t.is_finite()) {
                    let ids: Vec<(String, usize)> = part.iter().map(|&(s, t)| (train_set[s].id.clone(), t)).collect();
                    let msg = format!(
                        "non-finite loss at epoch {epoch}: total={} l_p={} l_f={} l_r={}",
                        terms[0], terms[1], terms[2], terms[3]
                    );
                    dump_diagnostics(&hooks.diagnostics, &msg, &ids)?;
                    return Err(Error::NumericAbort(msg));
                }
                g.backward(loss.total)?;
                g.accumulate_param_grads(&mut grads);
                for (acc, t) in step_terms.iter_mut().zip(terms) {
                    *acc += t;
                }
            }
            if !grads.is_finite() {
                let ids: Vec<(String, usize)> = index.iter().map(|&(s, t)| (train_set[s].id.clone(), t)).collect();
                let msg = format!("non-finite gradient at epoch {epoch}");
                dump_diagnostics(&hooks.diagnostics, &msg, &ids)?;
                return Err(Error::NumericAbort(msg));
            }
            adam.step(&mut net.params, &grads)?;
            for (acc, t) in sums.iter_mut().zip(step_terms) {
                *acc += t * index.len() as f64;
            }
            seen += index.len();
        }
        let per = |s: f64| s / seen.max(1) as f64;
        let (val_lp, val_lf) = validation_losses(net, validation, options.chunk_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: per(sums[0]),
            train_lp: per(sums[1]),
            train_lf: per(sums[2]),
            train_lr: per(sums[3]),
            val_lp,
            val_lf,
        };
        if let Some(f) = hooks.on_epoch {
            f(&record);
        }
        let criterion = val_lp.or(val_lf).unwrap_or(f64::INFINITY);
        if !criterion.is_finite() {
            let msg = format!("non-finite validation loss at epoch {epoch}: val_l_p={val_lp:?} val_l_f={val_lf:?}");
            let ids: Vec<(String, usize)> = window_index(validation, &(0..validation.len()).collect::<Vec<_>>())
                .into_iter()
                .map(|(s, t)| (validation[s].id.clone(), t))
                .collect();
            dump_diagnostics(&hooks.diagnostics, &msg, &ids)?;
            return Err(Error::NumericAbort(msg));
        }
        history.push(record);
        match &best {
            Some((b, _, _)) if criterion >= *b => since_best += 1,
            _ => {
                best = Some((criterion, epoch, net.params.clone()));
                since_best = 0;
            }
        }
        if since_best >= options.patience {
            stopped_early = epoch < options.max_epochs;
            break;
        }
    }
    let (best_validation, best_epoch, params) = best.ok_or_else(|| Error::Data("no training epochs ran".into()))?;
    net.params = params;
    Ok(TrainReport {
        history,
        best_epoch,
        best_validation,
        stopped_early,
    })
}
