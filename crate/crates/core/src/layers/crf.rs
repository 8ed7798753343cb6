//! Linear-chain conditional random field over per-step label emissions.
//!
//! A label sequence `u` of length `W` scores
//! `S(u) = start[u₀] + Σ_k e[u_k, k] + Σ_{k≥1} trans[u_{k−1}, u_k]`
//! and has probability `exp(S(u)) / Z`. Emissions are laid out `[S, W]`.

use crate::error::{shape_err, Error, Result};
use crate::numcore::log_sum_exp;
use crate::numcore::{Graph, ParamId, ParamStore, Tensor, Var};

/// Normal / low SpO2.
pub const NUM_LABELS: usize = 2;

/// Parameter handles of a CRF layer.
#[derive(Clone, Debug)]
pub struct CrfParams {
    /// `[S, S]`, row = previous label.
    pub transitions: ParamId,
    pub start: ParamId,
    pub labels: usize,
}

impl CrfParams {
    pub fn new(store: &mut ParamStore, name: &str, labels: usize) -> Result<Self> {
        Ok(Self {
            transitions: store.register(format!("{name}.transitions"), Tensor::zeros(&[labels, labels]))?,
            start: store.register(format!("{name}.start"), Tensor::zeros(&[labels]))?,
            labels,
        })
    }

    /// Value snapshot for decoding.
    pub fn snapshot(&self, store: &ParamStore) -> Crf {
        Crf {
            transitions: store.get(self.transitions).clone(),
            start: store.get(self.start).clone(),
        }
    }

    /// Weighted sum of per-sample negative log-likelihoods on a batch of
    /// emissions `[B, S, W]`. Zero-weight samples contribute nothing.
    pub fn nll(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        emissions: Var,
        targets: &[Vec<u8>],
        weights: &[f64],
    ) -> Result<Var> {
        let trans = g.param(store, self.transitions);
        let start = g.param(store, self.start);
        crf_nll_batch(g, emissions, trans, start, targets, weights)
    }
}

/// CRF parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Crf {
    pub transitions: Tensor,
    pub start: Tensor,
}

impl Crf {
    pub fn new(transitions: Tensor, start: Tensor) -> Result<Self> {
        let s = start.len();
        if transitions.shape() != [s, s] {
            return shape_err(format!(
                "transitions {:?} do not match {s} labels",
                transitions.shape()
            ));
        }
        Ok(Self { transitions, start })
    }

    pub fn zeros(labels: usize) -> Self {
        Self {
            transitions: Tensor::zeros(&[labels, labels]),
            start: Tensor::zeros(&[labels]),
        }
    }

    pub fn labels(&self) -> usize {
        self.start.len()
    }

    fn view<'a>(&'a self, emissions: &'a Tensor) -> Result<Chain<'a>> {
        let s = self.labels();
        if emissions.ndim() != 2 || emissions.shape()[0] != s {
            return shape_err(format!("emissions {:?} must be [{s}, W]", emissions.shape()));
        }
        let w = emissions.shape()[1];
        if w == 0 {
            return Err(Error::Contract("CRF needs at least one step".into()));
        }
        Ok(Chain {
            emis: emissions.data(),
            trans: self.transitions.data(),
            start: self.start.data(),
            s,
            w,
        })
    }

    /// `log Z` by the forward algorithm in log space.
    pub fn log_partition(&self, emissions: &Tensor) -> Result<f64> {
        Ok(self.view(emissions)?.log_partition())
    }

    /// Unnormalised score `S(u)`.
    pub fn score(&self, emissions: &Tensor, labels: &[usize]) -> Result<f64> {
        let chain = self.view(emissions)?;
        chain.check_labels(labels)?;
        Ok(chain.score(labels))
    }

    /// `log Z − S(u)`.
    pub fn nll(&self, emissions: &Tensor, labels: &[usize]) -> Result<f64> {
        let chain = self.view(emissions)?;
        chain.check_labels(labels)?;
        Ok(chain.log_partition() - chain.score(labels))
    }

    /// Highest-scoring label sequence. Ties resolve toward the lower label,
    /// both for the final label and for every back-pointer.
    pub fn viterbi(&self, emissions: &Tensor) -> Result<Vec<usize>> {
        Ok(self.view(emissions)?.viterbi())
    }
}

struct Chain<'a> {
    emis: &'a [f64],
    trans: &'a [f64],
    start: &'a [f64],
    s: usize,
    w: usize,
}

impl Chain<'_> {
    fn e(&self, label: usize, step: usize) -> f64 {
        self.emis[label * self.w + step]
    }

    fn t(&self, prev: usize, next: usize) -> f64 {
        self.trans[prev * self.s + next]
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.w {
            return shape_err(format!("{} labels for {} steps", labels.len(), self.w));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= self.s) {
            return Err(Error::Contract(format!("label {bad} outside 0..{}", self.s)));
        }
        Ok(())
    }

    fn score(&self, labels: &[usize]) -> f64 {
        let mut s = self.start[labels[0]] + self.e(labels[0], 0);
        for k in 1..self.w {
            s += self.t(labels[k - 1], labels[k]) + self.e(labels[k], k);
        }
        s
    }

    /// Forward log-messages `alpha[k][s]`.
    fn forward(&self) -> Vec<Vec<f64>> {
        let mut alpha = Vec::with_capacity(self.w);
        alpha.push((0..self.s).map(|l| self.start[l] + self.e(l, 0)).collect::<Vec<_>>());
        let mut buf = vec![0.0; self.s];
        for k in 1..self.w {
            let prev = &alpha[k - 1];
            let next: Vec<f64> = (0..self.s)
                .map(|n| {
                    for (p, b) in buf.iter_mut().enumerate() {
                        *b = prev[p] + self.t(p, n);
                    }
                    log_sum_exp(&buf) + self.e(n, k)
                })
                .collect();
            alpha.push(next);
        }
        alpha
    }

    /// Backward log-messages `beta[k][s]`.
    fn backward(&self) -> Vec<Vec<f64>> {
        let mut beta = vec![vec![0.0; self.s]; self.w];
        let mut buf = vec![0.0; self.s];
        for k in (0..self.w - 1).rev() {
            for p in 0..self.s {
                for (n, b) in buf.iter_mut().enumerate() {
                    *b = self.t(p, n) + self.e(n, k + 1) + beta[k + 1][n];
                }
                beta[k][p] = log_sum_exp(&buf);
            }
        }
        beta
    }

    fn log_partition(&self) -> f64 {
        log_sum_exp(self.forward().last().expect("w >= 1"))
    }

    /// NLL and its gradients w.r.t. emissions, transitions and start scores.
    fn nll_with_grads(&self, labels: &[usize]) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = log_sum_exp(&alpha[self.w - 1]);
        let nll = log_z - self.score(labels);

        let mut d_emis = vec![0.0; self.s * self.w];
        let mut d_trans = vec![0.0; self.s * self.s];
        let mut d_start = vec![0.0; self.s];
        for k in 0..self.w {
            for l in 0..self.s {
                d_emis[l * self.w + k] = (alpha[k][l] + beta[k][l] - log_z).exp();
            }
            d_emis[labels[k] * self.w + k] -= 1.0;
        }
        for l in 0..self.s {
            d_start[l] = (alpha[0][l] + beta[0][l] - log_z).exp();
        }
        d_start[labels[0]] -= 1.0;
        for k in 1..self.w {
            for p in 0..self.s {
                for n in 0..self.s {
                    d_trans[p * self.s + n] +=
                        (alpha[k - 1][p] + self.t(p, n) + self.e(n, k) + beta[k][n] - log_z).exp();
                }
            }
            d_trans[labels[k - 1] * self.s + labels[k]] -= 1.0;
        }
        (nll, d_emis, d_trans, d_start)
    }

    fn viterbi(&self) -> Vec<usize> {
        let mut delta: Vec<f64> = (0..self.s).map(|l| self.start[l] + self.e(l, 0)).collect();
        let mut back = vec![vec![0usize; self.s]; self.w];
        for k in 1..self.w {
            let mut next = vec![0.0; self.s];
            for n in 0..self.s {
                let mut best = 0;
                let mut best_v = delta[0] + self.t(0, n);
                for p in 1..self.s {
                    let v = delta[p] + self.t(p, n);
                    if v > best_v {
                        best_v = v;
                        best = p;
                    }
                }
                back[k][n] = best;
                next[n] = best_v + self.e(n, k);
            }
            delta = next;
        }
        let mut last = 0;
        for l in 1..self.s {
            if delta[l] > delta[last] {
                last = l;
            }
        }
        let mut path = vec![0; self.w];
        path[self.w - 1] = last;
        for k in (1..self.w).rev() {
            path[k - 1] = back[k][path[k]];
        }
        path
    }
}

/// Graph op: `Σ_b weight_b · NLL(emissions_b, targets_b)` for emissions
/// `[B, S, W]` (or a single `[S, W]`), differentiable in all three inputs.
pub fn crf_nll_batch(
    g: &mut Graph,
    emissions: Var,
    transitions: Var,
    start: Var,
    targets: &[Vec<u8>],
    weights: &[f64],
) -> Result<Var> {
    let shape = g.shape(emissions).to_vec();
    let (batch, s, w) = match shape.as_slice() {
        [s, w] => (1, *s, *w),
        [b, s, w] => (*b, *s, *w),
        _ => return shape_err(format!("CRF emissions must be [S,W] or [B,S,W], got {shape:?}")),
    };
    if targets.len() != batch || weights.len() != batch {
        return shape_err(format!(
            "CRF batch of {batch} with {} targets and {} weights",
            targets.len(),
            weights.len()
        ));
    }
    if w == 0 {
        return Err(Error::Contract("CRF needs at least one step".into()));
    }
    if g.shape(transitions) != [s, s] || g.shape(start) != [s] {
        return shape_err("CRF transition/start shapes do not match emissions");
    }
    let emis = g.value(emissions).data().to_vec();
    let trans = g.value(transitions).data().to_vec();
    let st = g.value(start).data().to_vec();

    let mut total = 0.0;
    let mut d_emis = vec![0.0; emis.len()];
    let mut d_trans = vec![0.0; s * s];
    let mut d_start = vec![0.0; s];
    let mut labels = vec![0usize; w];
    for b in 0..batch {
        if weights[b] == 0.0 {
            continue;
        }
        let target = &targets[b];
        if target.len() != w {
            return shape_err(format!("CRF target of length {} for {w} steps", target.len()));
        }
        for (l, &u) in labels.iter_mut().zip(target) {
            if u as usize >= s {
                return Err(Error::Contract(format!("label {u} outside 0..{s}")));
            }
            *l = u as usize;
        }
        let off = b * s * w;
        let chain = Chain {
            emis: &emis[off..off + s * w],
            trans: &trans,
            start: &st,
            s,
            w,
        };
        let (nll, de, dt, ds) = chain.nll_with_grads(&labels);
        let wt = weights[b];
        total += wt * nll;
        d_emis[off..off + s * w].iter_mut().zip(&de).for_each(|(a, v)| *a += wt * v);
        d_trans.iter_mut().zip(&dt).for_each(|(a, v)| *a += wt * v);
        d_start.iter_mut().zip(&ds).for_each(|(a, v)| *a += wt * v);
    }
    g.scalar_op(&[emissions, transitions, start], total, vec![d_emis, d_trans, d_start])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores_partition() {
        let crf = Crf::zeros(2);
        let e = Tensor::zeros(&[2, 2]);
        assert!((crf.log_partition(&e).unwrap() - 4f64.ln()).abs() < 1e-12);
        for u in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            assert!((crf.nll(&e, &u).unwrap() - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_partition_is_lse() {
        let crf = Crf::zeros(2);
        let e = Tensor::new(&[2, 1], vec![0.3, -1.7]).unwrap();
        let want = log_sum_exp(&[0.3, -1.7]);
        assert!((crf.log_partition(&e).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn empty_sequence_is_contract_error() {
        let crf = Crf::zeros(2);
        let e = Tensor::zeros(&[2, 0]);
        assert!(matches!(crf.log_partition(&e), Err(Error::Contract(_))));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let crf = Crf::zeros(2);
        let e = Tensor::zeros(&[2, 3]);
        assert!(matches!(crf.nll(&e, &[0, 2, 1]), Err(Error::Contract(_))));
    }

    #[test]
    fn viterbi_degenerate_cases() {
        let crf = Crf::zeros(2);
        let mut e = Tensor::zeros(&[2, 5]);
        assert_eq!(crf.viterbi(&e).unwrap(), vec![0; 5]);
        for k in 0..5 {
            e.set(&[1, k], 3.0);
        }
        assert_eq!(crf.viterbi(&e).unwrap(), vec![1; 5]);
    }
}
