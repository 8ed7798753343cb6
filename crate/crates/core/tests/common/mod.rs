//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use hinet::numcore::{Graph, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Naive triple loop `a[m×k] · b[k×n]`.
pub fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at(&[i, p]) * b.at(&[p, j]);
            }
            out.set(&[i, j], s);
        }
    }
    out
}

/// Direct summation causal convolution on a single `[C_in, T]` input:
/// `out[o, t] = bias[o] + Σ_i Σ_j w[o, i, j] · x[i, t − d·j]`, zero before 0.
pub fn conv_oracle(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, d: usize) -> Tensor {
    let (cin, t) = (x.shape()[0], x.shape()[1]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let mut out = Tensor::zeros(&[cout, t]);
    for o in 0..cout {
        for tt in 0..t {
            let mut s = bias.map_or(0.0, |b| b.at(&[o]));
            for i in 0..cin {
                for j in 0..k {
                    let back = d * j;
                    if back > tt {
                        continue;
                    }
                    s += w.at(&[o, i, j]) * x.at(&[i, tt - back]);
                }
            }
            out.set(&[o, tt], s);
        }
    }
    out
}

pub fn relu_oracle(x: &Tensor) -> Tensor {
    Tensor::new(x.shape(), x.data().iter().map(|v| v.max(0.0)).collect()).unwrap()
}

/// Outcome of a finite-difference gradient probe set.
#[derive(Debug)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel_err: f64,
}

/// Relative error with an absolute floor so that two near-zero
/// derivatives compare as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compares reverse-mode gradients of `build` against central finite
/// differences (step 1e-5) at `probes` random coordinates of the inputs.
pub fn grad_check<F>(inputs: &[Tensor], probes: usize, seed: u64, build: F) -> GradCheck
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::eval_with_grad();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).data()[0]
    };
    let mut g = Graph::eval_with_grad();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|v| g.grad(*v)).collect();

    let mut r = rng(seed);
    let h = 1e-5;
    let mut max_rel_err = 0.0f64;
    for _ in 0..probes {
        let which = r.gen_range(0..inputs.len());
        let idx = r.gen_range(0..inputs[which].len());
        let mut plus = inputs.to_vec();
        plus[which].data_mut()[idx] += h;
        let mut minus = inputs.to_vec();
        minus[which].data_mut()[idx] -= h;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let a = analytic[which].data()[idx];
        max_rel_err = max_rel_err.max(rel_err(a, numeric));
    }
    GradCheck { probes, max_rel_err }
}

/// All label sequences of length `w` over `s` labels.
pub fn all_sequences(s: usize, w: usize) -> Vec<Vec<usize>> {
    let total = s.pow(w as u32);
    (0..total)
        .map(|mut code| {
            let mut seq = vec![0; w];
            for k in (0..w).rev() {
                seq[k] = code % s;
                code /= s;
            }
            seq
        })
        .collect()
}

/// Joint loss of `net` on `batch` with dropout off.
pub fn eval_joint_loss(net: &hinet::model::HiNet, batch: &hinet::model::Batch) -> f64 {
    let mut g = Graph::eval_with_grad();
    let mut r = rng(0);
    let loss = net.loss(&mut g, &mut r, batch, batch.len()).unwrap();
    g.value(loss.total).data()[0]
}

/// Finite-difference check of the joint loss gradient at `probes` random
/// parameter coordinates, drawn uniformly over all parameter entries,
/// at steps 1e-5 and 1e-7.
pub fn joint_loss_grad_check(
    net: &hinet::model::HiNet,
    batch: &hinet::model::Batch,
    probes: usize,
    seed: u64,
) -> GradCheck {
    use hinet::numcore::Grads;
    let mut g = Graph::eval_with_grad();
    let mut r0 = rng(0);
    let loss = net.loss(&mut g, &mut r0, batch, batch.len()).unwrap();
    g.backward(loss.total).unwrap();
    let mut grads = Grads::zeros_like(&net.params);
    g.accumulate_param_grads(&mut grads);

    let ids: Vec<_> = net.params.ids().collect();
    let total = net.params.numel();
    let mut r = rng(seed);
    let mut max_rel_err = 0.0f64;
    for _ in 0..probes {
        let mut flat = r.gen_range(0..total);
        let mut id = ids[0];
        for &candidate in &ids {
            let n = net.params.get(candidate).len();
            if flat < n {
                id = candidate;
                break;
            }
            flat -= n;
        }
        // a smaller step avoids straddling a ReLU kink
        let err = [1e-5, 1e-7]
            .iter()
            .map(|&h| {
                let mut plus = net.clone();
                plus.params.get_mut(id).data_mut()[flat] += h;
                let mut minus = net.clone();
                minus.params.get_mut(id).data_mut()[flat] -= h;
                let numeric = (eval_joint_loss(&plus, batch) - eval_joint_loss(&minus, batch)) / (2.0 * h);
                rel_err(grads.get(id)[flat], numeric)
            })
            .fold(f64::INFINITY, f64::min);
        max_rel_err = max_rel_err.max(err);
    }
    GradCheck { probes, max_rel_err }
}

/// Scans every candidate interval and keeps the maximal low runs.
pub fn brute_events(spo2: &[f64], min_run: usize) -> Vec<hinet::data::Interval> {
    let low = |t: usize| spo2[t] <= 90.0;
    let n = spo2.len();
    let mut out = Vec::new();
    for s in 0..n {
        for e in s..n {
            let all_low = (s..=e).all(low);
            let maximal = (s == 0 || !low(s - 1)) && (e + 1 == n || !low(e + 1));
            if all_low && maximal && e - s + 1 >= min_run {
                out.push(hinet::data::Interval { start: s, end: e });
            }
        }
    }
    out
}

/// Per-minute labeler written from the definitions.
pub fn brute_labels(events: &[hinet::data::Interval], t_len: usize, w_h: usize) -> (Vec<u8>, Vec<u8>) {
    (0..t_len)
        .map(|t| {
            let inside = events.iter().any(|e| e.start <= t && t <= e.end);
            let soon = events.iter().any(|e| e.start > t && e.start - t <= w_h);
            if inside {
                (0, 0)
            } else {
                (u8::from(soon), 1)
            }
        })
        .unzip()
}

pub fn random_trace(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(1..80);
    let p_low = rng.gen_range(0.05..0.6);
    (0..n)
        .map(|_| if rng.gen_bool(p_low) { rng.gen_range(70.0..=90.0) } else { rng.gen_range(90.01..100.0) })
        .collect()
}
