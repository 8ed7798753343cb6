//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every forward op appends a node; node order is therefore a topological
//! order and `backward` walks it in reverse exactly once. A graph is built
//! per forward pass and dropped after its gradients are harvested.

use rand::Rng as _;

use crate::error::{shape_err, Error, Result};
use crate::numcore::kernels::{self, gemm_acc, ConvGeom, View};
use crate::numcore::params::{Grads, ParamId, ParamStore};
use crate::numcore::rng::Rng;
use crate::numcore::Tensor;

/// Probability clamp applied before taking logs in cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct Axis {
    outer: usize,
    len: usize,
    inner: usize,
}

impl Axis {
    fn of(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return shape_err(format!("axis {axis} out of range for shape {shape:?}"));
        }
        Ok(Self {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    fn index(&self, o: usize, l: usize, i: usize) -> usize {
        (o * self.len + l) * self.inner + i
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    AddRowBias(Var, Var),
    Conv {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    WeightNorm {
        v: Var,
        g: Var,
        norms: Vec<f64>,
    },
    Relu(Var),
    Softmax(Var, Axis),
    LogSumExp(Var, Axis),
    MaskMul(Var, Vec<f64>),
    Reshape(Var),
    IndexLast(Var, usize),
    RepeatLast(Var, usize),
    Sum(Var),
    Mse(Var, Var),
    MaskedBce {
        pred: Var,
        target: Vec<f64>,
        weight: Vec<f64>,
    },
    /// Scalar-valued op whose local gradients were computed in the forward pass.
    Scalar {
        inputs: Vec<Var>,
        local: Vec<Vec<f64>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Recorded forward computation.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    training: bool,
    track: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Graph that records gradients; dropout active.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            training: true,
            track: true,
        }
    }

    /// Evaluation graph: no gradient bookkeeping and dropout is the identity.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            training: false,
            track: false,
        }
    }

    /// Graph that records gradients but runs in evaluation mode.
    pub fn eval_with_grad() -> Self {
        Self {
            training: false,
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`, zero when
    /// `v` did not influence it.
    pub fn grad(&self, v: Var) -> Tensor {
        let value = &self.nodes[v.0].value;
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(value.shape(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(value.shape()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = self.track && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf that is not a stored parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let track = self.track;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: track,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding a snapshot of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let track = self.track;
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Leaf,
            requires_grad: track,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    // ------------------------------------------------------------------
    // elementwise
    // ------------------------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        Tensor::new(av.shape(), av.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// `relu(x) = max(x, 0)` with derivative 0 at 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a), &[a])
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// rescales survivors. Identity outside training mode.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Param(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = {
            let av = self.value(a);
            let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            Tensor::new(av.shape(), data).expect("same shape")
        };
        Ok(self.push(out, Op::MaskMul(a, mask), &[a]))
    }

    // ------------------------------------------------------------------
    // linear algebra
    // ------------------------------------------------------------------

    /// `[m×k] · [k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul of {sa:?} and {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(
            self.value(a).data(),
            View::row_major(0, m, k),
            self.value(b).data(),
            View::row_major(0, k, n),
            &mut out,
            View::row_major(0, m, n),
        );
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return shape_err(format!("transpose needs a matrix, got {s:?}"));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let out = Tensor::new(&[n, m], out)?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    /// Adds a length-`n` bias to every row of an `[m×n]` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return shape_err(format!("row bias {sb:?} on {sx:?}"));
        }
        let n = sx[1];
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        out.data_mut()
            .chunks_mut(n)
            .for_each(|row| row.iter_mut().zip(&b).for_each(|(v, bb)| *v += bb));
        Ok(self.push(out, Op::AddRowBias(x, bias), &[x, bias]))
    }

    /// Dilated causal 1-D convolution.
    ///
    /// `x` is `[C_in, T]` or batched `[B, C_in, T]`, `kernel` is
    /// `[C_out, C_in, K]` and tap `j` multiplies `x[t - dilation·j]`, so the
    /// output at time `t` never depends on inputs after `t`. The input is
    /// implicitly left-padded with zeros and the output keeps length `T`.
    pub fn conv1d_causal(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: usize,
    ) -> Result<Var> {
        if dilation == 0 {
            return Err(Error::Param("dilation must be positive".into()));
        }
        let sx = self.shape(x).to_vec();
        let sw = self.shape(kernel).to_vec();
        let (batch, cin, t, batched) = match sx.as_slice() {
            [c, t] => (1, *c, *t, false),
            [b, c, t] => (*b, *c, *t, true),
            _ => return shape_err(format!("conv input must be [C,T] or [B,C,T], got {sx:?}")),
        };
        if sw.len() != 3 || sw[1] != cin || sw[2] == 0 {
            return shape_err(format!("conv kernel {sw:?} incompatible with input {sx:?}"));
        }
        let (cout, k) = (sw[0], sw[2]);
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return shape_err(format!("conv bias {:?}, expected [{cout}]", self.shape(b)));
            }
        }
        let geom = ConvGeom {
            batch,
            cin,
            cout,
            k,
            t,
            dilation,
        };
        let mut out = vec![0.0; batch * cout * t];
        kernels::conv_forward(
            geom,
            self.value(x).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &mut out,
        );
        let shape: Vec<usize> = if batched {
            vec![batch, cout, t]
        } else {
            vec![cout, t]
        };
        let out = Tensor::new(&shape, out)?;
        let mut parents = vec![x, kernel];
        parents.extend(bias);
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w: kernel,
                bias,
                geom,
            },
            &parents,
        ))
    }

    /// Weight normalisation `w[o] = g[o] · v[o] / ‖v[o]‖` over the leading axis.
    /// A zero direction yields a zero slice.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let sv = self.shape(v).to_vec();
        if sv.is_empty() || self.shape(g) != [sv[0]] {
            return shape_err(format!("weight norm of {sv:?} with gain {:?}", self.shape(g)));
        }
        let rows = sv[0];
        let width = self.value(v).len() / rows.max(1);
        let vd = self.value(v).data();
        let gd = self.value(g).data();
        let mut norms = Vec::with_capacity(rows);
        let mut out = vec![0.0; vd.len()];
        for o in 0..rows {
            let slice = &vd[o * width..(o + 1) * width];
            let nrm = slice.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms.push(nrm);
            if nrm > 0.0 {
                let s = gd[o] / nrm;
                out[o * width..(o + 1) * width]
                    .iter_mut()
                    .zip(slice)
                    .for_each(|(w, x)| *w = s * x);
            }
        }
        let out = Tensor::new(&sv, out)?;
        Ok(self.push(out, Op::WeightNorm { v, g, norms }, &[v, g]))
    }

    // ------------------------------------------------------------------
    // reductions and normalisers
    // ------------------------------------------------------------------

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ax = Axis::of(self.shape(x), axis)?;
        let mut out = self.value(x).clone();
        let d = out.data_mut();
        for o in 0..ax.outer {
            for i in 0..ax.inner {
                let max = (0..ax.len)
                    .map(|l| d[ax.index(o, l, i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for l in 0..ax.len {
                    let e = (d[ax.index(o, l, i)] - max).exp();
                    d[ax.index(o, l, i)] = e;
                    sum += e;
                }
                for l in 0..ax.len {
                    d[ax.index(o, l, i)] /= sum;
                }
            }
        }
        Ok(self.push(out, Op::Softmax(x, ax), &[x]))
    }

    /// `log Σ exp` along `axis`; the axis is removed from the shape.
    pub fn log_sum_exp(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let ax = Axis::of(&shape, axis)?;
        let d = self.value(x).data();
        let mut out = vec![0.0; ax.outer * ax.inner];
        let mut buf = vec![0.0; ax.len];
        for o in 0..ax.outer {
            for i in 0..ax.inner {
                for (l, b) in buf.iter_mut().enumerate() {
                    *b = d[ax.index(o, l, i)];
                }
                out[o * ax.inner + i] = kernels::log_sum_exp(&buf);
            }
        }
        let mut new_shape: Vec<usize> = shape[..axis].iter().chain(&shape[axis + 1..]).copied().collect();
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let out = Tensor::new(&new_shape, out)?;
        Ok(self.push(out, Op::LogSumExp(x, ax), &[x]))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    // ------------------------------------------------------------------
    // shape plumbing
    // ------------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Selects index `idx` along the last axis, dropping it.
    pub fn index_last(&mut self, x: Var, idx: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = *shape.last().unwrap_or(&0);
        if idx >= last {
            return shape_err(format!("index {idx} out of range for last axis of {shape:?}"));
        }
        let data: Vec<f64> = self.value(x).data().chunks(last).map(|c| c[idx]).collect();
        let mut new_shape = shape[..shape.len() - 1].to_vec();
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let out = Tensor::new(&new_shape, data)?;
        Ok(self.push(out, Op::IndexLast(x, idx), &[x]))
    }

    /// Repeats every element `n` times along a new trailing axis.
    pub fn repeat_last(&mut self, x: Var, n: usize) -> Var {
        let mut shape = self.shape(x).to_vec();
        shape.push(n);
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(n))
            .collect();
        let out = Tensor::new(&shape, data).expect("repeat shape");
        self.push(out, Op::RepeatLast(x, n), &[x])
    }

    // ------------------------------------------------------------------
    // losses
    // ------------------------------------------------------------------

    /// Mean squared error over all elements.
    pub fn mse(&mut self, target: Var, pred: Var) -> Result<Var> {
        self.same_shape(target, pred, "mse")?;
        let n = self.value(target).len().max(1) as f64;
        let s: f64 = self
            .value(target)
            .data()
            .iter()
            .zip(self.value(pred).data())
            .map(|(a, b)| (b - a) * (b - a))
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(target, pred), &[target, pred]))
    }

    /// `Σ_i weight_i · H(target_i, pred_i)` with probabilities clamped to
    /// `[PROB_EPS, 1 - PROB_EPS]`. Zero-weight entries contribute nothing.
    pub fn masked_bce(&mut self, pred: Var, target: &[f64], weight: &[f64]) -> Result<Var> {
        let n = self.value(pred).len();
        if target.len() != n || weight.len() != n {
            return shape_err(format!(
                "bce: {n} predictions, {} targets, {} weights",
                target.len(),
                weight.len()
            ));
        }
        let p = self.value(pred).data();
        let s: f64 = (0..n)
            .filter(|&i| weight[i] != 0.0)
            .map(|i| weight[i] * binary_cross_entropy(target[i], p[i]))
            .sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::MaskedBce {
                pred,
                target: target.to_vec(),
                weight: weight.to_vec(),
            },
            &[pred],
        ))
    }

    /// Records a scalar op whose value and local gradients (one per input,
    /// same length as that input) were computed by the caller.
    pub fn scalar_op(&mut self, inputs: &[Var], value: f64, local: Vec<Vec<f64>>) -> Result<Var> {
        if inputs.len() != local.len() {
            return Err(Error::Contract("one local gradient per input".into()));
        }
        for (v, l) in inputs.iter().zip(&local) {
            if self.value(*v).len() != l.len() {
                return shape_err("local gradient length differs from its input");
            }
        }
        Ok(self.push(
            Tensor::scalar(value),
            Op::Scalar {
                inputs: inputs.to_vec(),
                local,
            },
            inputs,
        ))
    }

    // ------------------------------------------------------------------
    // backward
    // ------------------------------------------------------------------

    /// Populates gradients of the scalar `loss` for every node that reaches it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the gradient of every parameter leaf into `out`.
    pub fn accumulate_param_grads(&self, out: &mut Grads) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(Some(g))) = (node.param, self.grads.get(i)) {
                out.get_mut(id).iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
        }
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let len = nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k];
                    }
                });
                acc(*b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * av[k];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::MatMul(a, b) => {
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let gv = View::row_major(0, m, n);
                acc(*a, &mut |d| {
                    gemm_acc(g, gv, bv, View::row_major(0, k, n).t(), d, View::row_major(0, m, k))
                });
                acc(*b, &mut |d| {
                    gemm_acc(av, View::row_major(0, m, k).t(), g, gv, d, View::row_major(0, k, n))
                });
            }
            Op::Transpose(a) => {
                let s = nodes[a.0].value.shape();
                let (m, n) = (s[0], s[1]);
                acc(*a, &mut |d| {
                    for r in 0..m {
                        for c in 0..n {
                            d[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::AddRowBias(x, b) => {
                let n = nodes[b.0].value.len();
                acc(*x, &mut |d| add_into(d, g));
                acc(*b, &mut |d| {
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::Conv { x, w, bias, geom } => {
                let xv = nodes[x.0].value.data();
                let wv = nodes[w.0].value.data();
                acc(*x, &mut |d| kernels::conv_backward(*geom, xv, wv, g, Some(d), None, None));
                acc(*w, &mut |d| kernels::conv_backward(*geom, xv, wv, g, None, Some(d), None));
                if let Some(b) = bias {
                    acc(*b, &mut |d| kernels::conv_backward(*geom, xv, wv, g, None, None, Some(d)));
                }
            }
            Op::WeightNorm { v, g: gain, norms } => {
                let vv = nodes[v.0].value.data();
                let gv = nodes[gain.0].value.data();
                let rows = norms.len();
                let width = vv.len() / rows.max(1);
                // dot(dw[o], v[o]/‖v[o]‖)
                let proj: Vec<f64> = (0..rows)
                    .map(|o| {
                        if norms[o] == 0.0 {
                            return 0.0;
                        }
                        let r = o * width..(o + 1) * width;
                        g[r.clone()].iter().zip(&vv[r]).map(|(a, b)| a * b).sum::<f64>() / norms[o]
                    })
                    .collect();
                acc(*gain, &mut |d| add_into(d, &proj));
                acc(*v, &mut |d| {
                    for o in 0..rows {
                        if norms[o] == 0.0 {
                            continue;
                        }
                        let s = gv[o] / norms[o];
                        for c in o * width..(o + 1) * width {
                            let u = vv[c] / norms[o];
                            d[c] += s * (g[c] - proj[o] * u);
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let av = nodes[a.0].value.data();
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        if av[k] > 0.0 {
                            d[k] += g[k];
                        }
                    }
                });
            }
            Op::Softmax(x, ax) => {
                let y = node.value.data();
                acc(*x, &mut |d| {
                    for o in 0..ax.outer {
                        for i in 0..ax.inner {
                            let dot: f64 = (0..ax.len)
                                .map(|l| {
                                    let idx = ax.index(o, l, i);
                                    g[idx] * y[idx]
                                })
                                .sum();
                            for l in 0..ax.len {
                                let idx = ax.index(o, l, i);
                                d[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSumExp(x, ax) => {
                let xv = nodes[x.0].value.data();
                let out = node.value.data();
                acc(*x, &mut |d| {
                    for o in 0..ax.outer {
                        for i in 0..ax.inner {
                            let r = o * ax.inner + i;
                            if !out[r].is_finite() {
                                continue;
                            }
                            for l in 0..ax.len {
                                let idx = ax.index(o, l, i);
                                d[idx] += g[r] * (xv[idx] - out[r]).exp();
                            }
                        }
                    }
                });
            }
            Op::MaskMul(a, mask) => acc(*a, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * mask[k];
                }
            }),
            Op::Reshape(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::IndexLast(a, idx) => {
                let last = *nodes[a.0].value.shape().last().unwrap();
                acc(*a, &mut |d| {
                    for (r, gv) in g.iter().enumerate() {
                        d[r * last + idx] += gv;
                    }
                });
            }
            Op::RepeatLast(a, n) => acc(*a, &mut |d| {
                for (k, dv) in d.iter_mut().enumerate() {
                    *dv += g[k * n..(k + 1) * n].iter().sum::<f64>();
                }
            }),
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Mse(t, p) => {
                let tv = nodes[t.0].value.data();
                let pv = nodes[p.0].value.data();
                let c = 2.0 * g[0] / tv.len().max(1) as f64;
                acc(*p, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += c * (pv[k] - tv[k]);
                    }
                });
                acc(*t, &mut |d| {
                    for k in 0..d.len() {
                        d[k] -= c * (pv[k] - tv[k]);
                    }
                });
            }
            Op::MaskedBce {
                pred,
                target,
                weight,
            } => {
                let pv = nodes[pred.0].value.data();
                acc(*pred, &mut |d| {
                    for k in 0..d.len() {
                        let p = pv[k];
                        if weight[k] == 0.0 || p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                            continue;
                        }
                        let y = target[k];
                        d[k] += g[0] * weight[k] * (-y / p + (1.0 - y) / (1.0 - p));
                    }
                });
            }
            Op::Scalar { inputs, local } => {
                for (v, l) in inputs.iter().zip(local) {
                    acc(*v, &mut |d| d.iter_mut().zip(l).for_each(|(x, y)| *x += g[0] * y));
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// `H(y, p) = −y·ln p − (1−y)·ln(1−p)` with `p` clamped to `[1e-7, 1 − 1e-7]`.
pub fn binary_cross_entropy(y: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}
