//! Temporal convolutional network: residual blocks of two weight-normalised
//! dilated causal convolutions.

use crate::error::{shape_err, Error, Result};
use crate::layers::init::kaiming_uniform;
use crate::numcore::rng::Rng;
use crate::numcore::{Graph, ParamId, ParamStore, Tensor, Var};

/// Weight-normalised causal convolution `w = g·v/‖v‖` per output channel.
#[derive(Clone, Debug)]
pub struct CausalConv {
    pub direction: ParamId,
    pub gain: ParamId,
    pub bias: ParamId,
    pub dilation: usize,
}

impl CausalConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dilation == 0 || kernel == 0 {
            return Err(Error::Param("kernel size and dilation must be positive".into()));
        }
        let v = kaiming_uniform(&[cout, cin, kernel], cin * kernel, rng);
        let width = cin * kernel;
        let norms: Vec<f64> = v
            .data()
            .chunks(width)
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        Ok(Self {
            direction: store.register(format!("{name}.v"), v)?,
            gain: store.register(format!("{name}.g"), Tensor::from_vec(norms))?,
            bias: store.register(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
            dilation,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let v = g.param(store, self.direction);
        let gain = g.param(store, self.gain);
        let w = g.weight_norm(v, gain)?;
        let b = g.param(store, self.bias);
        g.conv1d_causal(x, w, Some(b), self.dilation)
    }
}

/// Per-step affine map on sequences, a kernel-size-1 convolution.
#[derive(Clone, Debug)]
pub struct StepLinear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl StepLinear {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            weight: store.register(format!("{name}.weight"), kaiming_uniform(&[cout, cin, 1], cin, rng))?,
            bias: store.register(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d_causal(x, w, Some(b), 1)
    }
}

/// `out = ReLU(conv2(ReLU(conv1(x)))) + proj(x)`, dropout after each ReLU.
#[derive(Clone, Debug)]
pub struct TcnBlock {
    pub conv1: CausalConv,
    pub conv2: CausalConv,
    /// Present iff input channels differ from the filter count.
    pub proj: Option<StepLinear>,
    pub dropout: f64,
    pub inputs: usize,
    pub filters: usize,
}

impl TcnBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        filters: usize,
        kernel: usize,
        dilation: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let conv1 = CausalConv::new(store, &format!("{name}.conv1"), inputs, filters, kernel, dilation, rng)?;
        let conv2 = CausalConv::new(store, &format!("{name}.conv2"), filters, filters, kernel, dilation, rng)?;
        let proj = if inputs != filters {
            Some(StepLinear::new(store, &format!("{name}.proj"), inputs, filters, rng)?)
        } else {
            None
        };
        Ok(Self {
            conv1,
            conv2,
            proj,
            dropout,
            inputs,
            filters,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, rng: &mut Rng, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, store, x)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.dropout, rng)?;
        let h = self.conv2.forward(g, store, h)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.dropout, rng)?;
        let residual = match &self.proj {
            Some(p) => p.forward(g, store, x)?,
            None => x,
        };
        g.add(h, residual)
    }
}

/// Ordered residual blocks with exponentially increasing dilation.
#[derive(Clone, Debug)]
pub struct TcnStack {
    pub blocks: Vec<TcnBlock>,
    pub kernel: usize,
}

impl TcnStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        filters: usize,
        kernel: usize,
        dilations: &[usize],
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        validate_dilations(dilations)?;
        let mut blocks = Vec::with_capacity(dilations.len());
        let mut cin = inputs;
        for (i, &d) in dilations.iter().enumerate() {
            blocks.push(TcnBlock::new(store, &format!("{name}.block{i}"), cin, filters, kernel, d, dropout, rng)?);
            cin = filters;
        }
        Ok(Self { blocks, kernel })
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.conv1.dilation).collect()
    }

    /// Trailing steps that can influence the final output step.
    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel, &self.dilations())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, rng: &mut Rng, x: Var) -> Result<Var> {
        self.blocks
            .iter()
            .try_fold(x, |h, block| block.forward(g, store, rng, h))
    }

    /// Hidden sequence plus its last column, the window's latent summary.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, rng: &mut Rng, x: Var) -> Result<(Var, Var)> {
        let t = *g.shape(x).last().unwrap_or(&0);
        if t == 0 {
            return shape_err("TCN input has no time steps");
        }
        let hidden = self.forward(g, store, rng, x)?;
        let last = g.index_last(hidden, t - 1)?;
        Ok((hidden, last))
    }
}

/// `1 + Σ_blocks 2·(K−1)·d`: two convolutions per block.
pub fn receptive_field(kernel: usize, dilations: &[usize]) -> usize {
    1 + dilations.iter().map(|d| 2 * (kernel - 1) * d).sum::<usize>()
}

fn validate_dilations(dilations: &[usize]) -> Result<()> {
    if dilations.is_empty() {
        return Err(Error::Param("TCN needs at least one block".into()));
    }
    for w in dilations.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Param(format!("dilations {dilations:?} not strictly increasing")));
        }
    }
    if dilations.iter().any(|d| !d.is_power_of_two()) {
        return Err(Error::Param(format!("dilations {dilations:?} must be powers of two")));
    }
    Ok(())
}
