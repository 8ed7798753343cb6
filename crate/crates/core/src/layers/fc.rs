use crate::error::Result;
use crate::layers::init::kaiming_uniform;
use crate::numcore::rng::Rng;
use crate::numcore::{Graph, ParamId, ParamStore, Tensor, Var};

/// Affine map on row vectors: `x·W + b` with `W: [in × out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let weight = store.register(format!("{name}.weight"), kaiming_uniform(&[inputs, outputs], inputs, rng))?;
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[outputs]))?;
        Ok(Self {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    /// `x: [B × in] -> [B × out]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_row_bias(y, b)
    }
}

/// One hidden layer with ReLU followed by a linear output layer.
#[derive(Clone, Debug)]
pub struct FcBlock {
    pub hidden: Linear,
    pub output: Linear,
}

impl FcBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), inputs, hidden, rng)?,
            output: Linear::new(store, &format!("{name}.output"), hidden, outputs, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.relu(h);
        self.output.forward(g, store, h)
    }
}
