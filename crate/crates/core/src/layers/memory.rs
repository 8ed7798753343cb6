//! Step-level global memory: each input step is re-expressed as an
//! attention-weighted mixture of `M` learned basis vectors.

use crate::error::{shape_err, Result};
use crate::layers::init::gaussian;
use crate::numcore::rng::Rng;
use crate::numcore::{Graph, ParamId, ParamStore, Var};

/// Basis matrix `B: [M × V]`, trained jointly with the rest of the network.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    pub basis: ParamId,
    pub bases: usize,
    pub channels: usize,
}

/// Attended output together with the attention weights that produced it.
pub struct MemoryOutput {
    /// `[V, T]` or `[B, V, T]`; column `k` is `a⁽ᵏ⁾ = Σ_j α_j⁽ᵏ⁾ b_j`.
    pub attended: Var,
    /// `[M, T]` or `[B, M, T]`; column `k` is `softmax(B·x⁽ᵏ⁾)`.
    pub attention: Var,
}

impl MemoryBank {
    pub fn new(store: &mut ParamStore, name: &str, bases: usize, channels: usize, rng: &mut Rng) -> Result<Self> {
        let basis = store.register(format!("{name}.basis"), gaussian(&[bases, channels], 0.1, rng))?;
        Ok(Self {
            basis,
            bases,
            channels,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<MemoryOutput> {
        let shape = g.shape(x).to_vec();
        let channel_axis = match shape.len() {
            2 => 0,
            3 => 1,
            _ => return shape_err(format!("memory input must be [V,T] or [B,V,T], got {shape:?}")),
        };
        if shape[channel_axis] != self.channels {
            return shape_err(format!(
                "memory expects {} channels, input has {}",
                self.channels, shape[channel_axis]
            ));
        }
        let b = g.param(store, self.basis);
        let as_kernel = g.reshape(b, &[self.bases, self.channels, 1])?;
        let scores = g.conv1d_causal(x, as_kernel, None, 1)?;
        let attention = g.softmax(scores, channel_axis)?;
        let bt = g.transpose(b)?;
        let bt_kernel = g.reshape(bt, &[self.channels, self.bases, 1])?;
        let attended = g.conv1d_causal(attention, bt_kernel, None, 1)?;
        Ok(MemoryOutput { attended, attention })
    }
}
