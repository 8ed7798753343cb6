//! Differentiable building blocks: global memory, TCN blocks, FC blocks
//! and the linear-chain CRF.

pub mod crf;
mod fc;
pub mod init;
mod memory;
mod tcn;

pub use crf::{crf_nll_batch, Crf, CrfParams, NUM_LABELS};
pub use fc::{FcBlock, Linear};
pub use memory::{MemoryBank, MemoryOutput};
pub use tcn::{receptive_field, CausalConv, StepLinear, TcnBlock, TcnStack};
