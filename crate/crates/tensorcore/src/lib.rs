//! Reverse-mode automatic differentiation on dense f32 tensors, sized for
//! small vision networks trained on a CPU.
//!
//! The pieces: [`Tensor`] (flat f32 storage), [`Graph`] (a single-use tape
//! with the op set the training losses need), [`nn`] (parameter store and
//! conv/linear layers), [`Adam`], and the `NNW1` checkpoint format in
//! [`checkpoint`]. Everything is deterministic: no internal RNG, no
//! thread-order-dependent reductions.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod kernels;
pub mod nn;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, NodeId};
pub use nn::{Binding, Conv2d, Linear, Mlp, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Stable seed mixing for derived RNG streams. Chains splitmix64 over the
/// parts so every (seed, purpose, index) tuple gets an independent stream.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ 0x9e37_79b9_7f4a_7c15);
    for &p in parts {
        s = splitmix64(s ^ splitmix64(p.wrapping_add(0xa076_1d64_78bd_642f)));
    }
    s
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
