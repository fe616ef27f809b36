//! Dense double-precision tensors, a reverse-mode tape, optimizers and
//! the binary parameter file format.

mod checkpoint;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use graph::{Graph, OpKind, Reduction, Var};
pub use optim::{Method, Optimizer, OptimizerConfig};
pub use tensor::Tensor;

use rand::Rng;

/// Glorot-uniform matrix of shape `[fan_in, fan_out]`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("finite init")
}

