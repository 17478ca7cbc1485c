//! Minimal dense/sparse linear algebra with reverse-mode gradients.
//!
//! Everything accumulates in `f64`. The op set is fixed: sparse-dense
//! products, affine maps, activations, concatenation, row gathers,
//! reductions and the two training losses.

mod optim;
mod tape;
mod tensor;

pub use optim::{adam_step, Adam, AdamConfig, AdamState, Param};
pub use tape::{normalize_rows, sigmoid, softmax_rows, Tape, Var, NORM_EPS};
pub use tensor::Tensor2;

use std::sync::Arc;

use crate::error::Result;
use crate::graph::SparseMatrix;

/// `S · X` outside of any tape.
pub fn spmm(s: &SparseMatrix, x: &Tensor2) -> Result<Tensor2> {
    s.mul_dense(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    SoftmaxRows,
}

/// Applies `kind` on the tape.
pub fn activation(tape: &mut Tape, x: Var, kind: Activation) -> Result<Var> {
    match kind {
        Activation::Relu => tape.relu(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::SoftmaxRows => tape.softmax_rows(x),
    }
}

/// Convenience wrapper so callers can hand a shared operator to the tape.
pub fn shared(s: SparseMatrix) -> Arc<SparseMatrix> {
    Arc::new(s)
}
