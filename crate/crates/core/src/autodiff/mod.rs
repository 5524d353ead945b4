//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Graphs are built define-by-run: every operation on a [`Var`] records a
//! node holding the computed value, the parent handles, and enough context
//! to run the chain rule. [`Var::backward`] walks the graph once in reverse
//! topological order and accumulates gradients into leaf nodes.
//!
//! Leaves created with [`Var::param`] are trainable and live in a
//! [`ParamSet`]; the graph above them is rebuilt on every forward pass, so
//! no stale state survives between training steps.

mod gradcheck;
mod graph;
mod ops;
mod optim;
mod paramset;

pub use gradcheck::{gradcheck, GradCheckOutcome, GradCheckReport};
pub use graph::{BackwardStats, Var};
pub use ops::{mse, Padding};
pub use optim::Adam;
pub use paramset::{CheckpointError, ParamSet};

/// Dense dynamic-rank array of f64, the value type of every graph node.
pub type Arr = ndarray::ArrayD<f64>;

/// Shorthand for building an `Arr` from a flat vector and shape.
pub fn arr_from(shape: &[usize], data: Vec<f64>) -> Arr {
    ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(shape), data)
        .expect("element count must match shape")
}

/// Zero-filled array.
pub fn zeros(shape: &[usize]) -> Arr {
    ndarray::ArrayD::zeros(ndarray::IxDyn(shape))
}
