//! Reverse-mode automatic differentiation over dense `f32`/`f64` arrays.
//!
//! Every operation is recorded on a [`Tape`] in execution order; the
//! reverse sweep visits nodes once in reverse record order and accumulates
//! leaf gradients additively. [`grad_check`] compares recorded gradients
//! with central finite differences.

mod array;
pub mod container;
mod error;
pub mod grad_check;
pub mod ops;
mod params;
mod scalar;
mod tape;

pub use array::{broadcast_shape, numel, Array};
pub use error::{DiffError, Result};
pub use grad_check::{grad_check, relative_error, GradCheckReport};
pub use params::{AdamConfig, Binding, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tape::{forward_record, BackwardArgs, BackwardFn, Gradients, Tape, Var};

pub type Array64 = Array<f64>;
pub type Array32 = Array<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type ParamStore64 = ParamStore<f64>;
