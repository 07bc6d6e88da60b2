//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters live in
//! a [`ParamStore`] and enter the tape as borrowed leaves; [`Tape::backward`]
//! walks the recording in reverse and adds parameter gradients into a
//! [`Gradients`] buffer. The tape is rebuilt for every forward pass.

mod gemm;
mod ops;
mod params;
mod tape;

pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{Adjoints, Tape, Var};

/// Epsilon added to the variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Epsilon added to the norm product in cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;
