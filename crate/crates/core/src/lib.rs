//! Gumbel-Attention multi-modal translation.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`autodiff`]), the
//! Gumbel sampling family ([`gumbel`]), vanilla and Gumbel attention
//! ([`attention`]), the dual-encoder translation model ([`model`]), synthetic
//! tasks with training and evaluation ([`data`], [`train`]) and the
//! persistence formats used by the command-line tool ([`config`],
//! [`checkpoint`], [`dataset_io`]).

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dataset_io;
pub mod error;
pub mod gradcheck;
pub mod gumbel;
pub mod model;
pub mod seeding;
pub mod tensor;
pub mod train;

pub use autodiff::{Adjoints, Gradients, ParamId, ParamStore, Parameter, Tape, Var};
pub use config::RunConfig;
pub use data::{Dataset, Example, Split, SyntheticTaskSpec, TaskKind};
pub use error::{Error, Result};
pub use gumbel::{GateMode, NoiseSource, Temperature};
pub use model::{AblationFlags, LossWeightMode, Model, ModelConfig};
pub use tensor::Tensor;
pub use train::{Metrics, TrainConfig};
