//! CustomGNN: semi-supervised node classification with LSTM-scored path
//! reweighting over random-walk sub-graphs, multi-hop propagation, and
//! consistency and triplet regularisation.
//!
//! Numeric code is generic over [`Scalar`] (`f64` or `f32`); the aliases
//! below fix the scalar for callers that do not need the generality.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod losses;
pub mod matrix;
pub mod reweighter;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{load_graph, save_graph, Graph};
pub use matrix::{Csr, Matrix};
pub use scalar::Scalar;
pub use trainer::{fit, infer, FitResult, Model, TrainConfig};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Csr64 = Csr<f64>;
pub type Csr32 = Csr<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type ParamStore64 = autodiff::ParamStore<f64>;
pub type ParamStore32 = autodiff::ParamStore<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type FitResult64 = FitResult<f64>;
pub type FitResult32 = FitResult<f32>;
