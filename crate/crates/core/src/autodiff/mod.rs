//! Reverse-mode differentiation and the learnable building blocks.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use nn::{dropout, Linear, Lstm, LstmState, Mlp};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
