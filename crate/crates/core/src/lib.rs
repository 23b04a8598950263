//! A small CPU neural-network framework built around handle-managed buffers,
//! prototxt model descriptions and a policy-gradient trainer.

// `as f64` casts are real conversions under the `f32` feature, and `!(a >= b)`
// is how NaN gets rejected.
#![allow(clippy::unnecessary_cast, clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod cartpole;
pub mod cli;
mod error;
pub mod imagedb;
pub mod layers;
pub mod net;
pub mod pg_trainer;
pub mod prototxt;
pub mod solver;
pub mod tensor;

pub use backend::{Backend, Handle, Real};
pub use error::{Error, Result};
pub use net::{Net, NetDef};
pub use solver::{Solver, SolverConfig};
pub use tensor::{Blob, Shape};
