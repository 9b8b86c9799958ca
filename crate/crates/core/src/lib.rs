//! Column-wise multiprocessor approximate message passing.
//!
//! A library for solving `y = A x + w` when the columns of `A` are split
//! across processors that coordinate through a fusion center, together with
//! the scalar state-evolution recursions that predict per-iteration errors,
//! an independent general-recursion oracle for cross-checking the engines,
//! a message-passing execution layer, and a Monte-Carlo experiment harness.
//!
//! The numeric core is generic over the scalar type (`f32`/`f64`); the
//! aliases below pin the `f64` instantiations that the file formats and the
//! CLI use.

pub mod amp;
pub mod config;
pub mod denoise;
pub mod emit;
mod error;
pub mod harness;
pub mod losses;
pub mod mat;
pub mod model;
pub mod multiproc;
pub mod oracle;
pub mod quad;
pub mod rng;
pub mod runtime;
pub mod scalar;
pub mod se;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` instantiations used by the CLI, file formats, and wire protocol.
pub type Mat64 = mat::Mat<f64>;
pub type PriorSpec64 = model::PriorSpec<f64>;
pub type ProblemInstance64 = model::ProblemInstance<f64>;
pub type Denoiser64 = denoise::Denoiser<f64>;
pub type ExpectationEngine64 = se::ExpectationEngine<f64>;
pub type SeTrajectory64 = se::SeTrajectory<f64>;
pub type DampingConfig64 = multiproc::DampingConfig<f64>;
pub type CmpRun64 = multiproc::CmpRun<f64>;
pub type AmpRun64 = amp::AmpRun<f64>;
