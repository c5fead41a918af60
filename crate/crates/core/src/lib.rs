//! Monte Carlo solvers for first order transport PDEs based on a
//! regime-switching diffusion representation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod mesh_path;
pub mod montecarlo;
pub mod problems;
pub mod weights;

pub use error::{Error, Result};
