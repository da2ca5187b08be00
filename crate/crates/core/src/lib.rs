#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod distributions;
pub mod dof;
pub mod error;
pub mod factor_estimation;
pub mod fdr_bootstrap;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model_fit;
pub mod simulation;
pub mod special;
pub mod surrogate;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;
