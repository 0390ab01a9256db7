//! Discrete Alt-Caffarelli type free-boundary functionals with generalized
//! Orlicz growth: integrands, grids, solvers, regularity diagnostics and an
//! experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimates;
pub mod expr;
pub mod grid;
pub mod harness;
pub mod orlicz;
pub mod solver;

pub use error::{Error, Result};
