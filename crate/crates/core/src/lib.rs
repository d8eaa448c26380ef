//! One-dimensional laboratory for phase segregation with nonlocal
//! interactions: van der Waals coexistence, convex envelopes of logarithmic
//! double wells, well-balanced interaction kernels, sharp-interface limits and
//! their finite-dimensional reduction, and surface-tension exponents.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod energy;
pub mod error;
pub(crate) mod hull;
pub mod kernels;
pub mod minimize;
pub mod numeric;
mod plot;
pub mod thermo;
pub mod wells;

pub use error::{Error, Result};
