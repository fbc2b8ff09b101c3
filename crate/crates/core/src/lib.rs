//! Weighted integral inequalities with Gram-matrix and free-matrix lower
//! bounds, and their use in LMI stability tests for linear coupled
//! differential-difference systems with distributed delay.

// `!(x > 0.0)` is deliberate: NaN has to fail those checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cdds;
pub mod config;
pub mod error;
pub mod gram;
pub mod inequality;
pub mod matalg;
pub mod quadrature;
pub mod stability;
pub mod sweep;

pub use error::{Error, Result};
