//! Optimal liquidation and purchase timing of credit derivatives under
//! disagreeing market and investor pricing measures.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod boundary;
pub mod drift;
pub mod error;
pub mod grid;
pub mod mc_oracle;
pub mod models;
pub mod numeric;
pub mod pricers;
pub mod vi_solver;

pub use error::{Error, Result};
