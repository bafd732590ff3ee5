//! Monte Carlo estimation of the correlation threshold at which composite
//! directional couplers stop outperforming a single uniform coupler.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupler;
pub mod error_model;
pub mod mc;
pub mod optimizer;
pub mod records;
pub mod solution_io;
pub mod su2;
pub mod threshold;
