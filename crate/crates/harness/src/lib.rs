//! Reproducible runs over the pose pipeline: scene generation, training,
//! evaluation, noise sweeps, gradient checks and analysis exports.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod gen;
pub mod gradcheck;
pub mod run;
pub mod sweep;
pub mod train;
