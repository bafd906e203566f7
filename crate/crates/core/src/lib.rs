//! Depth-robust 6DoF pose estimation: a from-scratch differentiable network
//! with frequency-domain geometric filtering and two-stage attention fusion,
//! the ADD/ADD-S/AUC/depth-ADD metric suite, a synthetic noisy RGBD scene
//! generator and the on-disk formats tying them together.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod geometry;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod seed;
pub mod synthdata;
