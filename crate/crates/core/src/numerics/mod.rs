//! Numerical substrate: tensors, reverse-mode differentiation, the DFT,
//! attention and the optimizer.

mod adam;
mod attention;
pub mod fft;
mod gradcheck;
mod graph;
mod params;
mod primitives;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use attention::{scaled_dot_product_attention, AttentionConfig, AttentionOutput};
pub use fft::{dft, idft, ComplexSeq};
pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, OpKind, Var, GATHER_ZERO};
pub use params::{BoundParams, ParamSet};
pub use primitives::primitive_gradchecks;
pub use tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { op: &'static str, axis: usize, rank: usize },
    #[error("{op}: slice {start}..{end} out of range for extent {len}")]
    SliceOutOfRange {
        op: &'static str,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("shape {shape:?} has a zero extent")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("log of non-positive value {0}")]
    NonPositiveLog(f64),
    #[error("sqrt of negative value {0}")]
    NegativeSqrt(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("model width {d_model} is not divisible by {num_heads} heads")]
    HeadsDoNotDivide { d_model: usize, num_heads: usize },
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("optimizer state for {name:?} has {got} entries, parameter has {expected}")]
    StateMismatch { name: String, expected: usize, got: usize },
}
