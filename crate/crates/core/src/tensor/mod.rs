//! Dense matrices, a small reverse-mode differentiation engine, and
//! power-iteration spectral norms.

mod graph;
mod matrix;
mod spectral;

pub use graph::{sigmoid, softplus, Gradients, Graph, NodeId, OpTag};
pub use matrix::{DenseMatrix, Shape};
pub use spectral::{spectral_norm, PowerIteration, SpectralEstimate};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("data length {len} does not fill a {shape} matrix")]
    DataLength { shape: Shape, len: usize },
    #[error("ragged rows: expected {expected} columns, found {found}")]
    RaggedRows { expected: usize, found: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("concat of zero parts")]
    EmptyConcat,
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("node {0} is not an input")]
    NotAnInput(usize),
    #[error("node {0} is not a parameter")]
    NotAParameter(usize),
    #[error("input node {0} was not fed")]
    MissingFeed(usize),
    #[error("backward requested before forward")]
    NotForwarded,
    #[error("loss must be 1x1, got {0}")]
    NonScalarLoss(Shape),
}
