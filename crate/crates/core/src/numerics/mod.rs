//! Dense tensors, reverse-mode differentiation and first-order optimizers.

mod kernels;
mod optim;
mod tape;
mod tensor;

pub use kernels::{conv2d, conv_out_dim, log_softmax, matmul, softmax, transpose};
pub use optim::{Adam, AdamConfig, Sgd, SgdConfig};
pub use tape::{apply_mask, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for {ndim}-d tensor")]
    AxisOutOfRange { axis: usize, ndim: usize },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
}
