//! Tensor arithmetic, reverse-mode differentiation, Adam and seeded
//! randomness. Everything above this module computes on these types.

mod adam;
mod functions;
mod gradcheck;
mod graph;
mod prng;
mod tensor;

pub use adam::{AdamHyper, AdamState};
pub use functions::{log_softmax, logistic};
pub(crate) use functions::{sigmoid, softmax_row};
pub use gradcheck::{finite_diff_check, Coordinates, GradCheckReport, NOISE_FLOOR};
pub use graph::{Gradients, Graph, NodeId, LAYER_NORM_EPS};
pub use prng::Prng;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range for axis of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("softmax over an empty axis")]
    EmptyAxis,
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("non-finite value encountered")]
    NonFinite,
}
