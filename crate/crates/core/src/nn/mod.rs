//! Tensors and the differentiable layers the detector is built from.
//!
//! Every layer exposes a forward pass returning a cache and a backward pass
//! consuming it. All reductions run in a fixed order, so results are
//! reproducible bit-for-bit regardless of thread scheduling.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
mod layer;
pub mod linear;
pub mod loss;
pub mod sgd;
mod tensor;

use thiserror::Error;

pub use activation::{maxpool2x2_backward, maxpool2x2_forward, relu, relu_backward};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormParams, BatchStats, BN_EPS};
pub use conv::{conv2d_backward, conv2d_forward};
pub use gradcheck::{finite_diff_check, numeric_gradient, relative_error, GradCheckReport};
pub use layer::{Layer, LayerCache, LayerKind, LayerOutput};
pub use linear::{fc_backward, fc_forward};
pub use loss::{softmax, softmax_cross_entropy, SoftmaxCrossEntropy};
pub use sgd::{sgd_step, Sgd};
pub use tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("stale cache: {0}")]
    StaleCache(String),
    #[error("non-finite value at flat index {index} in {context}")]
    NonFinite { context: String, index: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}
