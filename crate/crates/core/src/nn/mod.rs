//! A small neural-network kernel with hand-derived backpropagation.
//!
//! Activations travel between layers as `[batch, features]` matrices; a
//! transposed-convolution layer reads and writes its features in
//! channel-major `C x H x W` order. Everything is generic over [`Scalar`]
//! so that gradient checks can run in `f64` while models train in `f32`.

mod activation;
mod adam;
mod deconv;
mod dense;
mod io;
mod loss;
mod model;

use thiserror::Error;

pub use activation::Activation;
pub use adam::{adam_step, AdamConfig, AdamState};
pub use deconv::{AxisGeometry, Deconv2dLayer};
pub use dense::DenseLayer;
pub use io::{load_weights, save_weights, WeightsError, WEIGHTS_MAGIC};
pub use loss::{bce_loss, bce_with_logit, Bce, BCE_EPSILON};
pub use model::{
    ArchTag, Backward, ForwardCache, GeneratorSpec, Gradients, KernelInit, Layer, ModelWeights, OutputGrad,
};

/// Floating-point element type of a network.
pub trait Scalar: ndarray::NdFloat + num_traits::FromPrimitive {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("non-finite parameter after update in block {0}")]
    NonFinite(usize),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T, NnError> {
    Err(NnError::ShapeMismatch(msg.into()))
}
