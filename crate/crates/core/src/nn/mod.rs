//! The clustering network and its training primitives.
//!
//! Architecture, for an input of `2 x L` samples:
//!
//! ```text
//! conv(32)  -> BN -> ReLU
//! conv(128) -> BN -> ReLU -> maxpool/2 -> BN
//! conv(128) -> BN -> ReLU -> maxpool/2 -> BN
//! conv(32)  -> BN -> ReLU
//! flatten -> dense(64) -> ReLU -> dense(k) -> softmax -> L2 row normalization
//! ```
//!
//! Convolutions are 1-D over time with the I/Q rows as input channels,
//! kernel 3, stride 1 and zero "same" padding. Gradients are computed by a
//! hand-written reverse pass over the cached activations of a train-mode
//! forward pass.

mod adam;
mod checkpoint;
mod gemm;
mod layers;
mod model;
mod tensor;

pub use adam::{adam_update, BETA1, BETA2, EPSILON};
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{
    pooled_length, BatchNorm, Conv1d, Dense, FeatureMatrix, Gradients, ModelState, Trace, CONV_CHANNELS,
    HIDDEN_UNITS, INPUT_CHANNELS,
};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("unsupported dimensions: L={signal_length} leaves no time steps after pooling or k={num_classes} < 2")]
    InvalidDims { signal_length: usize, num_classes: usize },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("backward pass does not match its forward pass: {0}")]
    TraceMismatch(String),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint shape table disagrees: {0}")]
    ShapeTable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
