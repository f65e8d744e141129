//! Small dense neural-network engine used by the conditional GAN.
//!
//! Everything works on row-major `f64` matrices where each row is one sample.
//! Gradients are computed by hand-written reverse-mode passes over a recorded
//! [`Trace`]; there is no general autodiff graph.

mod adam;
mod layers;
mod loss;
mod matrix;

pub use adam::AdamState;
pub use layers::{Activation, ConditionalNet, DenseLayer, EmbeddingLayer, Gradients, Session, Trace};
pub use loss::{bce_loss, bce_loss_mean, BCE_EPSILON};
pub use matrix::Matrix;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("label {label} out of range for embedding with {num_labels} rows")]
    LabelOutOfRange { label: usize, num_labels: usize },
    #[error("backward called before any forward pass was recorded")]
    NoForwardPass,
    #[error("empty batch")]
    EmptyBatch,
}

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl std::fmt::Display,
    actual: impl std::fmt::Display,
) -> NnError {
    NnError::Shape {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
