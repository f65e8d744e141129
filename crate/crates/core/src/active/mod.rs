//! Active training of the conditional GAN: least-confidence selection of
//! candidates to execute, self-training on the confident rest, and a Fréchet
//! joint distance stopping rule.

mod eval;
mod fjd;
mod lc;
mod pool;
mod train;

pub use eval::{eval_generator_accuracy, AccuracyReport};
pub use fjd::{
    fjd, frechet_distance, frechet_distance_samples, joint_vector, sqrtm_psd, FjdError, GaussianSummary,
    COVARIANCE_REGULARIZATION,
};
pub use lc::{least_confidence_rank, uncertainty};
pub use pool::{sample_real_batch, LabeledPool};
pub use train::{
    train_active, ActiveError, ActiveOutcome, ActiveState, AlConfig, Control, IterationRecord, StopReason,
};
