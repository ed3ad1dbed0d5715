//! Neural estimator of the minimized joint for continuous features.

pub mod mlp;
pub mod model;
pub mod objective;
pub mod train;

pub use model::CouplingModel;
pub use objective::{gradient_check, EncoderPair, GradientCheck};
pub use train::{balanced_targets, dataset_digest, estimate_atoms, fit_and_estimate, train, BatchEstimate, TargetMode, TrainConfig};
