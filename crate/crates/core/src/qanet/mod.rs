//! Quality assessment network: architecture, ranking loss and training.

mod loss;
mod model;
mod train;

pub use loss::{ranking_loss, ranking_loss_grad, softplus};
pub use model::{Arch, Dense, QaModel, Widths, FORMAT_VERSION};
pub use train::{
    pair_loss, pair_loss_gradient, train, validation_accuracy, EpochLog, TrainConfig, TrainItem, TrainPair,
    TrainReport, Trainer,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QanetError {
    #[error("cue dimensions {got:?} do not match the model's {expected:?} (point, recon)")]
    DimMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("ground-truth qualities are tied ({0})")]
    TiedGroundTruth(f64),
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),
    #[error("no pair of items differs in quality by at least {0}")]
    NoEligiblePairs(f64),
    #[error("corpus has {got} items, training needs at least {needed}")]
    InsufficientCorpus { needed: usize, got: usize },
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("malformed model file: {0}")]
    Format(String),
}
