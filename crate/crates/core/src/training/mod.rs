//! Optimization, evaluation, checkpoints and the multi-run protocol.

mod adam;
mod checkpoint;
mod config;
mod metrics;
mod stats;
mod trainer;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::tensor_math::TensorError;
use crate::text::TextError;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::TrainConfig;
pub use metrics::{macro_f1, ClassScores, ClassificationReport, EarlyStopping, StopDecision};
pub use stats::{summarize, welch_ttest, SampleSummary, TTest};
pub use trainer::{
    encode_dataset, evaluate, multi_run, multi_run_ttest, predict_labels, train, EpochRecord,
    RunMetrics, TrainOutcome, GRAD_CHUNK,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("non-finite gradient {value} in {param}[{index}]")]
    NonFiniteGradient {
        param: String,
        index: usize,
        value: f64,
    },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
