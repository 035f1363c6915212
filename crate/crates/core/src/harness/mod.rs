//! Datasets, run configuration, reports and the command pipeline behind
//! the `autosculpt` binary.

mod config;
mod data;
mod pipeline;
mod report;

use thiserror::Error;

use crate::agent::AgentError;
use crate::model::ModelError;
use crate::numerics::TensorError;
use crate::patterns::PatternError;

pub use config::RunConfig;
pub use pipeline::*;
pub use report::{parse_sweep_tsv, sweep_tsv, Report, SweepRow, SWEEP_HEADER};
pub use data::{
    cifar_split, class_templates, encode_cifar_record, load_cifar10, parse_cifar_records, synth_dataset, Dataset,
    SynthSpec,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("missing: {0}")]
    Missing(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
