//! Desk-scale reproduction of the utility experiments on synthetic,
//! long-tailed count data.

mod experiments;
mod metrics;
mod synthetic;

use thiserror::Error;

pub use experiments::{
    error_run, run_experiment, topn_distances, CsvTable, ExperimentConfig, ExperimentName, TopNQuery,
    DEFAULT_EPSILONS, THRESHOLD_EPSILONS, TOPN_EPSILONS,
};
pub use metrics::{error_metrics, jaccard_distance, ErrorStats};
pub use synthetic::{generate_synthetic, ExpectedCell, SyntheticData, SyntheticSpec};

use crate::engine::EngineError;
use crate::store::StoreError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("true and noisy sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no queries to evaluate")]
    Empty,
    #[error("unknown experiment `{0}` (expected epsilon-sweep, threshold-sweep or topn)")]
    UnknownExperiment(String),
    #[error("invalid synthetic spec: {0}")]
    BadSpec(&'static str),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
