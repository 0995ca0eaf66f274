//! Config-driven runs: partition, fingerprint, train every listed strategy,
//! evaluate, and write JSON/CSV reports. Suites expand a grid of runs with
//! child seeds derived from the master seed and the run index.

mod ari;
mod config;
mod report;
mod run;
mod suite;

pub use ari::compute_ari;
pub use config::{
    Backbone, DatasetRef, DatasetSpec, ExperimentConfig, HeterogeneitySpec, ModelSpec, StatsSpec,
    SyntheticSpec, TrainingSpec, DATA_ROOT_ENV, DEFAULT_EPOCHS, DEFAULT_PER_CLASS_CAP,
};
pub use report::{
    aggregate_reports, emit_report, format_table, read_report, read_reports, write_aggregate, AggregateRow, DetailRow,
    Formats, SummaryRow,
};
pub use run::{
    backbone, fingerprint_separation, load_data, prepare, run_experiment, run_loaded, with_threads,
    BuildInfo, ClientRecord, DesignEcho, LoadedData, RunOptions, RunReport, StrategyResult,
};
pub use suite::{child_seed, run_suite, GridAxes, GridConfig, SuiteEntry, SuiteOutcome};

use std::error::Error as StdError;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Load,
    Partition,
    Fingerprint,
    Train,
    Evaluate,
    Emit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Config => "config",
            Self::Load => "load",
            Self::Partition => "partition",
            Self::Fingerprint => "fingerprint",
            Self::Train => "train",
            Self::Evaluate => "evaluate",
            Self::Emit => "emit",
        })
    }
}

/// A failure tagged with the pipeline stage it happened in.
#[derive(Debug, Error)]
#[error("{stage} stage: {source}")]
pub struct ExperimentError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn StdError + Send + Sync>,
}

impl ExperimentError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn StdError + Send + Sync>>) -> Self {
        Self {
            stage,
            source: source.into(),
        }
    }

    pub fn msg(stage: Stage, message: String) -> Self {
        Self::new(stage, message)
    }

    /// `map_err` adapter.
    pub fn at<E: Into<Box<dyn StdError + Send + Sync>>>(stage: Stage) -> impl FnOnce(E) -> Self {
        move |e| Self::new(stage, e)
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;
