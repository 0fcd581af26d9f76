//! Evaluation protocol: pairwise accuracy for any reward function,
//! multi-seed experiments over shifted worlds, aggregation, sweeps and
//! report files.

mod experiment;
mod metrics;
mod report;
mod reward_fn;

pub use experiment::{
    run_experiment, sweep, EvalWorld, ExperimentConfig, Failure, GeneratorSpec, RunOptions, RunSummary, Sizes,
    SweepGrid, SweepRow,
};
pub use metrics::{pairwise_accuracy, pairwise_counts, Accuracy};
pub use report::{
    aggregate, emit_report, finding, format_cell, render_table, report_to_json, rows_from_csv, rows_to_csv,
    Aggregates, Cell, EvalReport, Method, ReportFormat, Row, WinProportions, WinStat,
};
pub use reward_fn::{RewardFunction, Scorer};

use crate::alignment::AlignError;
use crate::models::{CheckpointError, ModelError};
use crate::trainers::TrainError;
use crate::world::WorldError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("reward function produced a non-finite score")]
    NonFiniteScore,
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("refusing to emit a report with no rows")]
    EmptyReport,
    #[error("bad report file: {0}")]
    Schema(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
