//! Behavior-cloning training, seeded evaluation, ablations and reports.

mod ablate;
mod config;
mod eval;
mod report;
mod train;

use thiserror::Error;

pub use ablate::{ablate, run_variants, variants_for, VariantRun};
pub use config::{ConfigError, ExperimentConfig};
pub use eval::{checkpoint_digest, eval_seeds, evaluate, evaluate_agent, wilson_interval, EvalReport, ResultRow};
pub use report::{
    default_expectations, read_rows_csv, render_markdown, rows_to_csv, write_report, Expectation, Relation, Verdict, PUBLISHED_REFERENCE,
    RESULTS_HEADER,
};
pub use train::{demo_seed_base, train, train_executor, train_planner, with_fresh_planner, TrainSummary, LOSS_LOG_HEADER};

use crate::policy::PolicyError;
use crate::tasks::{DemoError, TaskError};

/// Named RNG streams under the master seed.
pub mod streams {
    pub const DEMOS: u64 = 1;
    pub const INIT: u64 = 2;
    pub const EXECUTOR_BATCHES: u64 = 3;
    pub const PLANNER_BATCHES: u64 = 4;
    pub const EVALUATION: u64 = 5;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{phase} training diverged at iteration {iteration}: non-finite loss or gradient")]
    Divergence { phase: &'static str, iteration: usize },
    #[error("demonstrations for `{demos}` cannot train a policy for `{task}`")]
    DemoTaskMismatch { demos: String, task: String },
    #[error("no training samples")]
    NoSamples,
    #[error("rows file: {0}")]
    Schema(String),
    #[error("nothing to report")]
    EmptyRows,
}

impl HarnessError {
    /// True for failures of the file system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            HarnessError::Io(_) => true,
            HarnessError::Demo(DemoError::Io(_)) => true,
            HarnessError::Policy(PolicyError::Io(_)) => true,
            HarnessError::Policy(PolicyError::Nn(crate::nn::NnError::Io(_))) => true,
            _ => false,
        }
    }
}
