//! Experiment orchestration: method comparison, step-size validation,
//! learning curves and result files.

mod config;
mod curve;
mod evaluate;
mod output;
mod sweep;
mod train;

pub use config::{GammaGrid, Method, RunConfig, UnconditionalPath};
pub use curve::{
    hash_split, learning_curve, learning_curve_on, run_experiment, CurveResult, EnvSummary, Environments, Experiment,
    MetricsRecord, SeedCurve,
};
pub use evaluate::{evaluate, task_error, task_errors, Predictor};
pub use output::{read_metrics_csv, write_experiment, write_metrics_csv, MANIFEST_FILE, METRICS_FILE, METRICS_HEADER};
pub use sweep::{select_gamma, sweep_and_select, validation_error, SweepRow};
pub use train::{run_with_checkpoints, task_stream, Trainer};
