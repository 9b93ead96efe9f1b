use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioner::FeatureNormTracker;
use crate::env::MetaSplit;
use crate::error::{Error, Result};

use super::config::{Method, RunConfig};
use super::evaluate::evaluate;
use super::train::run_with_checkpoints;

/// Validation outcome of one step size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub validation_error: Option<f64>,
    pub error: Option<String>,
}

/// Evaluates every candidate and returns the one with the lowest validation
/// error (ties go to the smaller step size) together with the full table.
pub fn select_gamma<F>(grid: &[f64], eval: F) -> Result<(f64, Vec<SweepRow>)>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty gamma grid".into()));
    }
    let rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|&gamma| match eval(gamma) {
            Ok(e) if e.is_finite() => SweepRow {
                gamma,
                validation_error: Some(e),
                error: None,
            },
            Ok(e) => SweepRow {
                gamma,
                validation_error: None,
                error: Some(format!("non-finite validation error {e}")),
            },
            Err(e) => {
                log::info!("gamma {gamma:e} failed: {e}");
                SweepRow {
                    gamma,
                    validation_error: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    let best = rows
        .iter()
        .filter_map(|r| r.validation_error.map(|e| (e, r.gamma)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    match best {
        Some((_, gamma)) => Ok((gamma, rows)),
        None => {
            let msgs: Vec<String> = rows
                .iter()
                .map(|r| format!("{:e}: {}", r.gamma, r.error.as_deref().unwrap_or("?")))
                .collect();
            Err(Error::SweepFailed(rows.len(), msgs.join("; ")))
        }
    }
}

/// Mean validation error of the averaged parameters after a full training run.
pub fn validation_error(run: &RunConfig, method: Method, gamma: f64, split: &MetaSplit) -> Result<f64> {
    let total = run.total_steps().min(split.train.len() * run.epochs);
    let mut tracker = FeatureNormTracker::default();
    let errs = run_with_checkpoints(run, method, gamma, &split.train, &[total], &mut tracker, |_, trainer| {
        evaluate(&trainer.snapshot(), &split.validation, &run.loss, run.inner_mode, run.batch)
    })?;
    errs.into_iter().next().ok_or(Error::EmptyDataset)
}

pub fn sweep_and_select(run: &RunConfig, method: Method, split: &MetaSplit) -> Result<(f64, Vec<SweepRow>)> {
    let grid = run.gamma_grid.values()?;
    select_gamma(&grid, |g| validation_error(run, method, g, split))
}
