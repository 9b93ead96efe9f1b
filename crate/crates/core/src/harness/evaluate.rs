use rayon::prelude::*;

use crate::conditioner::{Conditioner, FeatureMap};
use crate::env::TaskInstance;
use crate::error::{Error, Result};
use crate::inner::{empirical_risk, solve_batch, solve_online, BatchOptions, InnerMode};
use crate::linalg::SymMatrix;
use crate::loss::Loss;

/// Source of a task's representation.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictor {
    Fixed(SymMatrix),
    Conditional { cond: Conditioner, map: FeatureMap },
}

impl Predictor {
    pub fn theta_for(&self, task: &TaskInstance) -> Result<SymMatrix> {
        match self {
            Predictor::Fixed(theta) => Ok(theta.clone()),
            Predictor::Conditional { cond, map } => cond.tau_eval(&map.eval(task.side_info())?),
        }
    }
}

/// Test error of the within-task algorithm on one task.
pub fn task_error(pred: &Predictor, task: &TaskInstance, loss: &Loss, mode: InnerMode, batch: BatchOptions) -> Result<f64> {
    let theta = pred.theta_for(task)?;
    let w = match mode {
        InnerMode::LastIterate => solve_online(&theta, &task.train, loss)?.averaged,
        InnerMode::Batch => solve_batch(&theta, &task.train, loss, batch)?.averaged,
    };
    Ok(empirical_risk(&w, &task.test, loss))
}

/// Per-task test errors, in task order.
pub fn task_errors(
    pred: &Predictor,
    tasks: &[TaskInstance],
    loss: &Loss,
    mode: InnerMode,
    batch: BatchOptions,
) -> Result<Vec<f64>> {
    tasks
        .par_iter()
        .map(|t| task_error(pred, t, loss, mode, batch))
        .collect()
}

/// Mean test error over tasks.
pub fn evaluate(pred: &Predictor, tasks: &[TaskInstance], loss: &Loss, mode: InnerMode, batch: BatchOptions) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("no tasks to evaluate".into()));
    }
    let errs = task_errors(pred, tasks, loss, mode, batch)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}
