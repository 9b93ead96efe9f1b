use crate::conditioner::{Conditioner, FeatureMap, FeatureNormTracker};
use crate::env::TaskInstance;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::meta::{Checkpoint, MetaConfig, MetaState, UnconditionalState};

use super::config::{Method, RunConfig, UnconditionalPath};
use super::evaluate::Predictor;

/// Meta-training state of one method.
#[derive(Clone, Debug)]
pub enum Trainer {
    Itl { d: usize },
    Unconditional { state: UnconditionalState, cfg: MetaConfig },
    Meta { state: MetaState, map: FeatureMap, cfg: MetaConfig },
}

impl Trainer {
    pub fn new(run: &RunConfig, method: Method, gamma: f64, d: usize) -> Result<Self> {
        let c0 = SymMatrix::identity(d).scaled(run.c0_scale);
        let cfg = run.meta_config(gamma);
        Ok(match (method, run.unconditional_path) {
            (Method::Itl, _) => Trainer::Itl { d },
            (Method::Unconditional, UnconditionalPath::Dedicated) => Trainer::Unconditional {
                state: UnconditionalState::new(c0),
                cfg,
            },
            (Method::Unconditional, UnconditionalPath::Meta) => Trainer::Meta {
                state: MetaState::new(Conditioner::new(SymMatrix::zeros(d), c0, 1)?),
                map: FeatureMap::Constant,
                cfg: MetaConfig { freeze_h: true, ..cfg },
            },
            (Method::Conditional, _) => {
                let map = run.conditional_map()?;
                let k = map.k(d);
                Trainer::Meta {
                    state: MetaState::new(Conditioner::new(SymMatrix::zeros(d * k), c0, k)?),
                    map,
                    cfg,
                }
            }
        })
    }

    pub fn steps(&self) -> usize {
        match self {
            Trainer::Itl { .. } => 0,
            Trainer::Unconditional { state, .. } => state.steps(),
            Trainer::Meta { state, .. } => state.steps(),
        }
    }

    pub fn step(&mut self, task: &TaskInstance, task_index: usize, tracker: &mut FeatureNormTracker) -> Result<()> {
        match self {
            Trainer::Itl { .. } => Ok(()),
            Trainer::Unconditional { state, cfg } => state.step(&task.train, cfg, task_index).map(|_| ()),
            Trainer::Meta { state, map, cfg } => {
                let phi = map.eval(task.side_info())?;
                tracker.observe(&phi);
                state.step(&phi, &task.train, cfg, task_index).map(|_| ())
            }
        }
    }

    /// Predictor from the running average of the iterates.
    pub fn snapshot(&self) -> Predictor {
        match self {
            Trainer::Itl { d } => Predictor::Fixed(SymMatrix::identity(*d)),
            Trainer::Unconditional { state, .. } => Predictor::Fixed(state.average()),
            Trainer::Meta { state, map, .. } => Predictor::Conditional {
                cond: state.average(),
                map: *map,
            },
        }
    }

    pub fn checkpoint(&self, gamma: f64, seed: u64) -> Checkpoint {
        let (cond, map) = match self.snapshot() {
            Predictor::Fixed(theta) => {
                let d = theta.dim();
                (Conditioner::new(SymMatrix::zeros(d), theta, 1).expect("projected iterate"), FeatureMap::Constant)
            }
            Predictor::Conditional { cond, map } => (cond, map),
        };
        Checkpoint::new(&cond, map, gamma, self.steps(), seed)
    }
}

/// Meta-training task order: `epochs` passes over `tasks`.
pub fn task_stream(tasks: &[TaskInstance], epochs: usize) -> impl Iterator<Item = (usize, &TaskInstance)> {
    (0..epochs).flat_map(move |_| tasks.iter().enumerate())
}

/// Trains and calls `at_checkpoint(t, predictor)` for each checkpoint `t`.
pub fn run_with_checkpoints<R>(
    run: &RunConfig,
    method: Method,
    gamma: f64,
    train: &[TaskInstance],
    checkpoints: &[usize],
    tracker: &mut FeatureNormTracker,
    mut at_checkpoint: impl FnMut(usize, &Trainer) -> Result<R>,
) -> Result<Vec<R>> {
    let d = train.first().ok_or(Error::EmptyDataset)?.d();
    let mut trainer = Trainer::new(run, method, gamma, d)?;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    while let Some(&&0) = next.peek() {
        out.push(at_checkpoint(0, &trainer)?);
        next.next();
    }
    if next.peek().is_none() {
        return Ok(out);
    }
    for (step, (_, task)) in task_stream(train, run.epochs).take(run.total_steps()).enumerate() {
        trainer.step(task, task.id as usize, tracker)?;
        let t = step + 1;
        while let Some(&&c) = next.peek() {
            if c != t {
                break;
            }
            out.push(at_checkpoint(t, &trainer)?);
            next.next();
        }
        if next.peek().is_none() {
            break;
        }
    }
    Ok(out)
}
