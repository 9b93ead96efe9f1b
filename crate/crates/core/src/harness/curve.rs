use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditioner::{FeatureMap, FeatureNormTracker};
use crate::env::{build_environment, MetaSplit, TaskInstance};
use crate::error::Result;
use crate::linalg::SymMatrix;
use crate::meta::theoretical_step_size;

use super::config::{Method, RunConfig};
use super::evaluate::{evaluate, Predictor};
use super::sweep::{sweep_and_select, SweepRow};
use super::train::run_with_checkpoints;

/// One point of a learning curve, aggregated over repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub gamma: Option<f64>,
    pub tasks_seen: usize,
    /// Seed of the first repetition; repetition `r` uses `seed + r`.
    pub seed: u64,
    pub repetitions: usize,
    pub mean_test_error: f64,
    /// Sample standard deviation across repetitions.
    pub std_test_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCurve {
    pub seed: u64,
    pub errors: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveResult {
    pub method: Method,
    pub gamma: Option<f64>,
    pub sweep: Vec<SweepRow>,
    pub checkpoints: Vec<usize>,
    pub per_seed: Vec<SeedCurve>,
    pub records: Vec<MetricsRecord>,
    pub wall_time_s: f64,
}

impl CurveResult {
    pub fn final_mean(&self) -> f64 {
        self.records.last().map(|r| r.mean_test_error).unwrap_or(f64::NAN)
    }
}

/// Environment statistics recorded with every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSummary {
    /// sha256 of the first repetition's task lists.
    pub env_hash: String,
    /// Largest side-information feature norm of the conditional map.
    pub measured_k: f64,
    /// Largest input norm.
    pub measured_r: f64,
    pub n_tr: usize,
    /// Step size of the meta-SGD bound per unit parameter distance.
    pub theoretical_step_size_per_unit_distance: f64,
}

/// Environments of all repetitions, built once and shared across methods.
pub struct Environments {
    pub seeds: Vec<u64>,
    pub splits: Vec<MetaSplit>,
}

impl Environments {
    pub fn build(run: &RunConfig) -> Result<Self> {
        let seeds: Vec<u64> = (0..run.repetitions as u64).map(|r| run.env.seed + r).collect();
        let splits = seeds
            .iter()
            .map(|&s| build_environment(&run.env, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Environments { seeds, splits })
    }

    pub fn summary(&self, map: &FeatureMap, run: &RunConfig) -> Result<EnvSummary> {
        let split = &self.splits[0];
        let all: Vec<&TaskInstance> = split.train.iter().chain(&split.validation).chain(&split.test).collect();
        let mut tracker = FeatureNormTracker::default();
        let mut radius = 0.0f64;
        for t in &all {
            tracker.observe(&map.eval(t.side_info())?);
            radius = radius.max(t.train.radius()).max(t.test.radius());
        }
        let n_tr = split.train.first().map(|t| t.train.n()).unwrap_or(run.env.n_tr);
        Ok(EnvSummary {
            env_hash: hash_split(split)?,
            measured_k: tracker.max_norm,
            measured_r: radius,
            n_tr,
            theoretical_step_size_per_unit_distance: theoretical_step_size(
                1.0,
                tracker.max_norm,
                run.loss.lipschitz(),
                radius,
                n_tr as f64,
                run.total_steps().max(1),
            ),
        })
    }
}

pub fn hash_split(split: &MetaSplit) -> Result<String> {
    let mut h = Sha256::new();
    for list in [&split.train, &split.validation, &split.test] {
        h.update(serde_json::to_vec(list)?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Learning curve of `run.method` on freshly built environments.
pub fn learning_curve(run: &RunConfig) -> Result<CurveResult> {
    run.validate()?;
    let envs = Environments::build(run)?;
    learning_curve_on(run, run.method, &envs)
}

/// Selects `γ` on the first repetition's validation tasks (unless fixed),
/// then evaluates snapshots at every checkpoint on each repetition's test tasks.
pub fn learning_curve_on(run: &RunConfig, method: Method, envs: &Environments) -> Result<CurveResult> {
    let start = Instant::now();
    let checkpoints = run.checkpoint_list();
    let (gamma, sweep) = match (method, run.gamma) {
        (Method::Itl, _) => (None, Vec::new()),
        (_, Some(g)) => (Some(g), Vec::new()),
        (_, None) => {
            let (g, rows) = sweep_and_select(run, method, &envs.splits[0])?;
            log::info!("{}: selected gamma {g:e}", method.name());
            (Some(g), rows)
        }
    };

    let per_seed: Vec<SeedCurve> = envs
        .seeds
        .par_iter()
        .zip(envs.splits.par_iter())
        .map(|(&seed, split)| {
            let errors = match method {
                Method::Itl => {
                    let d = split.test.first().map(|t| t.d()).unwrap_or(run.env.d);
                    let e = evaluate(&Predictor::Fixed(SymMatrix::identity(d)), &split.test, &run.loss, run.inner_mode, run.batch)?;
                    vec![e; checkpoints.len()]
                }
                _ => {
                    let mut tracker = FeatureNormTracker::default();
                    run_with_checkpoints(run, method, gamma.unwrap_or(0.0), &split.train, &checkpoints, &mut tracker, |_, tr| {
                        evaluate(&tr.snapshot(), &split.test, &run.loss, run.inner_mode, run.batch)
                    })?
                }
            };
            Ok(SeedCurve { seed, errors })
        })
        .collect::<Result<_>>()?;

    let records = checkpoints
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let vals: Vec<f64> = per_seed.iter().filter_map(|s| s.errors.get(i).copied()).collect();
            let (mean, std) = mean_std(&vals);
            MetricsRecord {
                method: method.name().to_string(),
                gamma,
                tasks_seen: t,
                seed: envs.seeds[0],
                repetitions: vals.len(),
                mean_test_error: mean,
                std_test_error: std,
            }
        })
        .collect();

    Ok(CurveResult {
        method,
        gamma,
        sweep,
        checkpoints: checkpoints.clone(),
        per_seed,
        records,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Curves of several methods on shared environments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Experiment {
    pub config: RunConfig,
    pub environment: EnvSummary,
    pub curves: Vec<CurveResult>,
}

impl Experiment {
    pub fn curve(&self, method: Method) -> Option<&CurveResult> {
        self.curves.iter().find(|c| c.method == method)
    }

    pub fn records(&self) -> Vec<MetricsRecord> {
        self.curves.iter().flat_map(|c| c.records.iter().cloned()).collect()
    }
}

pub fn run_experiment(run: &RunConfig, methods: &[Method]) -> Result<Experiment> {
    run.validate()?;
    let envs = Environments::build(run)?;
    let environment = envs.summary(&run.conditional_map()?, run)?;
    let curves = methods
        .iter()
        .map(|&m| learning_curve_on(run, m, &envs))
        .collect::<Result<Vec<_>>>()?;
    Ok(Experiment {
        config: run.clone(),
        environment,
        curves,
    })
}
