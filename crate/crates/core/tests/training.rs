use nalgebra::{DMatrix, DVector};

use condmeta::conditioner::{Conditioner, FeatureMap};
use condmeta::env::{build_environment, EnvConfig};
use condmeta::harness::{run_experiment, write_metrics_csv, Method, RunConfig, UnconditionalPath};
use condmeta::inner::{empirical_risk, BatchOptions};
use condmeta::linalg::{range_basis, SymMatrix, DEFAULT_RTOL};
use condmeta::loss::Loss;
use condmeta::meta::{gradient_norm_bound, surrogate_loss, theoretical_step_size, MetaConfig, MetaState};
use condmeta::testing::{gaussian, random_orthonormal, random_vec, rng};
use condmeta::LabeledDataset;

#[test]
fn meta_sgd_lowers_held_out_surrogate_within_gradient_bound() {
    let mut env = EnvConfig::synthetic(4);
    env.t_tr = 120;
    env.t_va = 40;
    env.t_te = 1;
    let split = build_environment(&env, 21).unwrap();
    let map = FeatureMap::MeanEmbedding;
    let d = env.d;
    let k = map.k(d);
    let init = Conditioner::new(SymMatrix::zeros(d * k), SymMatrix::identity(d), k).unwrap();

    let k_bound = split
        .train
        .iter()
        .map(|t| map.eval(t.side_info()).unwrap().norm())
        .fold(0.0, f64::max);
    let gamma = theoretical_step_size((d as f64).sqrt(), k_bound, 1.0, 1.0, env.n_tr as f64, env.t_tr);
    let cfg = MetaConfig::new(gamma);

    let mut state = MetaState::new(init.clone());
    for (i, t) in split.train.iter().enumerate() {
        let phi = map.eval(t.side_info()).unwrap();
        let g = state.step(&phi, &t.train, &cfg, i).unwrap();
        let bound = gradient_norm_bound(phi.norm(), 1.0, 1.0, t.train.n());
        assert!(g.norm() <= bound * (1.0 + 1e-12), "step {i}: {} > {bound}", g.norm());
    }

    let opts = BatchOptions::default();
    let held_out = |cond: &Conditioner| {
        split
            .validation
            .iter()
            .map(|t| surrogate_loss(cond, &map.eval(t.side_info()).unwrap(), &t.train, &Loss::Absolute, opts).unwrap())
            .sum::<f64>()
            / split.validation.len() as f64
    };
    let before = held_out(&init);
    let after = held_out(&state.average());
    assert!(after < before, "surrogate {before} -> {after}");
}

#[test]
fn projecting_onto_the_input_range_keeps_the_risk() {
    let mut r = rng(31);
    let (d, rank, n) = (8, 3, 4000);
    let u = random_orthonormal(&mut r, d, rank);
    let w = random_vec(&mut r, d).normalize();
    let sample = |r: &mut _, m: usize| {
        let mut x = DMatrix::zeros(m, d);
        for i in 0..m {
            let z = random_vec(r, rank).normalize();
            x.row_mut(i).copy_from(&(&u * z).transpose());
        }
        let y = DVector::from_fn(m, |i, _| x.row(i).dot(&w.transpose()) + 0.1 * gaussian(r));
        LabeledDataset::new(x, y).unwrap()
    };
    let train = sample(&mut r, 200);
    let basis = range_basis(&SymMatrix::gram(train.x()), DEFAULT_RTOL);
    assert_eq!(basis.ncols(), rank);
    let w_proj = &basis * (basis.transpose() * &w);

    let test = sample(&mut r, n);
    let loss = Loss::Absolute;
    let diffs: Vec<f64> = (0..n)
        .map(|i| {
            let x = test.input(i);
            loss.value(x.dot(&w), test.label(i)) - loss.value(x.dot(&w_proj), test.label(i))
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let se = (diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
    assert!(mean.abs() <= 3.0 * se + 1e-12, "risk gap {mean} (se {se})");
    let full = empirical_risk(&w, &test, &loss);
    assert!((full - empirical_risk(&w_proj, &test, &loss)).abs() < 1e-9);
}

fn small_run() -> RunConfig {
    let mut env = EnvConfig::synthetic(2);
    env.d = 6;
    env.t_tr = 20;
    env.t_va = 6;
    env.t_te = 6;
    env.n_tr = 10;
    env.n_te = 10;
    let mut run = RunConfig::for_env(env);
    run.repetitions = 2;
    run.gamma_grid.count = 3;
    run.gamma_grid.log10_min = -2.0;
    run.gamma_grid.log10_max = 1.0;
    run
}

#[test]
fn experiments_are_reproducible_and_itl_is_flat() {
    let run = small_run();
    let csv = |exp: &condmeta::harness::Experiment| {
        let mut buf = Vec::new();
        write_metrics_csv(&exp.records(), &mut buf).unwrap();
        buf
    };
    let a = run_experiment(&run, &Method::ALL).unwrap();
    let b = run_experiment(&run, &Method::ALL).unwrap();
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(a.environment, b.environment);

    let itl = a.curve(Method::Itl).unwrap();
    for seed in &itl.per_seed {
        assert!(seed.errors.windows(2).all(|w| w[0].to_bits() == w[1].to_bits()));
    }
    assert_eq!(itl.checkpoints, vec![0, 1, 2, 4, 8, 12, 16, 20]);
}

#[test]
fn unconditional_curve_is_the_same_through_either_path() {
    let mut run = small_run();
    run.gamma = Some(0.2);
    let curve = |path| {
        let mut r = run.clone();
        r.unconditional_path = path;
        run_experiment(&r, &[Method::Unconditional]).unwrap().curves.remove(0)
    };
    let a = curve(UnconditionalPath::Dedicated);
    let b = curve(UnconditionalPath::Meta);
    for (x, y) in a.per_seed.iter().zip(&b.per_seed) {
        let bits = |v: &[f64]| v.iter().map(|e| e.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.errors), bits(&y.errors));
    }
}
