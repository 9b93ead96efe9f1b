use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use condmeta::conditioner::{mean_embedding_map, Conditioner};
use condmeta::inner::solve_online;
use condmeta::linalg::{kron_id_compress, psd_project, sym_eig, SymMatrix};
use condmeta::loss::Loss;
use condmeta::meta::{MetaConfig, MetaState};
use condmeta::testing::{random_dataset, random_psd, random_sym, rng};

const D: usize = 20;
const K: usize = 40;
const N: usize = 40;

fn linalg(c: &mut Criterion) {
    let mut r = rng(1);
    let sym = random_sym(&mut r, D * K);
    let mut g = c.benchmark_group("linalg");
    g.sample_size(10);
    g.bench_function("sym_eig 800", |b| b.iter(|| sym_eig(black_box(&sym))));
    g.bench_function("psd_project 800", |b| b.iter(|| psd_project(black_box(&sym))));
    let psd = random_psd(&mut r, D * K, D * K);
    g.bench_function("psd_project 800 already psd", |b| b.iter(|| psd_project(black_box(&psd))));
    g.finish();
}

fn conditioning(c: &mut Criterion) {
    let mut r = rng(2);
    let h = random_psd(&mut r, D * K, 50);
    let z = random_dataset(&mut r, N, D, 0.1);
    let phi = mean_embedding_map(&z);
    c.bench_function("tau_eval d=20 k=40", |b| b.iter(|| kron_id_compress(black_box(&h), black_box(&phi))));
}

fn solvers(c: &mut Criterion) {
    let mut r = rng(3);
    let z = random_dataset(&mut r, N, D, 0.1);
    let theta = random_psd(&mut r, D, D);
    c.bench_function("solve_online n=40 d=20", |b| {
        b.iter(|| solve_online(black_box(&theta), black_box(&z), &Loss::Absolute))
    });

    let phi = mean_embedding_map(&z);
    let init = Conditioner::new(SymMatrix::zeros(D * K), SymMatrix::identity(D), K).unwrap();
    let cfg = MetaConfig::new(0.1);
    let mut g = c.benchmark_group("meta");
    g.sample_size(10);
    g.bench_function("meta step d=20 k=40", |b| {
        b.iter_batched(
            || MetaState::new(init.clone()),
            |mut s| s.step(&phi, &z, &cfg, 0).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, linalg, conditioning, solvers);
criterion_main!(benches);
