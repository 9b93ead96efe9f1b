use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EnvConfig, EnvKind, TaskInstance};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::oracles::haar_orthogonal;

/// Generated cluster environment.
#[derive(Clone, Debug)]
pub struct SyntheticEnvironment {
    /// `d × subspace_dim` orthonormal basis of each cluster.
    pub bases: Vec<DMatrix<f64>>,
    pub tasks: Vec<TaskInstance>,
}

/// Draws `T_tr + T_va + T_te` tasks from a uniform mixture of clusters.
///
/// Each task has `w = P(j) w̃` with `w̃` a normalized Gaussian vector,
/// inputs uniform on the unit sphere and labels `⟨x, w⟩ + noise_sd · ε`.
pub fn gen_synthetic(cfg: &EnvConfig) -> Result<SyntheticEnvironment> {
    if cfg.kind != EnvKind::Synthetic {
        return Err(Error::InvalidArgument(format!("expected a synthetic config, got {}", cfg.kind.name())));
    }
    cfg.validate()?;
    let (d, p, m) = (cfg.d, cfg.subspace_dim, cfg.clusters);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let bases: Vec<DMatrix<f64>> = if m * p <= d {
        let q = haar_orthogonal(&mut rng, d);
        (0..m).map(|j| q.columns(j * p, p).into_owned()).collect()
    } else {
        log::warn!("{m} clusters of rank {p} exceed d = {d}; cluster subspaces will overlap");
        (0..m).map(|_| haar_orthogonal(&mut rng, d).columns(0, p).into_owned()).collect()
    };

    let n_tot = cfg.n_tr + cfg.n_te;
    let mut tasks = Vec::with_capacity(cfg.total_tasks());
    for id in 0..cfg.total_tasks() {
        let j = rng.gen_range(0..m);
        let w_small = gaussian_vec(&mut rng, p).normalize();
        let w = &bases[j] * w_small;
        let mut x = DMatrix::zeros(n_tot, d);
        let mut y = DVector::zeros(n_tot);
        for i in 0..n_tot {
            let xi = gaussian_vec(&mut rng, d).normalize();
            let eps: f64 = StandardNormal.sample(&mut rng);
            y[i] = xi.dot(&w) + cfg.noise_sd * eps;
            x.set_row(i, &xi.transpose());
        }
        let train = LabeledDataset::with_radius(x.rows(0, cfg.n_tr).into_owned(), y.rows(0, cfg.n_tr).into_owned(), 1.0)?;
        let test = LabeledDataset::with_radius(
            x.rows(cfg.n_tr, cfg.n_te).into_owned(),
            y.rows(cfg.n_tr, cfg.n_te).into_owned(),
            1.0,
        )?;
        tasks.push(TaskInstance {
            id: id as u64,
            train,
            test,
            cluster: Some(j),
            target: Some(w.iter().copied().collect()),
        });
    }
    Ok(SyntheticEnvironment { bases, tasks })
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}
