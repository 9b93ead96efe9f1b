//! Seeded random instances shared by unit and integration tests.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::LabeledDataset;
use crate::linalg::SymMatrix;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut TestRng) -> f64 {
    StandardNormal.sample(r)
}

pub fn random_vec(r: &mut TestRng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gaussian(r))
}

pub fn random_mat(r: &mut TestRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian(r))
}

pub fn random_sym(r: &mut TestRng, n: usize) -> SymMatrix {
    SymMatrix::new(random_mat(r, n, n)).unwrap()
}

/// `G Gᵀ` for a Gaussian `n × rank` matrix `G`.
pub fn random_psd(r: &mut TestRng, n: usize, rank: usize) -> SymMatrix {
    let g = random_mat(r, n, rank);
    SymMatrix::new(&g * g.transpose()).unwrap()
}

/// `n × p` matrix with orthonormal columns (thin QR of a Gaussian matrix).
pub fn random_orthonormal(r: &mut TestRng, n: usize, p: usize) -> DMatrix<f64> {
    random_mat(r, n, p).qr().q()
}

/// Dataset with rows on the unit sphere and labels `⟨x, w⟩ + noise`.
pub fn random_dataset(r: &mut TestRng, n: usize, d: usize, noise: f64) -> LabeledDataset {
    let w = random_vec(r, d).normalize();
    let mut x = random_mat(r, n, d);
    for mut row in x.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    let y = DVector::from_fn(n, |i, _| x.row(i).dot(&w.transpose()) + noise * gaussian(r));
    LabeledDataset::new(x, y).unwrap()
}
