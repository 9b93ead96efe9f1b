//! Side-information feature maps and the conditioning function
//! `τ_{H,C}(s) = (I_d ⊗ Φ(s)ᵀ) H (I_d ⊗ Φ(s)) + C`.

use std::f64::consts::FRAC_PI_4;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{kron_id_compress, SymMatrix};

/// Tolerance on the smallest eigenvalue when validating PSD parameters.
const PSD_TOL: f64 = 1e-9;

/// Map from a dataset (side information) to a `k`-vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum FeatureMap {
    /// Mean of `vec(x_i (y_i, 1)ᵀ)`, `k = 2d`.
    MeanEmbedding,
    /// Ridge solution with a bias column, `k = d + 1`.
    Ridge,
    /// Angle encoding of ratings, `k = 2d + 1`.
    Trig { rating_max: f64, rating_min: f64 },
    /// Always `(1)`, `k = 1`.
    Constant,
}

impl FeatureMap {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMap::MeanEmbedding => "mean_embedding",
            FeatureMap::Ridge => "ridge",
            FeatureMap::Trig { .. } => "trig",
            FeatureMap::Constant => "constant",
        }
    }

    /// Parses a map name; `trig` takes its rating bounds from the arguments.
    pub fn from_name(name: &str, rating_max: f64, rating_min: f64) -> Result<Self> {
        match name {
            "mean_embedding" => Ok(FeatureMap::MeanEmbedding),
            "ridge" => Ok(FeatureMap::Ridge),
            "trig" => FeatureMap::trig(rating_max, rating_min),
            "constant" => Ok(FeatureMap::Constant),
            other => Err(Error::InvalidArgument(format!("unknown feature map `{other}`"))),
        }
    }

    pub fn trig(rating_max: f64, rating_min: f64) -> Result<Self> {
        if !(rating_max > rating_min) {
            return Err(Error::InvalidArgument(format!(
                "trig map needs rating_max > rating_min, got {rating_max} and {rating_min}"
            )));
        }
        Ok(FeatureMap::Trig { rating_max, rating_min })
    }

    /// Output dimension for inputs of dimension `d`.
    pub fn k(&self, d: usize) -> usize {
        match self {
            FeatureMap::MeanEmbedding => 2 * d,
            FeatureMap::Ridge => d + 1,
            FeatureMap::Trig { .. } => 2 * d + 1,
            FeatureMap::Constant => 1,
        }
    }

    pub fn eval(&self, z: &LabeledDataset) -> Result<DVector<f64>> {
        match *self {
            FeatureMap::MeanEmbedding => Ok(mean_embedding_map(z)),
            FeatureMap::Ridge => ridge_solution_map(z),
            FeatureMap::Trig { rating_max, rating_min } => trig_map(z, rating_max, rating_min),
            FeatureMap::Constant => Ok(constant_map()),
        }
    }
}

/// `(1/n) Σ vec(x_i (y_i, 1)ᵀ)` with the two columns stacked.
pub fn mean_embedding_map(z: &LabeledDataset) -> DVector<f64> {
    let (n, d) = (z.n(), z.d());
    let mut out = DVector::zeros(2 * d);
    for i in 0..n {
        let y = z.label(i);
        for j in 0..d {
            let x = z.x()[(i, j)];
            out[j] += y * x;
            out[d + j] += x;
        }
    }
    out / n as f64
}

/// Solution of `(X̂ᵀX̂ + I) w = X̂ᵀ y` with `X̂ = [X, 1]`.
pub fn ridge_solution_map(z: &LabeledDataset) -> Result<DVector<f64>> {
    let (n, d) = (z.n(), z.d());
    let xh = DMatrix::from_fn(n, d + 1, |i, j| if j < d { z.x()[(i, j)] } else { 1.0 });
    let mut a = xh.tr_mul(&xh);
    for j in 0..=d {
        a[(j, j)] += 1.0;
    }
    let b = xh.tr_mul(z.y());
    a.cholesky()
        .map(|c| c.solve(&b))
        .ok_or(Error::NonFinite("ridge system"))
}

/// `(vec([cos(a) ⊙ c, sin(a) ⊙ c]), 1)` with `a = Σ x_i (π/4)(M − y_i)/(M − m)`
/// and `c = Σ x_i`.
pub fn trig_map(z: &LabeledDataset, rating_max: f64, rating_min: f64) -> Result<DVector<f64>> {
    if !(rating_max > rating_min) {
        return Err(Error::InvalidArgument(format!(
            "trig map needs rating_max > rating_min, got {rating_max} and {rating_min}"
        )));
    }
    let d = z.d();
    let mut a = DVector::<f64>::zeros(d);
    let mut c = DVector::<f64>::zeros(d);
    for i in 0..z.n() {
        let angle = FRAC_PI_4 * (rating_max - z.label(i)) / (rating_max - rating_min);
        for j in 0..d {
            let x = z.x()[(i, j)];
            a[j] += x * angle;
            c[j] += x;
        }
    }
    let mut out = DVector::zeros(2 * d + 1);
    for j in 0..d {
        out[j] = a[j].cos() * c[j];
        out[d + j] = a[j].sin() * c[j];
    }
    out[2 * d] = 1.0;
    Ok(out)
}

pub fn constant_map() -> DVector<f64> {
    DVector::from_element(1, 1.0)
}

/// Tracks the largest feature norm seen against an optional declared bound.
#[derive(Clone, Debug, Default)]
pub struct FeatureNormTracker {
    pub declared: Option<f64>,
    pub max_norm: f64,
    pub violations: usize,
}

impl FeatureNormTracker {
    pub fn new(declared: Option<f64>) -> Self {
        FeatureNormTracker {
            declared,
            max_norm: 0.0,
            violations: 0,
        }
    }

    pub fn observe(&mut self, phi: &DVector<f64>) {
        let norm = phi.norm();
        if norm > self.max_norm {
            self.max_norm = norm;
        }
        if let Some(k) = self.declared {
            if norm > k {
                self.violations += 1;
                log::warn!("feature norm {norm} exceeds declared bound {k} (max so far {})", self.max_norm);
            }
        }
    }
}

/// Parameters `(H, C)` of the conditioning function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditioner {
    h: SymMatrix,
    c: SymMatrix,
    d: usize,
    k: usize,
}

impl Conditioner {
    pub fn new(h: SymMatrix, c: SymMatrix, k: usize) -> Result<Self> {
        let d = c.dim();
        if k == 0 || h.dim() != d * k {
            return Err(Error::DimensionMismatch {
                context: "H must be dk × dk",
                expected: d * k,
                got: h.dim(),
            });
        }
        for m in [&h, &c] {
            if !m.is_finite() {
                return Err(Error::NonFinite("conditioner"));
            }
            if m.dim() > 0 {
                let lmin = m.min_eigenvalue();
                let scale = crate::linalg::op_norm(m).max(1.0);
                if lmin < -PSD_TOL * scale {
                    return Err(Error::NotPsd { min_eigenvalue: lmin });
                }
            }
        }
        Ok(Conditioner { h, c, d, k })
    }

    /// Skips the PSD check; for parameters produced by projection.
    pub(crate) fn from_parts(h: SymMatrix, c: SymMatrix, k: usize) -> Self {
        let d = c.dim();
        debug_assert_eq!(h.dim(), d * k);
        Conditioner { h, c, d, k }
    }

    /// `H = 0`, `C = I_d`: the fixed identity representation.
    pub fn itl(d: usize, k: usize) -> Self {
        Conditioner::from_parts(SymMatrix::zeros(d * k), SymMatrix::identity(d), k)
    }

    pub fn zeros(d: usize, k: usize) -> Self {
        Conditioner::from_parts(SymMatrix::zeros(d * k), SymMatrix::zeros(d), k)
    }

    pub fn h(&self) -> &SymMatrix {
        &self.h
    }

    pub fn c(&self) -> &SymMatrix {
        &self.c
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn into_parts(self) -> (SymMatrix, SymMatrix) {
        (self.h, self.c)
    }

    /// `τ_{H,C}(φ)`.
    pub fn tau_eval(&self, phi: &DVector<f64>) -> Result<SymMatrix> {
        if phi.len() != self.k {
            return Err(Error::DimensionMismatch {
                context: "feature vector length",
                expected: self.k,
                got: phi.len(),
            });
        }
        Ok(&kron_id_compress(&self.h, phi)? + &self.c)
    }
}
