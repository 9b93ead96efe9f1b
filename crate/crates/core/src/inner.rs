//! Within-task learners preconditioned by a PSD representation `θ`.
//!
//! Both solvers target
//! `min_{w ∈ Ran θ} (1/n) Σ ℓ(⟨x_i, w⟩, y_i) + ½⟨w, θ† w⟩`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{pinv_psd, SymMatrix, DEFAULT_RTOL};
use crate::loss::Loss;

/// Output of a within-task solve.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerSolution {
    /// The algorithm output.
    pub averaged: DVector<f64>,
    /// Final iterate, used for the meta-subgradient in last-iterate mode.
    pub last: DVector<f64>,
    /// Online: mean loss of the pre-update iterates. Batch: empirical risk of `w`.
    pub trajectory_empirical_risk: f64,
}

/// Which inner solution enters the meta-gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerMode {
    /// Exact regularized minimizer.
    Batch,
    /// Online pass; last iterate for gradients, averaged iterate for prediction.
    #[default]
    LastIterate,
}

impl InnerMode {
    pub fn name(&self) -> &'static str {
        match self {
            InnerMode::Batch => "batch",
            InnerMode::LastIterate => "last_iterate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchOptions {
    /// Bound on the certified suboptimality (duality gap).
    pub tol: f64,
    /// Maximum number of coordinate sweeps.
    pub max_iter: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            tol: 1e-6,
            max_iter: 50_000,
        }
    }
}

fn check_dims(theta: &SymMatrix, z: &LabeledDataset) -> Result<()> {
    if theta.dim() != z.d() {
        return Err(Error::DimensionMismatch {
            context: "representation vs input dimension",
            expected: z.d(),
            got: theta.dim(),
        });
    }
    Ok(())
}

/// Mean loss of the linear predictor `w` over `z`.
pub fn empirical_risk(w: &DVector<f64>, z: &LabeledDataset, loss: &Loss) -> f64 {
    let p = z.x() * w;
    p.iter()
        .zip(z.y().iter())
        .map(|(&p, &y)| loss.value(p, y))
        .sum::<f64>()
        / z.n() as f64
}

/// `R_Z(w) + ½⟨w, θ† w⟩`.
pub fn regularized_risk(w: &DVector<f64>, theta_pinv: &SymMatrix, z: &LabeledDataset, loss: &Loss) -> f64 {
    empirical_risk(w, z, loss) + 0.5 * theta_pinv.quad_form(w)
}

/// Preconditioned online subgradient pass over `z` in stored order.
pub fn solve_online(theta: &SymMatrix, z: &LabeledDataset, loss: &Loss) -> Result<InnerSolution> {
    check_dims(theta, z)?;
    let theta_pinv = pinv_psd(theta, DEFAULT_RTOL)?;
    Ok(solve_online_with_pinv(theta, &theta_pinv, z, loss))
}

pub(crate) fn solve_online_with_pinv(
    theta: &SymMatrix,
    theta_pinv: &SymMatrix,
    z: &LabeledDataset,
    loss: &Loss,
) -> InnerSolution {
    let (n, d) = (z.n(), z.d());
    let th = theta.as_matrix();
    let thp = theta_pinv.as_matrix();
    let mut w = DVector::zeros(d);
    let mut sum = DVector::zeros(d);
    let mut online_loss = 0.0;
    for i in 0..n {
        let x = z.x().row(i).transpose();
        let p_i = x.dot(&w);
        online_loss += loss.value(p_i, z.label(i));
        sum += &w;
        let s = loss.subgradient(p_i, z.label(i));
        let p = &x * s + thp * &w;
        w -= (th * p) / (i + 1) as f64;
    }
    InnerSolution {
        averaged: sum / n as f64,
        last: w,
        trajectory_empirical_risk: online_loss / n as f64,
    }
}

/// Regularized ERM solved to a certified duality gap.
///
/// Works on the dual `max_α −(1/n)Σℓ*(α_i) − αᵀKα/(2n²)` with `K = XθXᵀ`
/// by exact coordinate ascent, with primal `w = −θXᵀα/n`.
pub fn solve_batch(theta: &SymMatrix, z: &LabeledDataset, loss: &Loss, opts: BatchOptions) -> Result<InnerSolution> {
    check_dims(theta, z)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {}", opts.tol)));
    }
    let n = z.n();
    let nf = n as f64;
    let x = z.x();
    let y = z.y();
    let tx: DMatrix<f64> = theta.as_matrix() * x.transpose();
    let k = x * &tx;
    let mut alpha = DVector::zeros(n);
    let mut u = DVector::zeros(n); // Kα

    if let Loss::Squared { .. } = loss {
        // (nI + K)α = −n y
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += nf;
        }
        if let Some(sol) = a.cholesky().map(|c| c.solve(&(-y * nf))) {
            alpha = sol;
            u = &k * &alpha;
        }
    }

    let gap_at = |alpha: &DVector<f64>, u: &DVector<f64>| -> f64 {
        let mut g = 0.0;
        for i in 0..n {
            g += loss.value(-u[i] / nf, y[i]) + loss.conjugate(alpha[i], y[i]);
        }
        g / nf + alpha.dot(u) / (nf * nf)
    };

    let mut gap = gap_at(&alpha, &u);
    let mut sweeps = 0;
    while !(gap <= opts.tol) {
        if sweeps >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                gap,
                tol: opts.tol,
            });
        }
        for i in 0..n {
            let kii = k[(i, i)];
            let b = u[i] - kii * alpha[i];
            let a = loss.dual_coordinate(kii / nf, b / nf, y[i]);
            let delta = a - alpha[i];
            if delta != 0.0 {
                alpha[i] = a;
                u.axpy(delta, &k.column(i), 1.0);
            }
        }
        sweeps += 1;
        // Refresh Kα to keep accumulated rounding out of the certificate.
        if sweeps % 64 == 0 {
            u = &k * &alpha;
        }
        gap = gap_at(&alpha, &u);
    }

    let w = -(&tx * &alpha) / nf;
    let risk = empirical_risk(&w, z, loss);
    Ok(InnerSolution {
        averaged: w.clone(),
        last: w,
        trajectory_empirical_risk: risk,
    })
}
