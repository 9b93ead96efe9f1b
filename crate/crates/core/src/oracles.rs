//! Closed-form bound-minimizing representations and the identities they satisfy.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    kron_id_compress, kron_id_lift, op_norm, pinv_psd, pinv_sqrt_psd, psd_project, range_contains, range_residual,
    sqrt_product_trace_norm, sqrt_psd, trace_norm, SymMatrix, DEFAULT_RTOL,
};
use crate::testing;

/// Second moments of one side-information value (or of the whole environment).
#[derive(Clone, Debug)]
pub struct EnvMoments {
    /// Second moment of the target vectors.
    pub w: SymMatrix,
    /// Second moment of the inputs.
    pub cv: SymMatrix,
    /// Within-task sample size.
    pub n: f64,
    pub lipschitz: f64,
}

impl EnvMoments {
    pub fn new(w: SymMatrix, cv: SymMatrix, n: f64, lipschitz: f64) -> Result<Self> {
        if w.dim() != cv.dim() {
            return Err(Error::DimensionMismatch {
                context: "target and input moments",
                expected: cv.dim(),
                got: w.dim(),
            });
        }
        if !(n > 0.0) || !(lipschitz > 0.0) {
            return Err(Error::InvalidArgument(format!("n and L must be positive, got {n} and {lipschitz}")));
        }
        if !range_contains(&w, &cv, DEFAULT_RTOL) {
            return Err(Error::RangeViolation(format!(
                "target moment leaves the input range (residual {:e})",
                range_residual(&w, &cv, DEFAULT_RTOL)
            )));
        }
        Ok(EnvMoments { w, cv, n, lipschitz })
    }
}

/// `(√n/2L) Cv^{†/2} (Cv^{1/2} W Cv^{1/2})^{1/2} Cv^{†/2}`.
pub fn conditional_oracle(m: &EnvMoments) -> Result<SymMatrix> {
    let c_half = sqrt_psd(&m.cv)?;
    let c_pinv_half = pinv_sqrt_psd(&m.cv)?;
    let inner = sqrt_psd(&psd_project(&m.w.congruence(c_half.as_matrix())))?;
    Ok(inner
        .congruence(c_pinv_half.as_matrix())
        .scaled(m.n.sqrt() / (2.0 * m.lipschitz)))
}

/// Same formula with environment-level moments.
pub fn unconditional_oracle(m: &EnvMoments) -> Result<SymMatrix> {
    conditional_oracle(m)
}

/// `W^{1/2} / Tr(W^{1/2})`.
pub fn legacy_oracle(w: &SymMatrix) -> Result<SymMatrix> {
    let s = sqrt_psd(w)?;
    let tr = s.trace();
    if !(tr > 0.0) {
        return Err(Error::ZeroTrace);
    }
    Ok(s.scaled(1.0 / tr))
}

/// `Tr(θ†W)/2 + (2L²/n) Tr(θ Cv)` at one sample.
pub fn bound_term(theta: &SymMatrix, m: &EnvMoments) -> Result<f64> {
    if !range_contains(&m.w, theta, DEFAULT_RTOL) {
        return Err(Error::RangeViolation("target moment leaves the range of the representation".into()));
    }
    let tp = pinv_psd(theta, DEFAULT_RTOL)?;
    Ok(0.5 * tp.dot(&m.w) + 2.0 * m.lipschitz * m.lipschitz / m.n * theta.dot(&m.cv))
}

/// Monte-Carlo average of [`bound_term`] over side-information samples.
pub fn bound_rhs<S>(
    theta_fn: impl Fn(&S) -> Result<SymMatrix>,
    moments_fn: impl Fn(&S) -> Result<EnvMoments>,
    side_samples: &[S],
) -> Result<f64> {
    if side_samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = 0.0;
    for (i, s) in side_samples.iter().enumerate() {
        let m = moments_fn(s)?;
        let theta = theta_fn(s)?;
        acc += bound_term(&theta, &m).map_err(|e| match e {
            Error::RangeViolation(msg) => Error::RangeViolation(format!("side sample {i}: {msg}")),
            other => other,
        })?;
    }
    Ok(acc / side_samples.len() as f64)
}

/// Value of the bound at the oracle: `2L ‖W^{1/2} Cv^{1/2}‖_* / √n`.
pub fn optimal_bound(m: &EnvMoments) -> Result<f64> {
    Ok(2.0 * m.lipschitz * sqrt_product_trace_norm(&m.w, &m.cv)? / m.n.sqrt())
}

/// Minimizer and minimum of `Tr(θ†A) + Tr(θB)` over PSD `θ`:
/// `B^{†/2}(B^{1/2} A B^{1/2})^{1/2} B^{†/2}` and `2 Tr((B^{1/2} A B^{1/2})^{1/2})`.
pub fn variational_tracenorm(a: &SymMatrix, b: &SymMatrix) -> Result<(SymMatrix, f64)> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "variational trace norm operands",
            expected: b.dim(),
            got: a.dim(),
        });
    }
    if !range_contains(a, b, DEFAULT_RTOL) {
        return Err(Error::RangeViolation(format!(
            "Ran(A) ⊄ Ran(B) (residual {:e})",
            range_residual(a, b, DEFAULT_RTOL)
        )));
    }
    let b_half = sqrt_psd(b)?;
    let b_pinv_half = pinv_sqrt_psd(b)?;
    let s = sqrt_psd(&psd_project(&a.congruence(b_half.as_matrix())))?;
    let minimum = 2.0 * s.trace();
    Ok((s.congruence(b_pinv_half.as_matrix()), minimum))
}

/// Both sides of the cluster identity for target covariances `P_i P_iᵀ / p`
/// built from the given bases and input covariance `c`:
/// `lhs = (1/m) Σ ‖C^{1/2} W_i^{1/2}‖_*`, `rhs = ‖W_ρ^{1/2} C^{1/2}‖_*`.
pub fn cluster_gap_from_bases(bases: &[DMatrix<f64>], c: &SymMatrix) -> Result<(f64, f64)> {
    if bases.is_empty() {
        return Err(Error::InvalidArgument("at least one cluster basis is required".into()));
    }
    let m = bases.len() as f64;
    let mut lhs = 0.0;
    let mut w_mean = SymMatrix::zeros(c.dim());
    for p in bases {
        let w = SymMatrix::new(p * p.transpose() / p.ncols() as f64)?;
        lhs += sqrt_product_trace_norm(&w, c)?;
        w_mean.axpy(1.0 / m, &w);
    }
    Ok((lhs / m, sqrt_product_trace_norm(&w_mean, c)?))
}

/// Rank of each cluster subspace used by [`cluster_gap`].
pub const CLUSTER_SUBSPACE_DIM: usize = 2;

/// Cluster identity on `m` exactly orthogonal rank-2 subspaces of `R^d`, with `C = I`.
pub fn cluster_gap(m: usize, d: usize, seed: u64) -> Result<(f64, f64)> {
    if m == 0 || m * CLUSTER_SUBSPACE_DIM > d {
        return Err(Error::Infeasible(format!(
            "{m} orthogonal rank-{CLUSTER_SUBSPACE_DIM} subspaces do not fit in dimension {d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = haar_orthogonal(&mut rng, d);
    let bases: Vec<DMatrix<f64>> = (0..m)
        .map(|i| q.columns(i * CLUSTER_SUBSPACE_DIM, CLUSTER_SUBSPACE_DIM).into_owned())
        .collect();
    cluster_gap_from_bases(&bases, &SymMatrix::identity(d))
}

/// Random orthogonal `d × d` matrix (QR of a Gaussian matrix with sign fix).
pub fn haar_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Outcome of one identity check: `residual` is compared against `tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub instances: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityCheck {
    fn new(name: &str, instances: usize, residual: f64, tolerance: f64) -> Self {
        IdentityCheck {
            name: name.to_string(),
            instances,
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

/// Seeded numerical checks of the closed forms on random instances.
pub fn identity_checks(seed: u64) -> Result<Vec<IdentityCheck>> {
    let mut r = testing::rng(seed);
    let mut out = Vec::new();

    for m in [2usize, 4] {
        let (l, rhs) = cluster_gap(m, 20, seed)?;
        let name = format!("cluster gap ratio m={m}");
        out.push(IdentityCheck::new(&name, 1, (l / rhs - 1.0 / (m as f64).sqrt()).abs(), 1e-6));
    }

    // stationarity θBθ = A of the variational minimizer, including singular B
    let mut worst = 0.0f64;
    for i in 0..50 {
        let rank = 2 + i % 4;
        let u = testing::random_orthonormal(&mut r, 5, rank);
        let a = SymMatrix::new(&u * testing::random_psd(&mut r, rank, rank).as_matrix() * u.transpose())?;
        let b = SymMatrix::new(&u * testing::random_psd(&mut r, rank, rank).as_matrix() * u.transpose())?;
        let (t, minimum) = variational_tracenorm(&a, &b)?;
        let tbt = t.as_matrix() * b.as_matrix() * t.as_matrix();
        let direct = pinv_psd(&t, DEFAULT_RTOL)?.dot(&a) + t.dot(&b);
        worst = worst
            .max((tbt - a.as_matrix()).norm() / a.frobenius_norm())
            .max((direct - minimum).abs() / minimum);
    }
    out.push(IdentityCheck::new("variational trace norm stationarity", 50, worst, 1e-8));

    // P θ⁻¹ P ⪰ (PθP)† on Ran(P): report the most negative eigenvalue
    let mut worst = 0.0f64;
    for i in 0..200 {
        let d = 2 + i % 7;
        let u = testing::random_orthonormal(&mut r, d, 1 + i % d);
        let p = &u * u.transpose();
        let mut theta = testing::random_psd(&mut r, d, d);
        theta.axpy(0.05, &SymMatrix::identity(d));
        let inv = pinv_psd(&theta, DEFAULT_RTOL)?;
        let ptp = SymMatrix::new(&p * theta.as_matrix() * &p)?;
        let diff = SymMatrix::new(&p * inv.as_matrix() * &p - pinv_psd(&ptp, DEFAULT_RTOL)?.as_matrix())?;
        worst = worst.max(-diff.congruence(&u).min_eigenvalue());
    }
    out.push(IdentityCheck::new("projector lemma", 200, worst, 1e-8));

    let mut worst = 0.0f64;
    for i in 0..100 {
        let (d, k) = (1 + i % 6, 1 + (i / 6) % 5);
        let h = testing::random_psd(&mut r, d * k, 1 + i % (d * k));
        let phi = testing::random_vec(&mut r, k);
        let lift = kron_id_lift(&phi, d);
        let dense = lift.transpose() * h.as_matrix() * &lift;
        worst = worst.max((kron_id_compress(&h, &phi)?.as_matrix() - dense).norm());
    }
    out.push(IdentityCheck::new("structured vs dense conditioning", 100, worst, 1e-10));

    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let w = testing::random_psd(&mut r, 5, 2);
        let c = testing::random_psd(&mut r, 5, 5);
        let lhs = sqrt_product_trace_norm(&w, &c)?;
        let (wh, ch) = (sqrt_psd(&w)?, sqrt_psd(&c)?);
        let itl = trace_norm(&wh) * op_norm(&ch);
        let uncond = wh.frobenius_norm() * ch.frobenius_norm();
        worst = worst.max(lhs - itl.min(uncond));
    }
    out.push(IdentityCheck::new("duality upper bound", 50, worst.max(0.0), 1e-9));

    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let m = 3;
        let cs: Vec<SymMatrix> = (0..m).map(|_| testing::random_psd(&mut r, 6, 6)).collect();
        let ws: Vec<SymMatrix> = (0..m).map(|_| testing::random_psd(&mut r, 6, 2)).collect();
        let mut lhs = 0.0;
        let (mut w_mean, mut c_mean) = (SymMatrix::zeros(6), SymMatrix::zeros(6));
        for (w, c) in ws.iter().zip(&cs) {
            lhs += sqrt_product_trace_norm(w, c)? / m as f64;
            w_mean.axpy(1.0 / m as f64, w);
            c_mean.axpy(1.0 / m as f64, c);
        }
        worst = worst.max(lhs - sqrt_product_trace_norm(&w_mean, &c_mean)?);
    }
    out.push(IdentityCheck::new("conditional never above unconditional", 20, worst.max(0.0), 1e-9));

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let m = EnvMoments::new(testing::random_psd(&mut r, 4, 2), testing::random_psd(&mut r, 4, 4), 10.0, 1.0)?;
        let b = bound_term(&conditional_oracle(&m)?, &m)?;
        let opt = optimal_bound(&m)?;
        worst = worst.max((b - opt).abs() / opt.max(1.0));
    }
    out.push(IdentityCheck::new("oracle attains optimal bound", 20, worst, 1e-6));

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = psd_project(&testing::random_sym(&mut r, 8));
        worst = worst.max((&psd_project(&p) - &p).frobenius_norm()).max((-p.min_eigenvalue()).max(0.0));
    }
    out.push(IdentityCheck::new("psd projection idempotent", 20, worst, 1e-10));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{random_orthonormal, random_psd, rng};

    fn frob(a: &SymMatrix, b: &SymMatrix) -> f64 {
        (a - b).frobenius_norm()
    }

    #[test]
    fn identity_moments_give_identity() {
        let m = EnvMoments::new(SymMatrix::identity(3), SymMatrix::identity(3), 4.0, 1.0).unwrap();
        assert!(frob(&conditional_oracle(&m).unwrap(), &SymMatrix::identity(3)) < 1e-14);
    }

    #[test]
    fn scalar_oracle() {
        let (w, c, n, l) = (1.5f64, 0.7f64, 9.0, 2.0);
        let m = EnvMoments::new(SymMatrix::from_diagonal(&[w * w]), SymMatrix::from_diagonal(&[c * c]), n, l).unwrap();
        let t = conditional_oracle(&m).unwrap();
        assert!((t.get(0, 0) - n.sqrt() / (2.0 * l) * w / c).abs() < 1e-14);
        let b = bound_rhs(|_: &()| Ok(t.clone()), |_: &()| Ok(m.clone()), &[()]).unwrap();
        let theta = t.get(0, 0);
        assert!((b - (0.5 * w * w / theta + 2.0 * l * l / n * theta * c * c)).abs() < 1e-12);
    }

    #[test]
    fn range_violation_is_rejected() {
        let w = SymMatrix::from_diagonal(&[1.0, 1.0]);
        let c = SymMatrix::from_diagonal(&[1.0, 0.0]);
        assert!(matches!(EnvMoments::new(w, c, 4.0, 1.0), Err(Error::RangeViolation(_))));
    }

    #[test]
    fn oracle_attains_optimal_bound() {
        let mut r = rng(1);
        for rank in [2, 4] {
            let cv = random_psd(&mut r, 4, 4);
            let w = random_psd(&mut r, 4, rank);
            let m = EnvMoments::new(w, cv, 10.0, 1.0).unwrap();
            let t = conditional_oracle(&m).unwrap();
            assert!(range_contains(&t, &m.cv, DEFAULT_RTOL));
            let b = bound_term(&t, &m).unwrap();
            let opt = optimal_bound(&m).unwrap();
            assert!((b - opt).abs() < 1e-6 * opt.max(1.0), "{b} vs {opt}");
            // any perturbation does no better
            let worse = bound_term(&(&t + &SymMatrix::identity(4).scaled(0.05)), &m).unwrap();
            assert!(worse >= opt - 1e-9);
        }
    }

    #[test]
    fn bound_with_zero_target_moment() {
        let mut r = rng(2);
        let cv = random_psd(&mut r, 3, 3);
        let theta = random_psd(&mut r, 3, 3);
        let m = EnvMoments::new(SymMatrix::zeros(3), cv.clone(), 5.0, 1.0).unwrap();
        let b = bound_rhs(|_: &u8| Ok(theta.clone()), |_: &u8| Ok(m.clone()), &[0, 1]).unwrap();
        assert!((b - 2.0 / 5.0 * theta.dot(&cv)).abs() < 1e-12);
    }

    #[test]
    fn bound_names_offending_sample() {
        let m = EnvMoments::new(SymMatrix::identity(2), SymMatrix::identity(2), 5.0, 1.0).unwrap();
        let err = bound_rhs(
            |&i: &usize| Ok(if i == 1 { SymMatrix::from_diagonal(&[1.0, 0.0]) } else { SymMatrix::identity(2) }),
            |_| Ok(m.clone()),
            &[0usize, 1, 2],
        )
        .unwrap_err();
        assert!(err.to_string().contains("side sample 1"), "{err}");
    }

    #[test]
    fn legacy_oracle_examples() {
        let t = legacy_oracle(&SymMatrix::from_diagonal(&[4.0, 0.0])).unwrap();
        assert!(frob(&t, &SymMatrix::from_diagonal(&[1.0, 0.0])) < 1e-15);
        assert!(matches!(legacy_oracle(&SymMatrix::zeros(2)), Err(Error::ZeroTrace)));
        let mut r = rng(3);
        for _ in 0..5 {
            let t = legacy_oracle(&random_psd(&mut r, 5, 3)).unwrap();
            assert!((t.trace() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn unconditional_equals_conditional_formula() {
        let mut r = rng(4);
        let m = EnvMoments::new(random_psd(&mut r, 4, 2), random_psd(&mut r, 4, 4), 7.0, 1.0).unwrap();
        assert_eq!(unconditional_oracle(&m).unwrap(), conditional_oracle(&m).unwrap());
    }

    #[test]
    fn variational_examples() {
        let (t, v) = variational_tracenorm(&SymMatrix::identity(2), &SymMatrix::identity(2)).unwrap();
        assert!(frob(&t, &SymMatrix::identity(2)) < 1e-14);
        assert!((v - 4.0).abs() < 1e-14);
        let (a, b) = (1.3f64, 0.4f64);
        let (t, v) = variational_tracenorm(&SymMatrix::from_diagonal(&[a * a]), &SymMatrix::from_diagonal(&[b * b])).unwrap();
        assert!((t.get(0, 0) - a / b).abs() < 1e-13);
        assert!((v - 2.0 * a * b).abs() < 1e-13);
        assert!(variational_tracenorm(&SymMatrix::identity(2), &SymMatrix::from_diagonal(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn variational_minimizer_is_stationary_on_singular_pairs() {
        let mut r = rng(6);
        for rank in [1, 2, 3] {
            let u = random_orthonormal(&mut r, 5, rank);
            let b = SymMatrix::new(&u * random_psd(&mut r, rank, rank).as_matrix() * u.transpose()).unwrap();
            let a = SymMatrix::new(&u * random_psd(&mut r, rank, rank).as_matrix() * u.transpose()).unwrap();
            let (t, _) = variational_tracenorm(&a, &b).unwrap();
            let tbt = t.as_matrix() * b.as_matrix() * t.as_matrix();
            assert!((tbt - a.as_matrix()).norm() < 1e-8 * a.frobenius_norm(), "rank {rank}");
            assert!(range_contains(&t, &b, DEFAULT_RTOL));
        }
    }

    #[test]
    fn identity_checks_all_pass() {
        let checks = identity_checks(11).unwrap();
        assert!(checks.len() >= 8);
        for c in &checks {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn cluster_gap_examples() {
        let (l, r) = cluster_gap(1, 6, 3).unwrap();
        assert!((l - r).abs() < 1e-10);
        let (l, r) = cluster_gap(4, 8, 3).unwrap();
        assert!((l / r - 0.5).abs() < 1e-8);
        assert!(matches!(cluster_gap(5, 8, 3), Err(Error::Infeasible(_))));
        // independently drawn subspaces overlap, which pulls the ratio above 1/√m
        let mut g = rng(5);
        let bases: Vec<DMatrix<f64>> = (0..2).map(|_| random_orthonormal(&mut g, 4, 2)).collect();
        let (l, r) = cluster_gap_from_bases(&bases, &SymMatrix::identity(4)).unwrap();
        assert!(l / r > 1.0 / 2f64.sqrt() + 1e-6);
    }

    #[test]
    fn duality_upper_bound_on_random_moments() {
        let mut r = rng(6);
        for _ in 0..20 {
            let w = random_psd(&mut r, 5, 2);
            let c = random_psd(&mut r, 5, 5);
            let lhs = sqrt_product_trace_norm(&w, &c).unwrap();
            let wh = sqrt_psd(&w).unwrap();
            let ch = sqrt_psd(&c).unwrap();
            let itl = trace_norm(&wh) * op_norm(&ch);
            let uncond = wh.frobenius_norm() * ch.frobenius_norm();
            assert!(lhs <= itl.min(uncond) + 1e-9);
        }
    }

    #[test]
    fn conditional_never_worse_than_unconditional() {
        let mut r = rng(7);
        for _ in 0..10 {
            let m = 3;
            let c = random_psd(&mut r, 6, 6);
            let ws: Vec<SymMatrix> = (0..m).map(|_| random_psd(&mut r, 6, 2)).collect();
            let cond: f64 = ws.iter().map(|w| sqrt_product_trace_norm(w, &c).unwrap()).sum::<f64>() / m as f64;
            let mut mean = SymMatrix::zeros(6);
            for w in &ws {
                mean.axpy(1.0 / m as f64, w);
            }
            assert!(cond <= sqrt_product_trace_norm(&mean, &c).unwrap() + 1e-9);
        }
    }
}
