//! Surrogate meta-loss, its subgradients and projected meta-SGD over `(H, C)`.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::conditioner::{Conditioner, FeatureMap};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::inner::{empirical_risk, solve_batch, solve_online_with_pinv, BatchOptions, InnerMode};
use crate::linalg::{kron_id_compress, kron_id_expand, kron_id_expand_axpy, pinv_psd, psd_project, SymMatrix, DEFAULT_RTOL};
use crate::loss::Loss;

/// Meta-subgradient at one task. Both blocks share the `d × d` core `∇̂`:
/// `grad_C = ∇̂` and `grad_H = (I_d ⊗ φ) ∇̂ (I_d ⊗ φᵀ)`.
#[derive(Clone, Debug)]
pub struct MetaGradient {
    core: SymMatrix,
    phi: DVector<f64>,
}

impl MetaGradient {
    pub fn core(&self) -> &SymMatrix {
        &self.core
    }

    pub fn phi(&self) -> &DVector<f64> {
        &self.phi
    }

    pub fn grad_c(&self) -> &SymMatrix {
        &self.core
    }

    /// Dense `grad_H`; meta-SGD applies it without materializing it.
    pub fn grad_h(&self) -> SymMatrix {
        kron_id_expand(&self.core, &self.phi)
    }

    /// Frobenius norm of the pair `(grad_H, grad_C)`.
    pub fn norm(&self) -> f64 {
        let c = self.core.frobenius_norm();
        c * (1.0 + self.phi.norm_squared().powi(2)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.core.is_finite() && self.phi.iter().all(|v| v.is_finite())
    }
}

/// `(1 + K²)(LR)²(½ + 2/n)`.
pub fn gradient_norm_bound(k_bound: f64, lipschitz: f64, radius: f64, n: usize) -> f64 {
    let lr = lipschitz * radius;
    (1.0 + k_bound * k_bound) * lr * lr * (0.5 + 2.0 / n as f64)
}

/// Step size minimizing the meta-SGD bound. `n` may be infinite.
pub fn theoretical_step_size(distance: f64, k_bound: f64, lipschitz: f64, radius: f64, n: f64, t: usize) -> f64 {
    let lr = lipschitz * radius;
    distance / ((1.0 + k_bound * k_bound) * lr * lr) / (0.5 + 2.0 / n) / (t as f64).sqrt()
}

fn inner_weights(
    theta: &SymMatrix,
    theta_pinv: &SymMatrix,
    z: &LabeledDataset,
    loss: &Loss,
    mode: InnerMode,
    opts: BatchOptions,
) -> Result<DVector<f64>> {
    match mode {
        InnerMode::Batch => Ok(solve_batch(theta, z, loss, opts)?.averaged),
        InnerMode::LastIterate => Ok(solve_online_with_pinv(theta, theta_pinv, z, loss).last),
    }
}

/// `∇̂ = −½ θ† w wᵀ θ† + 2L² XᵀX / n²` at a fixed representation.
pub fn core_gradient(
    theta: &SymMatrix,
    z: &LabeledDataset,
    loss: &Loss,
    mode: InnerMode,
    opts: BatchOptions,
) -> Result<SymMatrix> {
    if theta.dim() != z.d() {
        return Err(Error::DimensionMismatch {
            context: "representation vs input dimension",
            expected: z.d(),
            got: theta.dim(),
        });
    }
    let theta_pinv = pinv_psd(theta, DEFAULT_RTOL)?;
    let w = inner_weights(theta, &theta_pinv, z, loss, mode, opts)?;
    let u = theta_pinv.mul_vec(&w);
    let n = z.n() as f64;
    let l = loss.lipschitz();
    let mut g = SymMatrix::gram(z.x()).scaled(2.0 * l * l / (n * n));
    g.axpy(-0.5, &SymMatrix::outer(&u));
    Ok(g)
}

/// Surrogate meta-loss at a fixed representation, with the batch inner solver.
pub fn surrogate_at(theta: &SymMatrix, z: &LabeledDataset, loss: &Loss, opts: BatchOptions) -> Result<f64> {
    let theta_pinv = pinv_psd(theta, DEFAULT_RTOL)?;
    let w = solve_batch(theta, z, loss, opts)?.averaged;
    let n = z.n() as f64;
    let l = loss.lipschitz();
    let penalty = 2.0 * l * l / n * theta.dot(&SymMatrix::gram(z.x())) / n;
    Ok(empirical_risk(&w, z, loss) + 0.5 * theta_pinv.quad_form(&w) + penalty)
}

/// `R_{Z,τ}(A(τ, Z)) + (2L²/n) Tr(τ XᵀX / n)` with `τ = τ_{H,C}(φ)`.
pub fn surrogate_loss(
    cond: &Conditioner,
    phi: &DVector<f64>,
    z: &LabeledDataset,
    loss: &Loss,
    opts: BatchOptions,
) -> Result<f64> {
    surrogate_at(&cond.tau_eval(phi)?, z, loss, opts)
}

pub fn meta_subgradient(
    cond: &Conditioner,
    phi: &DVector<f64>,
    z: &LabeledDataset,
    loss: &Loss,
    mode: InnerMode,
    opts: BatchOptions,
) -> Result<MetaGradient> {
    let tau = cond.tau_eval(phi)?;
    Ok(MetaGradient {
        core: core_gradient(&tau, z, loss, mode, opts)?,
        phi: phi.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub gamma: f64,
    pub loss: Loss,
    pub mode: InnerMode,
    pub batch: BatchOptions,
    /// Keep `H` at its initial value and update `C` only.
    pub freeze_h: bool,
}

impl MetaConfig {
    pub fn new(gamma: f64) -> Self {
        MetaConfig {
            gamma,
            loss: Loss::Absolute,
            mode: InnerMode::LastIterate,
            batch: BatchOptions::default(),
            freeze_h: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be finite and non-negative, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Projected meta-SGD state with running sums of the pre-update iterates.
#[derive(Clone, Debug)]
pub struct MetaState {
    h: SymMatrix,
    c: SymMatrix,
    h_sum: SymMatrix,
    c_sum: SymMatrix,
    k: usize,
    t: usize,
}

impl MetaState {
    pub fn new(init: Conditioner) -> Self {
        let k = init.k();
        let (h, c) = init.into_parts();
        MetaState {
            h_sum: SymMatrix::zeros(h.dim()),
            c_sum: SymMatrix::zeros(c.dim()),
            h,
            c,
            k,
            t: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn current(&self) -> Conditioner {
        Conditioner::from_parts(self.h.clone(), self.c.clone(), self.k)
    }

    /// Mean of iterates `1..t`; the current iterate when no step was taken.
    pub fn average(&self) -> Conditioner {
        if self.t == 0 {
            return self.current();
        }
        let s = 1.0 / self.t as f64;
        Conditioner::from_parts(self.h_sum.scaled(s), self.c_sum.scaled(s), self.k)
    }

    /// One step on a task with side-information features `phi` and training set `z`.
    pub fn step(&mut self, phi: &DVector<f64>, z: &LabeledDataset, cfg: &MetaConfig, task: usize) -> Result<MetaGradient> {
        cfg.validate()?;
        if phi.len() != self.k {
            return Err(Error::DimensionMismatch {
                context: "feature vector length",
                expected: self.k,
                got: phi.len(),
            });
        }
        let tau = &kron_id_compress(&self.h, phi)? + &self.c;
        if !tau.is_finite() {
            return Err(Error::NonFiniteGradient { step: self.t + 1, task });
        }
        let grad = MetaGradient {
            core: core_gradient(&tau, z, &cfg.loss, cfg.mode, cfg.batch)?,
            phi: phi.clone(),
        };
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient { step: self.t + 1, task });
        }
        self.h_sum.axpy(1.0, &self.h);
        self.c_sum.axpy(1.0, &self.c);
        self.t += 1;
        if !cfg.freeze_h {
            kron_id_expand_axpy(&mut self.h, -cfg.gamma, &grad.core, &grad.phi);
            self.h = psd_project(&self.h);
        }
        self.c.axpy(-cfg.gamma, &grad.core);
        self.c = psd_project(&self.c);
        Ok(grad)
    }
}

/// Runs `t` meta-SGD steps over `tasks` (side information, training set) and
/// returns the averaged conditioner.
pub fn meta_sgd<'a>(
    tasks: impl IntoIterator<Item = (&'a LabeledDataset, &'a LabeledDataset)>,
    map: &FeatureMap,
    cfg: &MetaConfig,
    t: usize,
    init: Conditioner,
) -> Result<Conditioner> {
    if t == 0 {
        return Err(Error::InvalidArgument("number of meta steps must be at least 1".into()));
    }
    let mut state = MetaState::new(init);
    let mut it = tasks.into_iter();
    for step in 0..t {
        let (side, train) = it
            .next()
            .ok_or_else(|| Error::InvalidArgument(format!("task stream ended after {step} of {t} steps")))?;
        let phi = map.eval(side)?;
        state.step(&phi, train, cfg, step)?;
    }
    Ok(state.average())
}

/// Plain projected SGD over a single representation `θ` (no side information).
#[derive(Clone, Debug)]
pub struct UnconditionalState {
    theta: SymMatrix,
    sum: SymMatrix,
    t: usize,
}

impl UnconditionalState {
    pub fn new(theta0: SymMatrix) -> Self {
        UnconditionalState {
            sum: SymMatrix::zeros(theta0.dim()),
            theta: theta0,
            t: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn current(&self) -> &SymMatrix {
        &self.theta
    }

    pub fn average(&self) -> SymMatrix {
        if self.t == 0 {
            self.theta.clone()
        } else {
            self.sum.scaled(1.0 / self.t as f64)
        }
    }

    pub fn step(&mut self, z: &LabeledDataset, cfg: &MetaConfig, task: usize) -> Result<SymMatrix> {
        cfg.validate()?;
        let g = core_gradient(&self.theta, z, &cfg.loss, cfg.mode, cfg.batch)?;
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { step: self.t + 1, task });
        }
        self.sum.axpy(1.0, &self.theta);
        self.t += 1;
        self.theta.axpy(-cfg.gamma, &g);
        self.theta = psd_project(&self.theta);
        Ok(g)
    }
}

/// Serialized meta-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d: usize,
    pub k: usize,
    pub feature_map: FeatureMap,
    /// Row-major `dk × dk` entries.
    pub h: Vec<f64>,
    /// Row-major `d × d` entries.
    pub c: Vec<f64>,
    pub gamma: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(cond: &Conditioner, feature_map: FeatureMap, gamma: f64, steps: usize, seed: u64) -> Self {
        Checkpoint {
            d: cond.d(),
            k: cond.k(),
            feature_map,
            h: cond.h().to_row_major(),
            c: cond.c().to_row_major(),
            gamma,
            steps,
            seed,
        }
    }

    pub fn conditioner(&self) -> Result<Conditioner> {
        if self.feature_map.k(self.d) != self.k {
            return Err(Error::DimensionMismatch {
                context: "checkpoint feature dimension",
                expected: self.feature_map.k(self.d),
                got: self.k,
            });
        }
        let h = SymMatrix::from_row_major(self.d * self.k, &self.h)?;
        let c = SymMatrix::from_row_major(self.d, &self.c)?;
        Conditioner::new(h, c, self.k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioner::constant_map;
    use crate::linalg::{op_norm, sym_eig};
    use crate::testing::{random_dataset, random_psd, random_sym, random_vec, rng};

    fn pd(r: &mut crate::testing::TestRng, n: usize) -> SymMatrix {
        &random_psd(r, n, n) + &SymMatrix::identity(n).scaled(0.2)
    }

    #[test]
    fn zero_labels_give_zero_surrogate() {
        let mut r = rng(1);
        let z0 = random_dataset(&mut r, 6, 3, 0.0);
        let z = LabeledDataset::new(z0.x().clone(), DVector::zeros(6)).unwrap();
        let cond = Conditioner::zeros(3, 2);
        let v = surrogate_loss(&cond, &random_vec(&mut r, 2), &z, &Loss::Absolute, BatchOptions::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn zero_h_reduces_to_unconditional() {
        let mut r = rng(2);
        let z = random_dataset(&mut r, 8, 3, 0.2);
        let c = pd(&mut r, 3);
        let cond = Conditioner::new(SymMatrix::zeros(6), c.clone(), 2).unwrap();
        let opts = BatchOptions::default();
        let a = surrogate_loss(&cond, &random_vec(&mut r, 2), &z, &Loss::Absolute, opts).unwrap();
        let b = surrogate_at(&c, &z, &Loss::Absolute, opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn surrogate_matches_straight_line_recomputation() {
        let mut r = rng(3);
        let z = random_dataset(&mut r, 7, 2, 0.3);
        let (d, k) = (2, 2);
        let cond = Conditioner::new(pd(&mut r, d * k), pd(&mut r, d), k).unwrap();
        let phi = random_vec(&mut r, k);
        let loss = Loss::Squared { lipschitz: 1.5 };
        let v = surrogate_loss(&cond, &phi, &z, &loss, BatchOptions::default()).unwrap();
        // τ by explicit block contraction, w by normal equations
        let h = cond.h().as_matrix();
        let tau = nalgebra::DMatrix::from_fn(d, d, |i, j| {
            let mut s = 0.0;
            for a in 0..k {
                for b in 0..k {
                    s += phi[a] * h[(i * k + a, j * k + b)] * phi[b];
                }
            }
            s
        }) + cond.c().as_matrix();
        let n = z.n() as f64;
        let tau_inv = tau.clone().try_inverse().unwrap();
        let w = (z.x().tr_mul(z.x()) / n + &tau_inv).lu().solve(&(z.x().tr_mul(z.y()) / n)).unwrap();
        let resid = z.x() * &w - z.y();
        let risk = 0.5 * resid.norm_squared() / n;
        let reg = 0.5 * w.dot(&(&tau_inv * &w));
        let pen = 2.0 * 1.5 * 1.5 / n * (&tau * z.x().tr_mul(z.x()) / n).trace();
        assert!((v - (risk + reg + pen)).abs() < 1e-8);
    }

    #[test]
    fn zero_weights_give_data_term_only() {
        let mut r = rng(4);
        let z0 = random_dataset(&mut r, 6, 3, 0.0);
        let z = LabeledDataset::new(z0.x().clone(), DVector::zeros(6)).unwrap();
        let cond = Conditioner::new(pd(&mut r, 6), pd(&mut r, 3), 2).unwrap();
        for mode in [InnerMode::Batch, InnerMode::LastIterate] {
            let g = meta_subgradient(&cond, &random_vec(&mut r, 2), &z, &Loss::Absolute, mode, BatchOptions::default())
                .unwrap();
            let expected = SymMatrix::gram(z.x()).scaled(2.0 / 36.0);
            assert!((g.grad_c() - &expected).frobenius_norm() < 1e-15);
        }
    }

    #[test]
    fn constant_map_gradient_blocks_coincide() {
        let mut r = rng(5);
        let z = random_dataset(&mut r, 6, 3, 0.2);
        let cond = Conditioner::new(pd(&mut r, 3), pd(&mut r, 3), 1).unwrap();
        let g = meta_subgradient(&cond, &constant_map(), &z, &Loss::Absolute, InnerMode::LastIterate, BatchOptions::default())
            .unwrap();
        assert_eq!(&g.grad_h(), g.grad_c());
    }

    #[test]
    fn lifted_gradient_keeps_spectrum_signs() {
        let mut r = rng(6);
        let z = random_dataset(&mut r, 5, 3, 0.2);
        let cond = Conditioner::new(pd(&mut r, 6), pd(&mut r, 3), 2).unwrap();
        let phi = random_vec(&mut r, 2);
        let g = meta_subgradient(&cond, &phi, &z, &Loss::Absolute, InnerMode::Batch, BatchOptions::default()).unwrap();
        let core = sym_eig(g.core()).eigenvalues;
        let lifted = sym_eig(&g.grad_h()).eigenvalues;
        let scale = op_norm(g.core()) * phi.norm_squared();
        let tol = 1e-10 * scale;
        let count = |v: &DVector<f64>, f: &dyn Fn(f64) -> bool| v.iter().filter(|&&l| f(l)).count();
        assert_eq!(count(&lifted, &|l| l > tol), count(&core, &|l| l > 1e-10 * op_norm(g.core())));
        assert_eq!(count(&lifted, &|l| l < -tol), count(&core, &|l| l < -1e-10 * op_norm(g.core())));
        // nonzero lifted eigenvalues are ‖φ‖² times the core ones
        let mut big: Vec<f64> = lifted.iter().copied().filter(|l| l.abs() > tol).collect();
        let mut want: Vec<f64> = core.iter().map(|l| l * phi.norm_squared()).filter(|l| l.abs() > tol).collect();
        big.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (a, b) in big.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn subgradient_inequality_batch_mode() {
        let mut r = rng(7);
        let opts = BatchOptions { tol: 1e-10, max_iter: 200_000 };
        let loss = Loss::Absolute;
        for _ in 0..10 {
            let z = random_dataset(&mut r, 8, 3, 0.3);
            let phi = random_vec(&mut r, 2);
            let a = Conditioner::new(random_psd(&mut r, 6, 3), random_psd(&mut r, 3, 2), 2).unwrap();
            let b = Conditioner::new(random_psd(&mut r, 6, 3), random_psd(&mut r, 3, 2), 2).unwrap();
            let la = surrogate_loss(&a, &phi, &z, &loss, opts).unwrap();
            let lb = surrogate_loss(&b, &phi, &z, &loss, opts).unwrap();
            let g = meta_subgradient(&a, &phi, &z, &loss, InnerMode::Batch, opts).unwrap();
            let lin = g.grad_h().dot(&(b.h() - a.h())) + g.grad_c().dot(&(b.c() - a.c()));
            assert!(lb >= la + lin - 1e-6, "{lb} < {la} + {lin}");
        }
    }

    #[test]
    fn gamma_zero_and_single_step() {
        let mut r = rng(8);
        let tasks: Vec<LabeledDataset> = (0..4).map(|_| random_dataset(&mut r, 6, 3, 0.1)).collect();
        let init = Conditioner::new(pd(&mut r, 6), pd(&mut r, 3), 2).unwrap();
        let cfg = MetaConfig::new(0.0);
        let out = meta_sgd(tasks.iter().map(|z| (z, z)), &FeatureMap::Constant, &cfg, 4, Conditioner::itl(3, 1)).unwrap();
        assert_eq!(out, Conditioner::itl(3, 1));
        let cfg = MetaConfig::new(0.7);
        let out = meta_sgd(tasks.iter().map(|z| (z, z)), &FeatureMap::MeanEmbedding, &MetaConfig { ..cfg }, 1, init.clone());
        // mean embedding of a d = 3 task has k = 6, not 2
        assert!(out.is_err());
        let map = FeatureMap::Trig { rating_max: 5.0, rating_min: -5.0 };
        let init7 = Conditioner::new(pd(&mut r, 21), pd(&mut r, 3), 7).unwrap();
        let out = meta_sgd(tasks.iter().map(|z| (z, z)), &map, &cfg, 1, init7.clone()).unwrap();
        assert_eq!(out, init7);
    }

    #[test]
    fn non_finite_gradient_aborts_with_context() {
        let mut r = rng(9);
        let z = random_dataset(&mut r, 5, 2, 0.1);
        let mut st = MetaState::new(Conditioner::itl(2, 1));
        let phi = DVector::from_element(1, f64::NAN);
        let err = st.step(&phi, &z, &MetaConfig::new(1.0), 17).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { step: 1, task: 17 }), "{err:?}");
    }

    #[test]
    fn step_size_plug_in() {
        assert_eq!(theoretical_step_size(1.0, 0.0, 1.0, 1.0, f64::INFINITY, 1), 2.0);
        let a = theoretical_step_size(0.3, 0.5, 1.0, 2.0, 40.0, 100);
        let b = theoretical_step_size(0.3, 0.5, 1.0, 2.0, 40.0, 200);
        assert!((a / b - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut r = rng(10);
        let cond = Conditioner::new(random_psd(&mut r, 12, 12).scaled(1.0 / 3.0), random_psd(&mut r, 3, 2), 4).unwrap();
        let ck = Checkpoint::new(&cond, FeatureMap::Ridge, 0.1 + 0.2, 500, 42);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let c2 = back.conditioner().unwrap();
        for (a, b) in c2.h().to_row_major().iter().zip(cond.h().to_row_major()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.gamma.to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn finite_differences_match_gradient_on_symmetric_directions() {
        let mut r = rng(11);
        let loss = Loss::Squared { lipschitz: 1.0 };
        let opts = BatchOptions { tol: 1e-12, max_iter: 100_000 };
        let z = random_dataset(&mut r, 6, 3, 0.3);
        let phi = random_vec(&mut r, 2);
        let cond = Conditioner::new(pd(&mut r, 6), pd(&mut r, 3), 2).unwrap();
        let g = meta_subgradient(&cond, &phi, &z, &loss, InnerMode::Batch, opts).unwrap();
        let eps = 1e-5;
        for _ in 0..5 {
            let dh = random_sym(&mut r, 6);
            let dc = random_sym(&mut r, 3);
            let at = |s: f64| {
                let mut h = cond.h().clone();
                h.axpy(s, &dh);
                let mut c = cond.c().clone();
                c.axpy(s, &dc);
                surrogate_loss(&Conditioner::from_parts(h, c, 2), &phi, &z, &loss, opts).unwrap()
            };
            let fd = (at(eps) - at(-eps)) / (2.0 * eps);
            let an = g.grad_h().dot(&dh) + g.grad_c().dot(&dc);
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "fd {fd} analytic {an}");
        }
    }
}
