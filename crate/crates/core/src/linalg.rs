//! Dense symmetric and PSD matrix primitives.
//!
//! Every matrix that plays the role of a representation, a covariance or a
//! meta-parameter is held in a [`SymMatrix`], which is symmetrized as
//! `(M + Mᵀ)/2` when built. Spectral functions (pseudoinverse, square roots,
//! PSD projection) all go through one eigendecomposition routine.
//!
//! Kronecker lifts use the index layout `(i, h) ↦ i·k + h` (zero-based) for
//! the `dk`-dimensional space, so that `(I_d ⊗ φ) e_i` is the vector with
//! `φ` written into block `i`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative cutoff for rank decisions.
pub const DEFAULT_RTOL: f64 = 1e-10;

/// Above this dimension `psd_project` first tries a Cholesky factorization
/// and skips the eigendecomposition when the input is already definite.
const CHOLESKY_FAST_PATH_DIM: usize = 64;

/// A real symmetric matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SymMatrix(DMatrix<f64>);

impl TryFrom<DMatrix<f64>> for SymMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        SymMatrix::new(m)
    }
}

impl From<SymMatrix> for DMatrix<f64> {
    fn from(m: SymMatrix) -> Self {
        m.0
    }
}

impl SymMatrix {
    /// Builds a symmetric matrix from a square one, replacing it by `(M + Mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                context: "symmetric matrix must be square",
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix"));
        }
        Ok(Self::symmetrized(m))
    }

    fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// `v vᵀ`.
    pub fn outer(v: &DVector<f64>) -> Self {
        SymMatrix::symmetrized(v * v.transpose())
    }

    /// `Xᵀ X` for a data matrix with samples as rows.
    pub fn gram(x: &DMatrix<f64>) -> Self {
        SymMatrix::symmetrized(x.tr_mul(x))
    }

    /// Row-major entries, used by the serialized formats.
    pub fn from_row_major(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                context: "row-major entries",
                expected: n * n,
                got: entries.len(),
            });
        }
        SymMatrix::new(DMatrix::from_row_slice(n, n, entries))
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Frobenius inner product `Tr(AB)`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scaled(&self, a: f64) -> SymMatrix {
        SymMatrix(&self.0 * a)
    }

    /// `self += a · other`, entrywise (keeps exact symmetry).
    pub fn axpy(&mut self, a: f64, other: &SymMatrix) {
        self.0.zip_apply(&other.0, |x, y| *x += a * y);
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Congruence `Aᵀ M A` for an arbitrary (possibly rectangular) `A`.
    pub fn congruence(&self, a: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrized(a.transpose() * &self.0 * a)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        sym_eig(self).eigenvalues[0]
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scaled(rhs)
    }
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct EigDecomp {
    /// Ascending.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl EigDecomp {
    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `V f(Λ) Vᵀ`, skipping eigenpairs mapped to exactly zero.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.eigenvalues.len();
        let mut out = DMatrix::zeros(n, n);
        for (idx, &lambda) in self.eigenvalues.iter().enumerate() {
            let mu = f(lambda);
            if mu == 0.0 {
                continue;
            }
            let v = self.eigenvectors.column(idx);
            out.ger(mu, &v, &v, 1.0);
        }
        SymMatrix::symmetrized(out)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map_spectrum(|l| l)
    }
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn sym_eig(m: &SymMatrix) -> EigDecomp {
    let n = m.dim();
    if n == 0 {
        return EigDecomp {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        };
    }
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| m.0[(i, j)]);
    match a.self_adjoint_eigen(faer::Side::Lower) {
        Ok(evd) => {
            let s = evd.S();
            let u = evd.U();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&x, &y| s[x].total_cmp(&s[y]));
            let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| s[k]));
            let eigenvectors = DMatrix::from_fn(n, n, |i, j| u[(i, order[j])]);
            EigDecomp {
                eigenvalues,
                eigenvectors,
            }
        }
        // faer only fails on non-convergence; fall back to the Jacobi-free
        // QR solver in nalgebra.
        Err(_) => {
            let se = nalgebra::SymmetricEigen::new(m.0.clone());
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&x, &y| se.eigenvalues[x].total_cmp(&se.eigenvalues[y]));
            EigDecomp {
                eigenvalues: DVector::from_iterator(n, order.iter().map(|&k| se.eigenvalues[k])),
                eigenvectors: DMatrix::from_fn(n, n, |i, j| se.eigenvectors[(i, order[j])]),
            }
        }
    }
}

fn is_positive_definite(m: &SymMatrix) -> bool {
    let n = m.dim();
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| m.0[(i, j)]);
    a.llt(faer::Side::Lower).is_ok()
}

/// Frobenius projection onto the PSD cone (negative eigenvalues clipped to 0).
pub fn psd_project(m: &SymMatrix) -> SymMatrix {
    let n = m.dim();
    if n >= CHOLESKY_FAST_PATH_DIM && is_positive_definite(m) {
        return m.clone();
    }
    let eig = sym_eig(m);
    let negatives = eig.eigenvalues.iter().take_while(|&&l| l < 0.0).count();
    if negatives == 0 {
        return m.clone();
    }
    if negatives <= n / 2 {
        // M − Σ_{λ<0} λ v vᵀ
        let mut out = m.0.clone();
        for idx in 0..negatives {
            let v = eig.eigenvectors.column(idx);
            out.ger(-eig.eigenvalues[idx], &v, &v, 1.0);
        }
        let mut out = SymMatrix::symmetrized(out);
        // Rounding in the rank updates can leave tiny negative directions;
        // a second clip over the full spectrum settles them.
        if n < CHOLESKY_FAST_PATH_DIM {
            let check = sym_eig(&out);
            if check.eigenvalues[0] < 0.0 {
                out = check.map_spectrum(|l| l.max(0.0));
            }
        }
        out
    } else {
        eig.map_spectrum(|l| l.max(0.0))
    }
}

fn spectral_cutoff(eig: &EigDecomp, rtol: f64) -> Result<f64> {
    if !(rtol > 0.0) {
        return Err(Error::InvalidArgument(format!("rtol must be positive, got {rtol}")));
    }
    let lmax = eig.max_abs_eigenvalue();
    let lmin = eig.eigenvalues.get(0).copied().unwrap_or(0.0);
    if lmin < -rtol * lmax {
        return Err(Error::NotPsd { min_eigenvalue: lmin });
    }
    Ok(rtol * lmax)
}

fn check_finite(m: &SymMatrix) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("symmetric matrix"))
    }
}

/// Moore–Penrose pseudoinverse of a PSD matrix.
pub fn pinv_psd(m: &SymMatrix, rtol: f64) -> Result<SymMatrix> {
    check_finite(m)?;
    let eig = sym_eig(m);
    let cut = spectral_cutoff(&eig, rtol)?;
    Ok(eig.map_spectrum(|l| if l > cut && l > 0.0 { 1.0 / l } else { 0.0 }))
}

/// Principal square root of a PSD matrix.
pub fn sqrt_psd(m: &SymMatrix) -> Result<SymMatrix> {
    check_finite(m)?;
    let eig = sym_eig(m);
    spectral_cutoff(&eig, DEFAULT_RTOL)?;
    // eigenvalues at roundoff level are zero; their square roots would not be
    let floor = 16.0 * f64::EPSILON * m.dim() as f64 * eig.max_abs_eigenvalue();
    Ok(eig.map_spectrum(|l| if l > floor { l.sqrt() } else { 0.0 }))
}

/// `pinv(sqrt(M))`, with the same rank cutoff as [`pinv_psd`].
pub fn pinv_sqrt_psd(m: &SymMatrix) -> Result<SymMatrix> {
    check_finite(m)?;
    let eig = sym_eig(m);
    let cut = spectral_cutoff(&eig, DEFAULT_RTOL)?;
    Ok(eig.map_spectrum(|l| if l > cut && l > 0.0 { 1.0 / l.sqrt() } else { 0.0 }))
}

/// Sum of absolute eigenvalues.
pub fn trace_norm(m: &SymMatrix) -> f64 {
    sym_eig(m).eigenvalues.iter().map(|l| l.abs()).sum()
}

/// Largest absolute eigenvalue.
pub fn op_norm(m: &SymMatrix) -> f64 {
    sym_eig(m).max_abs_eigenvalue()
}

/// Orthonormal basis (as columns) of the significant eigenspace of a PSD matrix.
pub fn range_basis(m: &SymMatrix, rtol: f64) -> DMatrix<f64> {
    let eig = sym_eig(m);
    let cut = rtol * eig.max_abs_eigenvalue();
    let cols: Vec<usize> = (0..m.dim())
        .filter(|&j| eig.eigenvalues[j] > cut && eig.eigenvalues[j] > 0.0)
        .collect();
    DMatrix::from_fn(m.dim(), cols.len(), |i, c| eig.eigenvectors[(i, cols[c])])
}

/// Whether `Ran(A) ⊆ Ran(B)` for PSD `A`, `B`.
///
/// Each significant eigenvector of `A` must have a residual of at most
/// `sqrt(rtol)` after projection onto the significant eigenspace of `B`.
pub fn range_contains(a: &SymMatrix, b: &SymMatrix, rtol: f64) -> bool {
    range_residual(a, b, rtol) <= rtol.sqrt()
}

/// Largest residual `‖(I − P_B) v‖` over the significant eigenvectors `v` of `A`.
pub fn range_residual(a: &SymMatrix, b: &SymMatrix, rtol: f64) -> f64 {
    let va = range_basis(a, rtol);
    if va.ncols() == 0 {
        return 0.0;
    }
    let vb = range_basis(b, rtol);
    let proj = &vb * (vb.transpose() * &va);
    let resid = &va - proj;
    (0..resid.ncols())
        .map(|j| resid.column(j).norm())
        .fold(0.0, f64::max)
}

/// Dense `I_d ⊗ φ` (a `dk × d` matrix): entry `(i·k + h, i) = φ_h`.
pub fn kron_id_lift(phi: &DVector<f64>, d: usize) -> DMatrix<f64> {
    let k = phi.len();
    let mut out = DMatrix::zeros(d * k, d);
    for i in 0..d {
        for h in 0..k {
            out[(i * k + h, i)] = phi[h];
        }
    }
    out
}

/// `(I_d ⊗ φᵀ) H (I_d ⊗ φ)` without forming the lift: entry `(i, j)` is
/// `φᵀ H_{ij} φ` for the `k × k` block `H_{ij}`.
pub fn kron_id_compress(h: &SymMatrix, phi: &DVector<f64>) -> Result<SymMatrix> {
    let k = phi.len();
    let dk = h.dim();
    if k == 0 || dk % k != 0 {
        return Err(Error::DimensionMismatch {
            context: "H dimension must be a multiple of the feature dimension",
            expected: k,
            got: dk,
        });
    }
    let d = dk / k;
    let hm = h.as_matrix();
    // Hφ block-wise: hp[(i·k + h), j] = Σ_z H[(i·k+h), (j·k+z)] φ_z
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in j..d {
            let mut acc = 0.0;
            for a in 0..k {
                let row = i * k + a;
                let mut inner = 0.0;
                for b in 0..k {
                    inner += hm[(row, j * k + b)] * phi[b];
                }
                acc += phi[a] * inner;
            }
            out[(i, j)] = acc;
            out[(j, i)] = acc;
        }
    }
    Ok(SymMatrix(out))
}

/// `H += α (I_d ⊗ φ) G (I_d ⊗ φᵀ)`, i.e. `H += α · G ⊗ φφᵀ` in the block layout.
pub fn kron_id_expand_axpy(h: &mut SymMatrix, alpha: f64, core: &SymMatrix, phi: &DVector<f64>) {
    let k = phi.len();
    let d = core.dim();
    debug_assert_eq!(h.dim(), d * k);
    let hm = &mut h.0;
    for j in 0..d {
        for b in 0..k {
            let col = j * k + b;
            let pb = alpha * phi[b];
            for i in 0..d {
                let g = core.0[(i, j)] * pb;
                for a in 0..k {
                    hm[(i * k + a, col)] += g * phi[a];
                }
            }
        }
    }
}

/// Dense `(I_d ⊗ φ) G (I_d ⊗ φᵀ)`.
pub fn kron_id_expand(core: &SymMatrix, phi: &DVector<f64>) -> SymMatrix {
    let mut out = SymMatrix::zeros(core.dim() * phi.len());
    kron_id_expand_axpy(&mut out, 1.0, core, phi);
    out
}

/// `‖A^{1/2} B^{1/2}‖_* = Tr((B^{1/2} A B^{1/2})^{1/2})` for PSD `A`, `B`.
pub fn sqrt_product_trace_norm(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    let b_half = sqrt_psd(b)?;
    let inner = a.congruence(b_half.as_matrix());
    Ok(sqrt_psd(&psd_project(&inner))?.trace())
}
