//! Dense symmetric/rectangular linear-algebra kernels.
//!
//! Everything here is deterministic and allocation-straightforward: dense
//! Cholesky with an explicit pivot threshold, a cyclic Jacobi eigensolver for
//! symmetric matrices, and a one-sided Jacobi SVD that returns *full*
//! orthonormal factors (the right factor is always `p x p`, even for wide
//! inputs with `n < p`, so downstream products stay shape-compatible).
//!
//! The matrices involved are small (tens of rows at most on the symmetric
//! side), so Jacobi iteration is both fast enough and considerably more
//! accurate than it needs to be for the tolerances used by callers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a Cholesky pivot counts as a failure
/// rather than rounding noise.
pub const CHOLESKY_PIVOT_REL: f64 = 1e-12;

/// Relative window in which slightly negative eigenvalues of a nominally PSD
/// matrix are clamped to zero. Anything more negative is an error.
pub const EIGEN_CLAMP_REL: f64 = 1e-10;

const MAX_JACOBI_SWEEPS: usize = 64;

/// Symmetric real matrix with exact stored symmetry (`m[i,j] == m[j,i]` bitwise).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds from the upper triangle of `f(i, j)` (called only for `i <= j`),
    /// mirroring entries so symmetry holds exactly as stored.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix { m }
    }

    /// Wraps a square matrix, mirroring its upper triangle onto the lower one.
    pub fn from_upper(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::SchemaMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(SymMatrix::from_fn(m.nrows(), |i, j| m[(i, j)]))
    }

    /// Wraps a matrix that is already exactly symmetric; errors otherwise.
    pub fn try_exact(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::SchemaMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for i in 0..m.nrows() {
            for j in i + 1..m.ncols() {
                if m[(i, j)].to_bits() != m[(j, i)].to_bits() {
                    return Err(Error::SchemaMismatch(format!(
                        "matrix is not symmetric as stored at ({i},{j})"
                    )));
                }
            }
        }
        Ok(SymMatrix { m })
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            m: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix::from_fn(d.len(), |i, j| if i == j { d[i] } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Max-absolute-entry norm, the scale used by the relative tolerances here.
    pub fn norm_max(&self) -> f64 {
        if self.m.is_empty() {
            0.0
        } else {
            self.m.amax()
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.m.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix { m: &self.m * s }
    }
}

/// Lower-triangular Cholesky factor with strictly positive diagonal.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `2 * sum(log diag)`, the log-determinant of the factored matrix.
    pub fn logdet(&self) -> f64 {
        (0..self.dim()).map(|i| self.lower[(i, i)].ln()).sum::<f64>() * 2.0
    }

    /// Solves `(L L^T) x = b` by forward then backward substitution.
    pub fn solve_vector(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let l = &self.lower;
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve_vector(&DVector::from_column_slice(b.column(j).as_slice()));
            out.set_column(j, &col);
        }
        out
    }

    /// Solves the lower-triangular system `L x = b` only.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let l = &self.lower;
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }
}

/// Orthonormal eigenvectors (columns) with eigenvalues sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

/// Full SVD `m = left * diag(singular_values) * right^T`.
///
/// `left` is `n x n` and `right` is `p x p` regardless of the aspect ratio;
/// `singular_values` has `min(n, p)` nonnegative entries sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub left: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub right: DMatrix<f64>,
}

/// Dense Cholesky factorization of a symmetric positive-definite matrix.
///
/// Fails with [`Error::NotPositiveDefinite`] as soon as a pivot drops to
/// `1e-12 * max(diag)` or below, which is the caller's cue to switch to the
/// eigendecomposition path.
pub fn cholesky_lower(m: &SymMatrix) -> Result<CholeskyFactor> {
    let n = m.dim();
    let a = m.matrix();
    let max_diag = (0..n).fold(0.0f64, |acc, i| acc.max(a[(i, i)]));
    let threshold = CHOLESKY_PIVOT_REL * max_diag.max(0.0);
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > threshold) {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {pivot:.6e} at column {j} is at or below threshold {threshold:.6e}"
            )));
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Eigenvalues come back sorted nonincreasing. Values in
/// `[-1e-10 * max|m|, 0]` are clamped to zero (covariance matrices built from
/// binary columns are routinely semidefinite only up to rounding); anything
/// more negative raises [`Error::NotPositiveDefinite`].
pub fn sym_eigen(m: &SymMatrix) -> Result<EigenPair> {
    let (vectors, values) = jacobi_symmetric(m.matrix())?;
    let clamp = EIGEN_CLAMP_REL * m.norm_max();
    let mut clamped = values;
    for v in clamped.iter_mut() {
        if *v < -clamp {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalue {v:.6e} below the clamp window -{clamp:.6e}"
            )));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(EigenPair {
        vectors,
        values: clamped,
    })
}

/// Full singular value decomposition of an arbitrary rectangular matrix.
///
/// Unlike thin/reduced SVDs, the right factor is always `p x p`, so a wide
/// input (`n < p`) still yields factors that multiply back compatibly; missing
/// directions are completed to an orthonormal basis and paired with the zero
/// block of the rectangular singular-value matrix.
pub fn full_svd(m: &DMatrix<f64>) -> Result<SvdResult> {
    let (n, p) = m.shape();
    if n >= p {
        let (u, sigma, v) = onesided_jacobi(m)?;
        let left = complete_orthonormal(&u, &sigma, n);
        Ok(SvdResult {
            left,
            singular_values: sigma,
            right: v,
        })
    } else {
        // Factor the transpose (tall) and swap the roles of the factors.
        let (u, sigma, v) = onesided_jacobi(&m.transpose())?;
        let right = complete_orthonormal(&u, &sigma, p);
        Ok(SvdResult {
            left: v,
            singular_values: sigma,
            right,
        })
    }
}

/// Singular values plus the full `p x p` right factor, skipping the (possibly
/// large) left factor. This is what moment-matching generation needs.
pub(crate) fn svd_right(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = m.shape();
    if n >= p {
        let (_, sigma, v) = onesided_jacobi(m)?;
        Ok((sigma, v))
    } else {
        let (u, sigma, _) = onesided_jacobi(&m.transpose())?;
        let right = complete_orthonormal(&u, &sigma, p);
        Ok((sigma, right))
    }
}

/// Thin QR by modified Gram-Schmidt with a reorthogonalization pass:
/// `a = q r` with `q: n x p` orthonormal columns and `r: p x p` upper
/// triangular, positive diagonal. For a centered matrix this makes
/// `r' / sqrt(n-1)` the Cholesky factor of the sample covariance without
/// ever squaring the data, so whitening stays accurate even when that
/// covariance is nearly singular.
///
/// Errors with [`Error::NotPositiveDefinite`] when a column is numerically
/// dependent on the ones before it (rank-deficient input).
pub(crate) fn thin_qr(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p) = a.shape();
    let mut q = a.clone();
    let mut r = DMatrix::zeros(p, p);
    for j in 0..p {
        let orig_norm = q.column(j).norm();
        for _ in 0..2 {
            for k in 0..j {
                let mut d = 0.0;
                for i in 0..n {
                    d += q[(i, k)] * q[(i, j)];
                }
                r[(k, j)] += d;
                for i in 0..n {
                    let qik = q[(i, k)];
                    q[(i, j)] -= d * qik;
                }
            }
        }
        let norm = q.column(j).norm();
        if !(norm > 1e-8 * orig_norm) || orig_norm == 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "column {j} is numerically dependent on the previous columns"
            )));
        }
        r[(j, j)] = norm;
        for i in 0..n {
            q[(i, j)] /= norm;
        }
    }
    Ok((q, r))
}

/// Solves `m x = rhs` for SPD `m` via Cholesky.
pub fn solve_spd(m: &SymMatrix, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = cholesky_lower(m)?;
    Ok(chol.solve_matrix(rhs))
}

pub fn solve_spd_vector(m: &SymMatrix, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = cholesky_lower(m)?;
    Ok(chol.solve_vector(rhs))
}

/// Inverse of an SPD matrix, returned with exact stored symmetry.
pub fn inverse_spd(m: &SymMatrix) -> Result<SymMatrix> {
    let inv = solve_spd(m, &DMatrix::identity(m.dim(), m.dim()))?;
    SymMatrix::from_upper(&inv)
}

/// `log |m|` for SPD `m`, computed as twice the log-diagonal sum of the
/// Cholesky factor.
pub fn logdet_spd(m: &SymMatrix) -> Result<f64> {
    Ok(cholesky_lower(m)?.logdet())
}

/// Any factor `F` with `F F^T = m` for a PSD matrix, built from the clamped
/// eigendecomposition (`F = U diag(sqrt(lambda))`). Works on singular inputs
/// where Cholesky does not.
pub fn psd_factor(m: &SymMatrix) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    let mut f = eig.vectors;
    for j in 0..f.ncols() {
        let s = eig.values[j].sqrt();
        for i in 0..f.nrows() {
            f[(i, j)] *= s;
        }
    }
    Ok(f)
}

fn jacobi_symmetric(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::identity(n, n);
    if n <= 1 {
        return Ok((v, a.diagonal()));
    }
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok((v, DVector::zeros(n)));
    }
    let tol = 1e-14 * scale;
    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(a[(i, j)].abs());
            }
        }
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NotDiagonalizableNumerically(MAX_JACOBI_SWEEPS));
    }
    // Sort eigenpairs by value, nonincreasing.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok((vectors, values))
}

/// One-sided Jacobi SVD for a tall matrix (`k >= l`). Returns `(u, sigma, v)`
/// with `u: k x l` (columns orthonormal where `sigma > 0`, zero columns for
/// exactly zero singular values), `sigma` sorted nonincreasing, `v: l x l`.
fn onesided_jacobi(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (k, l) = m.shape();
    debug_assert!(k >= l);
    let mut w = m.clone();
    let mut v = DMatrix::identity(l, l);
    let eps = 1e-15;
    let mut converged = l < 2;
    for _ in 0..MAX_JACOBI_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..l.saturating_sub(1) {
            for j in i + 1..l {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for r in 0..k {
                    let wi = w[(r, i)];
                    let wj = w[(r, j)];
                    alpha += wi * wi;
                    beta += wj * wj;
                    gamma += wi * wj;
                }
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                if !gamma.is_finite() {
                    return Err(Error::NotDiagonalizableNumerically(MAX_JACOBI_SWEEPS));
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    1.0 / (zeta - (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..k {
                    let wi = w[(r, i)];
                    let wj = w[(r, j)];
                    w[(r, i)] = c * wi - s * wj;
                    w[(r, j)] = s * wi + c * wj;
                }
                for r in 0..l {
                    let vi = v[(r, i)];
                    let vj = v[(r, j)];
                    v[(r, i)] = c * vi - s * vj;
                    v[(r, j)] = s * vi + c * vj;
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NotDiagonalizableNumerically(MAX_JACOBI_SWEEPS));
    }
    let mut sigma: Vec<f64> = (0..l).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());
    sigma = order.iter().map(|&i| sigma[i]).collect();
    let mut u = DMatrix::zeros(k, l);
    let mut vs = DMatrix::zeros(l, l);
    for (dst, &src) in order.iter().enumerate() {
        vs.set_column(dst, &v.column(src));
        if sigma[dst] > 0.0 {
            u.set_column(dst, &(w.column(src) / sigma[dst]));
        }
    }
    Ok((u, DVector::from_vec(sigma), vs))
}

/// Completes the nonzero columns of `u` (those paired with `sigma > 0`) to a
/// `dim x dim` orthonormal basis by greedy Gram-Schmidt over the standard
/// basis, always picking the candidate with the largest residual.
fn complete_orthonormal(u: &DMatrix<f64>, sigma: &DVector<f64>, dim: usize) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(dim);
    let mut fill_slots: Vec<usize> = Vec::new();
    for j in 0..u.ncols() {
        if j < sigma.len() && sigma[j] > 0.0 {
            cols.push(u.column(j).into_owned());
        } else {
            fill_slots.push(j);
            cols.push(DVector::zeros(dim));
        }
    }
    let existing: Vec<usize> = (0..u.ncols())
        .filter(|j| *j < sigma.len() && sigma[*j] > 0.0)
        .collect();
    let mut basis: Vec<DVector<f64>> = existing.iter().map(|&j| cols[j].clone()).collect();
    let mut needed: Vec<DVector<f64>> = Vec::new();
    let total_needed = dim - basis.len();
    for _ in 0..total_needed {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for i in 0..dim {
            let mut cand = DVector::zeros(dim);
            cand[i] = 1.0;
            // Two projection passes for orthogonality at working precision.
            for _ in 0..2 {
                for b in &basis {
                    let d = b.dot(&cand);
                    cand -= b * d;
                }
            }
            let norm = cand.norm();
            if best.as_ref().map_or(true, |(bn, _)| norm > *bn) {
                best = Some((norm, cand));
            }
        }
        let (norm, mut vec) = best.expect("dim > 0");
        vec /= norm;
        basis.push(vec.clone());
        needed.push(vec);
    }
    let mut out = DMatrix::zeros(dim, dim);
    let mut fill_iter = needed.into_iter();
    for (j, col) in cols.iter().enumerate() {
        if fill_slots.contains(&j) {
            out.set_column(j, &fill_iter.next().expect("enough completions"));
        } else {
            out.set_column(j, col);
        }
    }
    for j in u.ncols()..dim {
        out.set_column(j, &fill_iter.next().expect("enough completions"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::prelude::*;

    fn random_spd(dim: usize, seed: u64) -> SymMatrix {
        let mut rng = StdRng::seed_from_u64(seed);
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(dim, dim);
        SymMatrix::from_upper(&spd).unwrap()
    }

    fn reconstruction_error(m: &SymMatrix, l: &CholeskyFactor) -> f64 {
        let back = l.lower() * l.lower().transpose();
        (back - m.matrix()).amax()
    }

    #[test]
    fn cholesky_identity() {
        let m = SymMatrix::identity(3);
        let l = cholesky_lower(&m).unwrap();
        assert_eq!(l.lower(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn cholesky_diagonal() {
        let m = SymMatrix::from_diagonal(&[4.0, 9.0]);
        let l = cholesky_lower(&m).unwrap();
        assert_eq!(l.lower()[(0, 0)], 2.0);
        assert_eq!(l.lower()[(1, 1)], 3.0);
        assert_eq!(l.lower()[(0, 1)], 0.0);
        assert_eq!(l.lower()[(1, 0)], 0.0);
    }

    #[test]
    fn cholesky_random_spd_reconstructs() {
        let m = random_spd(5, 7);
        let l = cholesky_lower(&m).unwrap();
        assert!(reconstruction_error(&m, &l) <= 1e-12 * m.norm_max());
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = SymMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 2.0 });
        assert!(matches!(
            cholesky_lower(&m),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn eigen_diagonal_sorted() {
        let m = SymMatrix::from_diagonal(&[4.0, 9.0]);
        let e = sym_eigen(&m).unwrap();
        assert_eq!(e.values[0], 9.0);
        assert_eq!(e.values[1], 4.0);
        // Columns are signed permutations of the identity.
        assert_abs_diff_eq!(e.vectors[(1, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.vectors[(0, 1)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eigen_two_by_two_hand_values() {
        // Characteristic polynomial of [[2,1],[1,2]] gives 3 and 1 with
        // eigenvectors (1,1)/sqrt(2) and (1,-1)/sqrt(2) up to sign.
        let m = SymMatrix::from_fn(2, |i, j| if i == j { 2.0 } else { 1.0 });
        let e = sym_eigen(&m).unwrap();
        assert_abs_diff_eq!(e.values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-12);
        let s = 1.0 / 2.0f64.sqrt();
        let v0 = e.vectors.column(0);
        assert_abs_diff_eq!((v0[0] * v0[1]).abs(), s * s, epsilon = 1e-12);
        let v1 = e.vectors.column(1);
        assert_abs_diff_eq!(v1[0] * v1[1], -s * s, epsilon = 1e-12);
    }

    #[test]
    fn eigen_rank_one_clamps_to_zero() {
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let outer = &v * v.transpose();
        let m = SymMatrix::from_upper(&outer).unwrap();
        let e = sym_eigen(&m).unwrap();
        assert_abs_diff_eq!(e.values[0], v.norm_squared(), epsilon = 1e-10);
        for k in 1..3 {
            assert!(e.values[k] >= 0.0);
            assert!(e.values[k] <= 1e-12 * v.norm_squared());
        }
    }

    #[test]
    fn eigen_rejects_material_negatives() {
        let m = SymMatrix::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(sym_eigen(&m), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn eigen_reports_convergence_failure_on_nan() {
        let m = SymMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { f64::NAN });
        assert!(matches!(
            sym_eigen(&m),
            Err(Error::NotDiagonalizableNumerically(_))
        ));
    }

    #[test]
    fn svd_identity() {
        let m = DMatrix::identity(2, 2);
        let s = full_svd(&m).unwrap();
        assert_abs_diff_eq!(s.singular_values[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.singular_values[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn svd_wide_right_factor_is_full() {
        let mut rng = StdRng::seed_from_u64(3);
        let m = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let s = full_svd(&m).unwrap();
        assert_eq!(s.right.shape(), (5, 5));
        assert_eq!(s.left.shape(), (3, 3));
        assert_eq!(s.singular_values.len(), 3);
        let rtr = s.right.transpose() * &s.right;
        assert!((rtr - DMatrix::identity(5, 5)).amax() < 1e-12);
    }

    #[test]
    fn svd_tall_reconstructs() {
        let mut rng = StdRng::seed_from_u64(11);
        let m = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-2.0..2.0));
        let s = full_svd(&m).unwrap();
        let mut sig = DMatrix::zeros(6, 3);
        for i in 0..3 {
            sig[(i, i)] = s.singular_values[i];
        }
        let back = &s.left * sig * s.right.transpose();
        assert!((back - &m).amax() <= 1e-10 * m.amax());
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let m = SymMatrix::identity(3);
        let rhs = DMatrix::from_fn(3, 2, |i, j| (i + j) as f64);
        let x = solve_spd(&m, &rhs).unwrap();
        assert_eq!(x, rhs);
    }

    #[test]
    fn solve_diagonal() {
        let m = SymMatrix::from_diagonal(&[2.0, 4.0]);
        let rhs = DVector::from_vec(vec![2.0, 4.0]);
        let x = solve_spd_vector(&m, &rhs).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn solve_recovers_constructed_solution() {
        let m = random_spd(4, 21);
        let truth = DVector::from_vec(vec![1.5, -2.0, 0.25, 3.0]);
        let rhs = m.matrix() * &truth;
        let x = solve_spd_vector(&m, &rhs).unwrap();
        assert!((x - truth).amax() <= 1e-10);
    }

    #[test]
    fn logdet_identity_and_diagonal() {
        assert_abs_diff_eq!(logdet_spd(&SymMatrix::identity(4)).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let m = SymMatrix::from_diagonal(&[e, e * e]);
        assert_abs_diff_eq!(logdet_spd(&m).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn logdet_matches_eigenvalue_product() {
        let m = random_spd(5, 99);
        let direct = logdet_spd(&m).unwrap();
        let eig = sym_eigen(&m).unwrap();
        let via_eigen: f64 = eig.values.iter().map(|v| v.ln()).sum();
        assert_abs_diff_eq!(direct, via_eigen, epsilon = 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prop_cholesky_roundtrip(seed in 0u64..1000, dim in 1usize..7) {
            let m = random_spd(dim, seed);
            let l = cholesky_lower(&m).unwrap();
            prop_assert!(reconstruction_error(&m, &l) <= 1e-12 * m.norm_max());
            for i in 0..dim {
                prop_assert!(l.lower()[(i, i)] > 0.0);
            }
        }

        #[test]
        fn prop_eigen_orthonormal_and_trace(seed in 0u64..1000, dim in 1usize..7) {
            let m = random_spd(dim, seed);
            let e = sym_eigen(&m).unwrap();
            let utu = e.vectors.transpose() * &e.vectors;
            prop_assert!((utu - DMatrix::identity(dim, dim)).amax() < 1e-10);
            let sum: f64 = e.values.iter().sum();
            prop_assert!((sum - m.trace()).abs() <= 1e-10 * m.norm_max().max(1.0));
            let lam = DMatrix::from_diagonal(&e.values);
            let back = &e.vectors * lam * e.vectors.transpose();
            prop_assert!((back - m.matrix()).amax() <= 1e-10 * m.norm_max());
        }

        #[test]
        fn prop_full_svd_shapes_and_roundtrip(seed in 0u64..1000, n in 1usize..7, p in 1usize..7) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0));
            let s = full_svd(&m).unwrap();
            prop_assert_eq!(s.left.shape(), (n, n));
            prop_assert_eq!(s.right.shape(), (p, p));
            prop_assert_eq!(s.singular_values.len(), n.min(p));
            for i in 1..s.singular_values.len() {
                prop_assert!(s.singular_values[i] <= s.singular_values[i - 1]);
            }
            let mut sig = DMatrix::zeros(n, p);
            for i in 0..n.min(p) {
                sig[(i, i)] = s.singular_values[i];
            }
            let back = &s.left * sig * s.right.transpose();
            prop_assert!((back - &m).amax() <= 1e-10 * m.amax().max(1e-30));
            let ltl = s.left.transpose() * &s.left;
            prop_assert!((ltl - DMatrix::identity(n, n)).amax() < 1e-10);
            let rtr = s.right.transpose() * &s.right;
            prop_assert!((rtr - DMatrix::identity(p, p)).amax() < 1e-10);
        }
    }
}
