//! Dense symmetric linear algebra on top of `faer`.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::{DenseSolveCore, Llt, SolveCore};
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Largest matrix for which spectral extremes come from a full symmetric
/// eigensolve; above this, power and inverse iterations are used.
pub const FULL_EIGEN_LIMIT: usize = 5000;

const LANCZOS_MAX_STEPS: usize = 300;
const LANCZOS_TOL: f64 = 1e-13;

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Conditioning {
            module: "linalg",
            lambda_min: f64::NAN,
            detail: format!("eigensolver failed: {e:?}"),
        })
}

/// Full eigendecomposition `A = U diag(s) Uᵀ`, eigenvalues ascending.
pub fn symmetric_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Conditioning {
            module: "linalg",
            lambda_min: f64::NAN,
            detail: format!("eigensolver failed: {e:?}"),
        })?;
    let s = evd.S().column_vector();
    let values = (0..a.nrows()).map(|i| s[i]).collect();
    Ok((values, evd.U().to_owned()))
}

/// `(lambda_min, lambda_max)` of a symmetric matrix.
pub fn spectral_extremes(a: MatRef<'_, f64>) -> Result<(f64, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset("spectrum of a 0x0 matrix".into()));
    }
    if n <= FULL_EIGEN_LIMIT {
        let ev = symmetric_eigenvalues(a)?;
        return Ok((ev[0], ev[n - 1]));
    }
    let (_, lambda_max) = lanczos(n, |v| matvec(a, v));
    let lambda_min = inverse_extreme(a, lambda_max)?;
    Ok((lambda_min, lambda_max))
}

/// Largest absolute eigenvalue of a symmetric (possibly indefinite) matrix.
pub fn symmetric_spectral_norm(a: MatRef<'_, f64>) -> Result<f64> {
    let n = a.nrows();
    if n <= FULL_EIGEN_LIMIT {
        let ev = symmetric_eigenvalues(a)?;
        return Ok(ev.iter().fold(0.0f64, |acc, v| acc.max(v.abs())));
    }
    let (low, high) = lanczos(n, |v| matvec(a, v));
    Ok(low.abs().max(high.abs()))
}

/// Least eigenvalue of a positive semidefinite matrix from the top of the
/// spectrum of `(A + tau I)^{-1}`, with `tau` a tiny multiple of
/// `lambda_max` that is grown until the shifted matrix factorizes.
fn inverse_extreme(a: MatRef<'_, f64>, lambda_max: f64) -> Result<f64> {
    let mut tau = lambda_max.abs().max(f64::MIN_POSITIVE) * 1e-12;
    let chol = loop {
        match Cholesky::new(shifted(a, tau).as_ref(), "linalg") {
            Ok(c) => break c,
            Err(_) if tau < lambda_max.abs() => tau *= 100.0,
            Err(e) => return Err(e),
        }
    };
    let (_, top) = lanczos(a.nrows(), |v| chol.solve(v));
    Ok(1.0 / top - tau)
}

/// Extreme Ritz values `(low, high)` of a symmetric operator by Lanczos with
/// full reorthogonalization. Stops once both Ritz residuals are below a
/// relative tolerance or the Krylov space is exhausted.
fn lanczos(n: usize, mut op: impl FnMut(&[f64]) -> Vec<f64>) -> (f64, f64) {
    let steps = n.min(LANCZOS_MAX_STEPS);
    // Deterministic, non-degenerate start vector.
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 97) as f64 / 97.0).collect();
    normalize(&mut q);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let (mut alphas, mut betas) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
    let mut extremes = (0.0, 0.0);
    for k in 0..steps {
        let mut w = op(&q);
        let alpha = dot(&q, &w);
        basis.push(q);
        alphas.push(alpha);
        // Two passes of Gram-Schmidt keep the basis orthogonal to rounding.
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let beta = dot(&w, &w).sqrt();
        let last = k + 1 == steps;
        if last || beta == 0.0 || k % 5 == 4 {
            let m = alphas.len();
            let t = Mat::from_fn(m, m, |i, j| match i.abs_diff(j) {
                0 => alphas[i],
                1 => betas[i.min(j)],
                _ => 0.0,
            });
            let (theta, s) = symmetric_eigen(t.as_ref()).expect("tridiagonal eigensolve");
            extremes = (theta[0], theta[m - 1]);
            let scale = theta[0].abs().max(theta[m - 1].abs());
            let converged = [0, m - 1].iter().all(|&j| beta * s[(m - 1, j)].abs() <= LANCZOS_TOL * scale);
            if last || beta <= LANCZOS_TOL * scale || converged {
                break;
            }
        }
        betas.push(beta);
        q = w.into_iter().map(|x| x / beta).collect();
    }
    extremes
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `A x` for a column-major dense matrix.
pub fn matvec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = a.col(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col[i] * xj;
        }
    }
    out
}

/// Column `j` copied into a vector.
pub fn column(a: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    let col = a.col(j);
    (0..a.nrows()).map(|i| col[i]).collect()
}

/// `A Bᵀ` for row-major slices `a` (n×d) and `b` (k×d).
pub fn gram_rows(a: &[f64], n: usize, b: &[f64], k: usize, d: usize) -> Mat<f64> {
    let lhs = MatRef::from_row_major_slice(a, n, d);
    let rhs = MatRef::from_row_major_slice(b, k, d);
    let mut out = Mat::<f64>::zeros(n, k);
    matmul(out.as_mut(), Accum::Replace, lhs, rhs.transpose(), 1.0, Par::Seq);
    out
}

/// Cholesky factor of a symmetric positive definite matrix.
pub struct Cholesky {
    llt: Llt<f64>,
    n: usize,
}

impl Cholesky {
    pub fn new(a: MatRef<'_, f64>, module: &'static str) -> Result<Self> {
        let llt = a.llt(Side::Lower).map_err(|_| Error::Conditioning {
            module,
            lambda_min: f64::NAN,
            detail: "matrix is not numerically positive definite".into(),
        })?;
        Ok(Self { llt, n: a.nrows() })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.llt
            .solve_in_place_with_conj(faer::Conj::No, MatMut::from_column_major_slice_mut(&mut x, self.n, 1));
        x
    }

    pub fn inverse(&self) -> Mat<f64> {
        self.llt.inverse()
    }

    /// Diagonal of the lower factor.
    pub fn factor_diagonal(&self) -> Vec<f64> {
        let l = self.llt.L();
        (0..self.n).map(|i| l[(i, i)]).collect()
    }
}

/// Copy of the principal submatrix indexed by `idx`.
pub fn principal_submatrix(a: MatRef<'_, f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
}

/// `A + shift I`.
pub fn shifted(a: MatRef<'_, f64>, shift: f64) -> Mat<f64> {
    let mut out = a.to_owned();
    if shift != 0.0 {
        for i in 0..out.nrows() {
            out[(i, i)] += shift;
        }
    }
    out
}

/// Largest absolute entry of `A B - I`.
pub fn identity_defect(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    let n = a.nrows();
    let mut prod = Mat::<f64>::zeros(n, n);
    matmul(prod.as_mut(), Accum::Replace, a, b, 1.0, Par::Seq);
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[(i, j)] - target).abs());
        }
    }
    worst
}
