//! The infinite-width NTK of a two-layer ReLU network with a fixed second
//! layer, and its finite-width empirical counterpart.

use std::f64::consts::PI;
use std::io::{Read, Write};

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, UNIT_NORM_TOL};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::matrix_io;
use crate::network::NetworkState;

/// Numerical floor on the least eigenvalue of a kernel matrix.
pub const PSD_TOL: f64 = -1e-10;

/// Kernel as a function of the inner product of two unit vectors.
#[inline]
pub fn ntk_from_inner(s: f64) -> f64 {
    let s = s.clamp(-1.0, 1.0);
    s * (PI - s.acos()) / (2.0 * PI)
}

fn check_unit(x: &[f64]) -> Result<()> {
    let norm = linalg::dot(x, x).sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::Domain(format!("input has norm {norm}, expected a unit vector")));
    }
    Ok(())
}

/// `s (pi - arccos s) / (2 pi)` with `s = <x, x2>`, both unit vectors.
pub fn ntk_value(x: &[f64], x2: &[f64]) -> Result<f64> {
    check_len("kernel argument", x.len(), x2.len())?;
    check_unit(x)?;
    check_unit(x2)?;
    Ok(ntk_from_inner(linalg::dot(x, x2)))
}

/// Symmetric positive semidefinite Gram matrix with its spectral extremes.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    values: Mat<f64>,
    lambda_min: f64,
    lambda_max: f64,
}

impl KernelMatrix {
    /// Wraps a square matrix, mirroring the lower triangle onto the upper one
    /// so the result is exactly symmetric.
    pub fn from_matrix(mut values: Mat<f64>) -> Result<Self> {
        let n = values.nrows();
        check_len("kernel columns", n, values.ncols())?;
        if n == 0 {
            return Err(Error::EmptyDataset("kernel of zero points".into()));
        }
        for j in 0..n {
            for i in j + 1..n {
                values[(j, i)] = values[(i, j)];
            }
        }
        if let Some(bad) = (0..n).find(|&i| !values[(i, i)].is_finite()) {
            return Err(Error::Domain(format!("kernel diagonal entry {bad} is not finite")));
        }
        let (lambda_min, lambda_max) = linalg::spectral_extremes(values.as_ref())?;
        if lambda_min < PSD_TOL * lambda_max.abs().max(1.0) {
            return Err(Error::Domain(format!(
                "kernel matrix is not positive semidefinite (least eigenvalue {lambda_min:e})"
            )));
        }
        Ok(Self {
            values,
            lambda_min,
            lambda_max,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> MatRef<'_, f64> {
        self.values.as_ref()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.values[(i, i)]).sum()
    }

    /// Principal submatrix on `idx`, copied entry by entry.
    pub fn principal(&self, idx: &[usize]) -> Result<Self> {
        for &i in idx {
            crate::error::check_index(i, self.n())?;
        }
        Self::from_matrix(linalg::principal_submatrix(self.values(), idx))
    }

    /// SHA-256 over the dimension and the row-major little-endian entries.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        for i in 0..self.n() {
            for j in 0..self.n() {
                h.update(self.values[(i, j)].to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn write_binary<W: Write>(&self, out: &mut W) -> Result<()> {
        matrix_io::write_mat(out, self.values())
    }

    pub fn read_binary<R: Read>(input: &mut R) -> Result<Self> {
        let mut offset = 0;
        Self::from_matrix(matrix_io::read_mat(input, &mut offset)?)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        matrix_io::write_csv(out, self.values())
    }
}

/// Kernel evaluations between one test point and every training point.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCross(Vec<f64>);

impl KernelCross {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entries restricted to `idx`.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self(idx.iter().map(|&i| self.0[i]).collect())
    }
}

fn apply_ntk(mut inner: Mat<f64>) -> Mat<f64> {
    let cols: Vec<Vec<f64>> = crate::par::map_range(inner.ncols(), |j| {
        let col = inner.col(j);
        (0..col.nrows()).map(|i| ntk_from_inner(col[i])).collect()
    });
    for (j, col) in cols.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            inner[(i, j)] = v;
        }
    }
    inner
}

/// Analytic NTK Gram matrix of the training inputs.
pub fn gram(data: &Dataset) -> Result<KernelMatrix> {
    let (n, d) = (data.n(), data.d());
    let mut k = apply_ntk(linalg::gram_rows(data.inputs(), n, data.inputs(), n, d));
    for i in 0..n {
        // Unit-norm inputs: the diagonal is exactly pi / (2 pi).
        k[(i, i)] = 0.5;
    }
    KernelMatrix::from_matrix(k)
}

/// NTK between `test_point` and every training input.
pub fn cross(data: &Dataset, test_point: &[f64]) -> Result<KernelCross> {
    check_len("test point", data.d(), test_point.len())?;
    check_unit(test_point)?;
    Ok(KernelCross(
        data.rows().map(|x| ntk_from_inner(linalg::dot(x, test_point))).collect(),
    ))
}

/// Cross kernels of every test input, one per test point.
pub fn cross_all(data: &Dataset, tests: &Dataset) -> Result<Vec<KernelCross>> {
    check_len("test dimension", data.d(), tests.d())?;
    let k = apply_ntk(linalg::gram_rows(tests.inputs(), tests.n(), data.inputs(), data.n(), data.d()));
    Ok((0..tests.n())
        .map(|t| KernelCross((0..data.n()).map(|i| k[(t, i)]).collect()))
        .collect())
}

/// Activation pattern `1{w_r . x_i >= 0}` as an `n x m` 0/1 matrix.
fn activation_pattern(net: &NetworkState, data: &Dataset) -> Mat<f64> {
    let (m, d, n) = (net.width(), net.d(), data.n());
    let w: Vec<f64> = net.weights().iter().map(|&v| f64::from(v)).collect();
    let x = MatRef::from_row_major_slice(data.inputs(), n, d);
    let wr = MatRef::from_row_major_slice(&w, m, d);
    let mut pre = Mat::<f64>::zeros(n, m);
    matmul(pre.as_mut(), Accum::Replace, x, wr.transpose(), 1.0, Par::Seq);
    Mat::from_fn(n, m, |i, r| if pre[(i, r)] >= 0.0 { 1.0 } else { 0.0 })
}

/// Finite-width kernel `(1/m) <x_i, x_j> #{r : both active}` of a network
/// whose second layer is fixed to `+-1`, plus the `tests x train` block
/// when test points are given.
pub fn empirical_kernel(
    net: &NetworkState,
    data: &Dataset,
    tests: Option<&Dataset>,
) -> Result<(KernelMatrix, Option<Mat<f64>>)> {
    check_len("input dimension", net.d(), data.d())?;
    let m = net.width() as f64;
    let pattern = activation_pattern(net, data);
    let n = data.n();
    let inner = linalg::gram_rows(data.inputs(), n, data.inputs(), n, data.d());
    let mut shared = Mat::<f64>::zeros(n, n);
    matmul(shared.as_mut(), Accum::Replace, pattern.as_ref(), pattern.transpose(), 1.0, Par::Seq);
    let k = Mat::from_fn(n, n, |i, j| inner[(i, j)] * shared[(i, j)] / m);
    let train = KernelMatrix::from_matrix(k)?;
    let cross = match tests {
        None => None,
        Some(t) => {
            check_len("test dimension", net.d(), t.d())?;
            let tp = activation_pattern(net, t);
            let inner = linalg::gram_rows(t.inputs(), t.n(), data.inputs(), n, data.d());
            let mut shared = Mat::<f64>::zeros(t.n(), n);
            matmul(shared.as_mut(), Accum::Replace, tp.as_ref(), pattern.transpose(), 1.0, Par::Seq);
            Some(Mat::from_fn(t.n(), n, |i, j| inner[(i, j)] * shared[(i, j)] / m))
        }
    };
    Ok((train, cross))
}

/// Spectral norm of the difference of two Gram matrices of equal size.
pub fn spectral_distance(a: &KernelMatrix, b: &KernelMatrix) -> Result<f64> {
    check_len("kernel size", a.n(), b.n())?;
    let diff = Mat::from_fn(a.n(), a.n(), |i, j| a.get(i, j) - b.get(i, j));
    linalg::symmetric_spectral_norm(diff.as_ref())
}
