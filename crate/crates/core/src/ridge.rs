//! Kernel ridge regression with the explicit regularized inverse, which
//! gives every leave-one-out refit in closed form.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use faer::{Mat, MatRef};

use crate::error::{check_index, check_len, Error, Result};
use crate::kernel::{KernelCross, KernelMatrix};
use crate::linalg::{self, Cholesky};
use crate::matrix_io;

/// Below this least eigenvalue an unregularized fit gets diagonal jitter.
pub const RIDGELESS_EIG_FLOOR: f64 = 1e-12;
/// Jitter added to an unregularized, near-singular kernel, times `tr(K)/n`.
pub const RIDGELESS_JITTER: f64 = 1e-10;

const MODEL_MAGIC: &[u8; 8] = b"NTKRIDG1";

/// Diagonal jitter an unregularized fit of `kernel` would use.
pub fn ridgeless_jitter(kernel: &KernelMatrix) -> f64 {
    if kernel.lambda_min() < RIDGELESS_EIG_FLOOR {
        RIDGELESS_JITTER * kernel.trace() / kernel.n() as f64
    } else {
        0.0
    }
}

/// Shift that makes `K + shift I` the system actually solved for `lambda`.
pub(crate) fn effective_shift(kernel: &KernelMatrix, lambda: f64, module: &'static str) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    if lambda > 0.0 {
        return Ok(lambda);
    }
    let jitter = ridgeless_jitter(kernel);
    if kernel.lambda_min() + jitter <= 0.0 {
        return Err(Error::Conditioning {
            module,
            lambda_min: kernel.lambda_min(),
            detail: format!("kernel stays singular after jitter {jitter:e}"),
        });
    }
    Ok(jitter)
}

#[derive(Debug, Clone)]
pub struct RidgeModel {
    kernel: Arc<KernelMatrix>,
    lambda: f64,
    shift: f64,
    beta: Vec<f64>,
    inv: Mat<f64>,
    labels: Vec<f64>,
    fitted: Vec<f64>,
}

impl RidgeModel {
    /// Solves `(K + lambda I) beta = Y`. With `lambda = 0` the kernel must be
    /// positive definite, up to the ridgeless jitter.
    pub fn fit(kernel: Arc<KernelMatrix>, labels: &[f64], lambda: f64) -> Result<Self> {
        let n = kernel.n();
        check_len("labels", n, labels.len())?;
        let shift = effective_shift(&kernel, lambda, "ridge")?;
        let system = linalg::shifted(kernel.values(), shift);
        let chol = Cholesky::new(system.as_ref(), "ridge").map_err(|_| Error::Conditioning {
            module: "ridge",
            lambda_min: kernel.lambda_min(),
            detail: format!("K + {shift:e} I is not numerically positive definite"),
        })?;
        let mut inv = chol.inverse();
        for j in 0..n {
            for i in j + 1..n {
                inv[(j, i)] = inv[(i, j)];
            }
        }
        let beta = chol.solve(labels);
        let fitted = linalg::matvec(kernel.values(), &beta);
        Ok(Self {
            kernel,
            lambda,
            shift,
            beta,
            inv,
            labels: labels.to_vec(),
            fitted,
        })
    }

    pub fn n(&self) -> usize {
        self.beta.len()
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.kernel
    }

    pub fn kernel_arc(&self) -> &Arc<KernelMatrix> {
        &self.kernel
    }

    /// Regularization strength as requested.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Diagonal shift actually applied: `lambda`, or the jitter when `lambda = 0`.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Jitter added on top of a zero `lambda` (0 otherwise).
    pub fn jitter(&self) -> f64 {
        if self.lambda == 0.0 {
            self.shift
        } else {
            0.0
        }
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// `M = (K + lambda I)^{-1}`.
    pub fn inverse(&self) -> MatRef<'_, f64> {
        self.inv.as_ref()
    }

    /// Fitted values `f(x_i) = (K beta)_i` on the training inputs.
    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }

    pub fn predict(&self, cross: &KernelCross) -> Result<f64> {
        check_len("cross kernel", self.n(), cross.len())?;
        Ok(linalg::dot(cross.values(), &self.beta))
    }

    /// `alpha_i = (M k_te)_i` for every training point.
    pub fn alphas(&self, cross: &KernelCross) -> Result<Vec<f64>> {
        check_len("cross kernel", self.n(), cross.len())?;
        Ok(linalg::matvec(self.inverse(), cross.values()))
    }

    /// `alpha_i` for one training point.
    pub fn alpha(&self, cross: &KernelCross, i: usize) -> Result<f64> {
        check_len("cross kernel", self.n(), cross.len())?;
        check_index(i, self.n())?;
        Ok(linalg::dot(&linalg::column(self.inverse(), i), cross.values()))
    }

    fn removable(&self, i: usize) -> Result<f64> {
        check_index(i, self.n())?;
        if self.n() < 2 {
            return Err(Error::DegenerateRemoval);
        }
        let mii = self.inv[(i, i)];
        if !(mii > 0.0) {
            return Err(Error::Conditioning {
                module: "ridge",
                lambda_min: self.kernel.lambda_min(),
                detail: format!("diagonal of the inverse at {i} is {mii:e}"),
            });
        }
        Ok(mii)
    }

    /// Prediction of the model refit without training point `i`:
    /// `k_te^T (M - m_i m_i^T / M_ii) Y = f - alpha_i beta_i / M_ii`.
    pub fn loo_predict(&self, cross: &KernelCross, i: usize) -> Result<f64> {
        let mii = self.removable(i)?;
        let f = self.predict(cross)?;
        let alpha = self.alpha(cross, i)?;
        Ok(f - alpha * self.beta[i] / mii)
    }

    /// `f^{\i}(x_i) - y_i = -beta_i / M_ii`.
    pub fn loo_residual(&self, i: usize) -> Result<f64> {
        let mii = self.removable(i)?;
        Ok(-self.beta[i] / mii)
    }

    /// `A_i = e_i^T K (K + lambda I)^{-1} e_i = 1 - lambda M_ii`.
    pub fn self_influence(&self, i: usize) -> Result<f64> {
        check_index(i, self.n())?;
        Ok(1.0 - self.shift * self.inv[(i, i)])
    }

    /// Column `i` of `K (K + lambda I)^{-1} = I - lambda M`.
    pub fn smoother_column(&self, i: usize) -> Result<Vec<f64>> {
        check_index(i, self.n())?;
        let mut col = linalg::column(self.inverse(), i);
        col.iter_mut().for_each(|v| *v *= -self.shift);
        col[i] += 1.0;
        Ok(col)
    }

    /// Writes `lambda`, `beta`, `Y` in the binary matrix format, preceded by a
    /// magic tag and the SHA-256 of the kernel they were fitted on.
    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&self.kernel.hash())?;
        matrix_io::write_matrix(out, 1, 2, &[self.lambda, self.shift])?;
        matrix_io::write_matrix(out, self.n(), 1, &self.beta)?;
        matrix_io::write_matrix(out, self.n(), 1, &self.labels)?;
        Ok(())
    }

    /// Reads a saved model and refits it on `kernel`, which must hash to the
    /// stored value; the refit coefficients must reproduce the stored ones.
    pub fn read<R: Read>(input: &mut R, kernel: Arc<KernelMatrix>) -> Result<Self> {
        let mut head = [0u8; 40];
        input.read_exact(&mut head).map_err(|_| Error::Parse {
            offset: 0,
            message: "truncated model header".into(),
        })?;
        if &head[..8] != MODEL_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "not a ridge model file".into(),
            });
        }
        if head[8..] != kernel.hash() {
            return Err(Error::State("model was fitted on a different kernel".into()));
        }
        let mut offset = 40;
        let (_, _, params) = matrix_io::read_matrix(input, &mut offset)?;
        let (_, _, beta) = matrix_io::read_matrix(input, &mut offset)?;
        let (_, _, labels) = matrix_io::read_matrix(input, &mut offset)?;
        let lambda = *params.first().ok_or_else(|| Error::Parse {
            offset: 40,
            message: "missing lambda".into(),
        })?;
        let model = Self::fit(kernel, &labels, lambda)?;
        check_len("stored coefficients", model.n(), beta.len())?;
        let drift = model
            .beta
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-300))
            .fold(0.0, f64::max);
        if drift > 1e-9 {
            return Err(Error::State(format!("refit coefficients differ from stored ones by {drift:e}")));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, kernel: Arc<KernelMatrix>) -> Result<Self> {
        Self::read(&mut std::io::BufReader::new(std::fs::File::open(path)?), kernel)
    }
}
