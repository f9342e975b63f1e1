//! Closed-form gradient-flow trajectory of kernel regression without
//! regularization, `f(x; t) = k(x)^T K^{-1} (I - exp(-(2t/n) K)) Y`, and
//! influence tracked along it.

use std::io::Write;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{check_index, check_len, Error, Result};
use crate::kernel::{self, KernelCross, KernelMatrix};
use crate::linalg;
use crate::ridge;

/// `(1 - exp(-c lambda)) / lambda` with `c = 2t/n`, stable for small `c lambda`.
#[inline]
fn filter(lambda: f64, c: f64) -> f64 {
    -(-c * lambda).exp_m1() / lambda
}

/// Eigendecomposition of a (jittered) training kernel with the labels
/// projected on its eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralDynamics {
    values: Vec<f64>,
    vectors: Mat<f64>,
    projected_labels: Vec<f64>,
    clock_n: usize,
    jitter: f64,
}

impl SpectralDynamics {
    /// Dynamics on `kernel` with the time constant `2t/n`, `n = kernel.n()`.
    pub fn new(kernel: &KernelMatrix, labels: &[f64]) -> Result<Self> {
        Self::with_clock(kernel.values(), kernel.trace(), labels, kernel.n())
    }

    /// Dynamics on a raw symmetric matrix with an explicit clock size, used
    /// for leave-one-out runs that keep the full run's `2t/n`.
    fn with_clock(k: MatRef<'_, f64>, trace: f64, labels: &[f64], clock_n: usize) -> Result<Self> {
        let n = k.nrows();
        check_len("labels", n, labels.len())?;
        let (mut values, vectors) = linalg::symmetric_eigen(k)?;
        let jitter = if values[0] < ridge::RIDGELESS_EIG_FLOOR {
            ridge::RIDGELESS_JITTER * trace / n as f64
        } else {
            0.0
        };
        values.iter_mut().for_each(|v| *v += jitter);
        if values[0] <= 0.0 {
            return Err(Error::Conditioning {
                module: "dynamics",
                lambda_min: values[0] - jitter,
                detail: format!("kernel stays singular after jitter {jitter:e}"),
            });
        }
        let projected_labels = (0..n).map(|k| linalg::dot(&linalg::column(vectors.as_ref(), k), labels)).collect();
        Ok(Self {
            values,
            vectors,
            projected_labels,
            clock_n,
            jitter,
        })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Eigenvalues after jitter, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    /// `U^T k` for a cross-kernel vector `k`.
    pub fn project(&self, cross: &[f64]) -> Result<Vec<f64>> {
        check_len("cross kernel", self.n(), cross.len())?;
        Ok((0..self.n()).map(|k| linalg::dot(&linalg::column(self.vectors.as_ref(), k), cross)).collect())
    }

    /// Prediction at time `t` from a projected cross kernel.
    pub fn predict_projected(&self, projected: &[f64], t: f64) -> f64 {
        let c = 2.0 * t / self.clock_n as f64;
        projected
            .iter()
            .zip(&self.values)
            .zip(&self.projected_labels)
            .map(|((p, l), y)| p * filter(*l, c) * y)
            .sum()
    }

    /// Predictions `out[(k, j)]` at every time `times[k]` for the projected
    /// cross kernels in the columns of `projected`.
    pub fn predict_grid(&self, projected: MatRef<'_, f64>, times: &[f64]) -> Mat<f64> {
        let c = |t: f64| 2.0 * t / self.clock_n as f64;
        let weights = Mat::from_fn(times.len(), self.n(), |k, e| filter(self.values[e], c(times[k])) * self.projected_labels[e]);
        let mut out = Mat::zeros(times.len(), projected.ncols());
        matmul(out.as_mut(), Accum::Replace, weights.as_ref(), projected, 1.0, Par::Seq);
        out
    }

    pub fn predict(&self, cross: &KernelCross, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.predict_projected(&self.project(cross.values())?, t))
    }

    /// Weight of every training label in the prediction at time `t`:
    /// `f(x; t) = sum_i w_i y_i` with `w = U diag(phi) U^T k`.
    pub fn label_weights(&self, cross: &KernelCross, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        let c = 2.0 * t / self.clock_n as f64;
        let mut p = self.project(cross.values())?;
        p.iter_mut().zip(&self.values).for_each(|(p, l)| *p *= filter(*l, c));
        Ok(linalg::matvec(self.vectors.as_ref(), &p))
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("time must be nonnegative, got {t}")));
    }
    Ok(())
}

/// `f(x_te; t)` for one test point. `n` sets the time constant `2t/n`.
pub fn predict_at_time(kernel: &KernelMatrix, cross: &KernelCross, labels: &[f64], t: f64, n: usize) -> Result<f64> {
    check_time(t)?;
    let dynamics = SpectralDynamics::with_clock(kernel.values(), kernel.trace(), labels, n)?;
    dynamics.predict(cross, t)
}

/// Leave-one-out dynamics: the kernel without point `i`, on the full run's clock.
pub fn loo_dynamics(kernel: &KernelMatrix, labels: &[f64], i: usize) -> Result<SpectralDynamics> {
    let n = kernel.n();
    check_index(i, n)?;
    if n < 2 {
        return Err(Error::DegenerateRemoval);
    }
    let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let sub = linalg::principal_submatrix(kernel.values(), &keep);
    let sub_labels: Vec<f64> = keep.iter().map(|&j| labels[j]).collect();
    let trace = keep.iter().map(|&j| kernel.get(j, j)).sum();
    SpectralDynamics::with_clock(sub.as_ref(), trace, &sub_labels, n)
}

/// `1/2 (f^{\i}(x_te; t) - y_te)^2 - 1/2 (f(x_te; t) - y_te)^2`.
pub fn influence_at_time(
    kernel: &KernelMatrix,
    cross: &KernelCross,
    labels: &[f64],
    y_te: f64,
    t: f64,
    i: usize,
) -> Result<f64> {
    let full = SpectralDynamics::new(kernel, labels)?.predict(cross, t)?;
    let keep: Vec<usize> = (0..kernel.n()).filter(|&j| j != i).collect();
    let loo = loo_dynamics(kernel, labels, i)?.predict(&cross.select(&keep), t)?;
    Ok(0.5 * (loo - y_te).powi(2) - 0.5 * (full - y_te).powi(2))
}

/// How the influence of a training point is measured along the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingMode {
    /// Loss change when the point is removed and the dynamics rerun.
    #[default]
    LeaveOneOut,
    /// First-order loss change when the point's label is zeroed,
    /// `-w_i(t) y_i (f(x_te; t) - y_te)`.
    LabelRemoval,
}

/// `count` log-spaced times from `start` to `end` inclusive.
pub fn geometric_grid(start: f64, end: f64, count: usize) -> Result<Vec<f64>> {
    if !(start > 0.0 && end > start) || count < 2 {
        return Err(Error::Parameter("a geometric grid needs 0 < start < end and two points".into()));
    }
    let ratio = (end / start).ln() / (count - 1) as f64;
    Ok((0..count).map(|k| start * (ratio * k as f64).exp()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsTrace {
    pub times: Vec<f64>,
    /// `predictions[t][j]` for time index `t` and test point `j`.
    pub predictions: Vec<Vec<f64>>,
    pub top_influencer: Vec<Vec<usize>>,
    pub top_influence: Vec<Vec<f64>>,
    /// Per time, the fraction of test points whose top influencer is noisy.
    pub noise_fraction: Option<Vec<f64>>,
    pub is_noise: Option<Vec<Vec<bool>>>,
}

impl DynamicsTrace {
    /// Index of the time with the largest noise fraction (first on ties).
    pub fn noise_peak(&self) -> Option<usize> {
        let nf = self.noise_fraction.as_ref()?;
        let mut best = 0;
        for (k, v) in nf.iter().enumerate() {
            if *v > nf[best] {
                best = k;
            }
        }
        Some(best)
    }

    /// Columns `time,test_id,prediction,top_influencer,is_noise`; `is_noise`
    /// is empty when clean labels are unknown.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "test_id", "prediction", "top_influencer", "is_noise"])
            .map_err(crate::influence::csv_err)?;
        for (k, t) in self.times.iter().enumerate() {
            for j in 0..self.predictions[k].len() {
                let noise = self
                    .is_noise
                    .as_ref()
                    .map(|v| u8::from(v[k][j]).to_string())
                    .unwrap_or_default();
                w.write_record([
                    format!("{t:e}"),
                    j.to_string(),
                    format!("{:e}", self.predictions[k][j]),
                    self.top_influencer[k][j].to_string(),
                    noise,
                ])
                .map_err(crate::influence::csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Most influential training point per (time, test point); ties go to the
/// lowest index.
pub fn track_top_influencers(
    kernel: &KernelMatrix,
    data: &Dataset,
    tests: &Dataset,
    times: &[f64],
    mode: TrackingMode,
) -> Result<DynamicsTrace> {
    let n = data.n();
    check_len("kernel size", n, kernel.n())?;
    if tests.n() == 0 {
        return Err(Error::Parameter("empty test set".into()));
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] <= 0.0 {
        return Err(Error::Parameter("time grid must be positive and increasing".into()));
    }
    if n < 2 {
        return Err(Error::DegenerateRemoval);
    }
    let (nt, nte) = (times.len(), tests.n());
    let labels = data.labels();
    let y_te = tests.labels();
    let crosses = kernel::cross_all(data, tests)?;
    let full = SpectralDynamics::new(kernel, labels)?;
    let projected: Vec<Vec<f64>> = crosses.iter().map(|c| full.project(c.values())).collect::<Result<_>>()?;
    let predictions: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| projected.iter().map(|p| full.predict_projected(p, t)).collect())
        .collect();

    // influence[i][k * nte + j] for training point i, time k, test j.
    let influence: Vec<Vec<f64>> = match mode {
        TrackingMode::LeaveOneOut => crate::par::map_range(n, |i| loo_influences(kernel, labels, &crosses, y_te, times, &predictions, i))
            .into_iter()
            .collect::<Result<_>>()?,
        TrackingMode::LabelRemoval => {
            let mut out = vec![vec![0.0; nt * nte]; n];
            for (k, &t) in times.iter().enumerate() {
                for (j, c) in crosses.iter().enumerate() {
                    let w = full.label_weights(c, t)?;
                    let resid = predictions[k][j] - y_te[j];
                    for i in 0..n {
                        out[i][k * nte + j] = -w[i] * labels[i] * resid;
                    }
                }
            }
            out
        }
    };

    let mut top_influencer = vec![vec![0usize; nte]; nt];
    let mut top_influence = vec![vec![0.0; nte]; nt];
    for k in 0..nt {
        for j in 0..nte {
            let mut best = 0;
            for i in 1..n {
                if influence[i][k * nte + j].abs() > influence[best][k * nte + j].abs() {
                    best = i;
                }
            }
            top_influencer[k][j] = best;
            top_influence[k][j] = influence[best][k * nte + j];
        }
    }
    let (noise_fraction, is_noise) = match data.clean_labels() {
        None => (None, None),
        Some(_) => {
            let flags: Vec<Vec<bool>> = top_influencer
                .iter()
                .map(|row| row.iter().map(|&i| data.is_noisy(i)).collect())
                .collect();
            let frac = flags
                .iter()
                .map(|row| row.iter().filter(|&&b| b).count() as f64 / nte as f64)
                .collect();
            (Some(frac), Some(flags))
        }
    };
    Ok(DynamicsTrace {
        times: times.to_vec(),
        predictions,
        top_influencer,
        top_influence,
        noise_fraction,
        is_noise,
    })
}

fn loo_influences(
    kernel: &KernelMatrix,
    labels: &[f64],
    crosses: &[KernelCross],
    y_te: &[f64],
    times: &[f64],
    predictions: &[Vec<f64>],
    i: usize,
) -> Result<Vec<f64>> {
    let n = kernel.n();
    let nte = crosses.len();
    let dyn_i = loo_dynamics(kernel, labels, i)?;
    // Projected cross kernels of all test points in one product.
    let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let k_te = Mat::from_fn(n - 1, nte, |a, j| crosses[j].values()[keep[a]]);
    let mut proj = Mat::<f64>::zeros(n - 1, nte);
    matmul(proj.as_mut(), Accum::Replace, dyn_i.vectors.transpose(), k_te.as_ref(), 1.0, Par::Seq);
    let grid = dyn_i.predict_grid(proj.as_ref(), times);
    let mut out = vec![0.0; times.len() * nte];
    for j in 0..nte {
        for k in 0..times.len() {
            let (loo, full) = (grid[(k, j)], predictions[k][j]);
            out[k * nte + j] = 0.5 * (loo - y_te[j]).powi(2) - 0.5 * (full - y_te[j]).powi(2);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{cross, gram};
    use crate::ridge::RidgeModel;
    use rand::Rng as _;
    use std::sync::Arc;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = crate::rng::from_seed(seed);
        let rows = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let labels = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        Dataset::from_rows(rows, labels).unwrap()
    }

    /// Classical RK4 on `du/dt = -(2/n) K (u - Y)`, `dg/dt = -(2/n) k^T (u - Y)`.
    fn rk4(k: &KernelMatrix, c: &[f64], y: &[f64], t: f64, steps: usize) -> f64 {
        let n = y.len();
        let h = t / steps as f64;
        let rate = |u: &[f64]| -> (Vec<f64>, f64) {
            let r: Vec<f64> = u.iter().zip(y).map(|(a, b)| a - b).collect();
            let du = linalg::matvec(k.values(), &r).into_iter().map(|v| -2.0 / n as f64 * v).collect();
            (du, -2.0 / n as f64 * linalg::dot(c, &r))
        };
        let mut u = vec![0.0; n];
        let mut g = 0.0;
        for _ in 0..steps {
            let (k1, g1) = rate(&u);
            let u2: Vec<f64> = u.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
            let (k2, g2) = rate(&u2);
            let u3: Vec<f64> = u.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
            let (k3, g3) = rate(&u3);
            let u4: Vec<f64> = u.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
            let (k4, g4) = rate(&u4);
            for idx in 0..n {
                u[idx] += h / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
            }
            g += h / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4);
        }
        g
    }

    #[test]
    fn matches_ode_integration() {
        let data = random_data(20, 5, 1);
        let test = random_data(1, 5, 2);
        let k = gram(&data).unwrap();
        let c = cross(&data, test.row(0)).unwrap();
        let dynamics = SpectralDynamics::new(&k, data.labels()).unwrap();
        for t in [1.0, 10.0, 100.0] {
            let ode = rk4(&k, c.values(), data.labels(), t, 4000);
            assert!((dynamics.predict(&c, t).unwrap() - ode).abs() < 1e-6, "t = {t}");
        }
    }

    #[test]
    fn starts_at_zero_and_converges_to_interpolant() {
        let data = random_data(15, 6, 3);
        let test = random_data(2, 6, 4);
        let k = Arc::new(gram(&data).unwrap());
        for j in 0..2 {
            let c = cross(&data, test.row(j)).unwrap();
            assert_eq!(predict_at_time(&k, &c, data.labels(), 0.0, 15).unwrap(), 0.0);
            let t_inf = 1e6 * 15.0 / k.lambda_min();
            let late = predict_at_time(&k, &c, data.labels(), t_inf, 15).unwrap();
            let ridgeless = RidgeModel::fit(k.clone(), data.labels(), 0.0).unwrap().predict(&c).unwrap();
            assert!((late - ridgeless).abs() < 1e-6);
        }
    }

    #[test]
    fn influence_along_the_trajectory() {
        let data = random_data(12, 5, 5);
        let test = random_data(1, 5, 6);
        let (x, y) = (test.row(0), test.labels()[0]);
        let k = gram(&data).unwrap();
        let c = cross(&data, x).unwrap();
        assert_eq!(influence_at_time(&k, &c, data.labels(), y, 0.0, 3).unwrap(), 0.0);
        // Mid-trajectory: two independent evaluations composed by hand.
        let t = 7.5;
        let rest = data.without(3).unwrap();
        let k_rest = gram(&rest).unwrap();
        let c_rest = cross(&rest, x).unwrap();
        let loo = predict_at_time(&k_rest, &c_rest, rest.labels(), t, 12).unwrap();
        let full = predict_at_time(&k, &c, data.labels(), t, 12).unwrap();
        let by_hand = 0.5 * (loo - y).powi(2) - 0.5 * (full - y).powi(2);
        assert!((influence_at_time(&k, &c, data.labels(), y, t, 3).unwrap() - by_hand).abs() < 1e-12);
        // Late times approach the exact ridgeless influence.
        let model = RidgeModel::fit(Arc::new(k.clone()), data.labels(), 0.0).unwrap();
        let exact = crate::influence::influence_exact(&model, &c, y, 3).unwrap();
        let late = influence_at_time(&k, &c, data.labels(), y, 1e7 * 12.0 / k.lambda_min(), 3).unwrap();
        assert!((late - exact).abs() < 1e-5);
    }

    #[test]
    fn tracking_basics() {
        let data = random_data(10, 4, 7);
        let tests = random_data(3, 4, 8);
        let k = gram(&data).unwrap();
        let all_flipped = crate::data::flip_labels(&data, 1.0, 1).unwrap();
        let times = geometric_grid(0.1, 100.0, 5).unwrap();
        let trace = track_top_influencers(&k, &all_flipped, &tests, &times, TrackingMode::LeaveOneOut).unwrap();
        assert!(trace.noise_fraction.as_ref().unwrap().iter().all(|&v| v == 1.0));
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("time,test_id,prediction,top_influencer,is_noise\n"));
        assert_eq!(text.lines().count(), 1 + 5 * 3);
        assert!(track_top_influencers(&k, &data, &tests, &[1.0, 0.5], TrackingMode::LeaveOneOut).is_err());
    }

    #[test]
    fn late_tracking_matches_exact_ridgeless_influence() {
        let data = random_data(14, 5, 9);
        let tests = random_data(4, 5, 10);
        let k = gram(&data).unwrap();
        let t = 1e7 * 14.0 / k.lambda_min();
        let trace = track_top_influencers(&k, &data, &tests, &[t], TrackingMode::LeaveOneOut).unwrap();
        let model = RidgeModel::fit(Arc::new(k.clone()), data.labels(), 0.0).unwrap();
        for j in 0..4 {
            let c = cross(&data, tests.row(j)).unwrap();
            let recs = crate::influence::records_for_test(&model, &c, tests.labels()[j], j).unwrap();
            let mut best = 0;
            for r in &recs {
                if r.i_ntk.abs() > recs[best].i_ntk.abs() {
                    best = r.i;
                }
            }
            assert_eq!(trace.top_influencer[0][j], best);
        }
    }

    #[test]
    fn label_removal_weights_reproduce_prediction() {
        let data = random_data(9, 4, 11);
        let test = random_data(1, 4, 12);
        let k = gram(&data).unwrap();
        let c = cross(&data, test.row(0)).unwrap();
        let dynamics = SpectralDynamics::new(&k, data.labels()).unwrap();
        let w = dynamics.label_weights(&c, 3.0).unwrap();
        let f = linalg::dot(&w, data.labels());
        assert!((f - dynamics.predict(&c, 3.0).unwrap()).abs() < 1e-12);
    }
}
