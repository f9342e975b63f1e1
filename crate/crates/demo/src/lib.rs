//! WebAssembly entry points for the static page in `www/`.
//!
//! Each operation has a plain Rust form returning a typed result, used by the
//! native tests, and a `#[wasm_bindgen]` wrapper that flattens it into a
//! `Float64Array` for the page to plot.

use ntk_influence::data::random_centers;
use ntk_influence::dynamics::TrackingMode;
use ntk_influence::experiments::{self, DataSpec, Experiment, MixtureParams, Params, SweepRow};
use ntk_influence::kernel::{self, ntk_from_inner};
use ntk_influence::{linalg, network, Dataset, Result};
use wasm_bindgen::prelude::*;

/// Largest training set the page may ask for; keeps each call interactive.
pub const MAX_POINTS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair {
    pub inner: f64,
    pub analytic: f64,
    pub empirical: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelComparison {
    pub pairs: Vec<KernelPair>,
    pub spectral_distance: f64,
}

fn check_size(n: usize) -> Result<()> {
    if n < 2 || n > MAX_POINTS {
        return Err(ntk_influence::Error::Parameter(format!("point count {n} outside 2..={MAX_POINTS}")));
    }
    Ok(())
}

/// Off-diagonal entries of the analytic kernel and of a width-`m` network's
/// kernel at initialization on `n` random unit vectors in `dim` dimensions.
pub fn compare_kernels(n: usize, dim: usize, width: usize, seed: u64) -> Result<KernelComparison> {
    check_size(n)?;
    let rows = random_centers(n, dim, seed);
    let data = Dataset::from_rows(rows, vec![1.0; n])?;
    let net = network::init(width, dim, 1.0, seed.wrapping_add(1))?;
    let (empirical, _) = kernel::empirical_kernel(&net, &data, None)?;
    let analytic = kernel::gram(&data)?;
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let inner = linalg::dot(data.row(i), data.row(j));
            pairs.push(KernelPair {
                inner,
                analytic: ntk_from_inner(inner),
                empirical: empirical.get(i, j),
            });
        }
    }
    Ok(KernelComparison {
        spectral_distance: kernel::spectral_distance(&empirical, &analytic)?,
        pairs,
    })
}

fn mixture_params(base: Experiment, clusters: usize, n_train: usize, n_test: usize) -> Params {
    let mut p = Params::defaults(base, std::path::Path::new("."));
    p.data = DataSpec::Mixture(MixtureParams {
        clusters,
        dim: 20,
        radius: 0.5,
        proportions: Vec::new(),
    });
    p.n_train = n_train;
    p.n_test = n_test;
    p
}

/// Mean IHVP error rate and its lower bound for `lambda = 2^-4 .. 2^4` on a
/// synthetic mixture.
pub fn sweep(n_train: usize, clusters: usize, seed: u64) -> Result<Vec<SweepRow>> {
    check_size(n_train)?;
    let p = mixture_params(Experiment::Fig2LambdaSweep, clusters, n_train, 20);
    let (train, test) = p.datasets(seed)?;
    experiments::lambda_sweep(&train, &test, &p.lambdas)
}

/// Times and the share of test points whose most influential training point
/// carries a flipped label.
pub fn noise_trace(n_train: usize, noise: f64, leave_one_out: bool, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_size(n_train)?;
    let mut p = mixture_params(Experiment::Fig7LabelNoise, 10, n_train, 40);
    p.noise = noise;
    p.n_times = 30;
    p.tracking = if leave_one_out { TrackingMode::LeaveOneOut } else { TrackingMode::LabelRemoval };
    p.validate(Experiment::Fig7LabelNoise)?;
    let (train, test) = p.datasets(seed)?;
    let times = p.times()?;
    let trace = experiments::tracking(&train, &test, &times, p.tracking)?;
    let share = trace.noise_fraction.unwrap_or_default();
    Ok((trace.times, share))
}

fn js(e: ntk_influence::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `[distance, s_0, analytic_0, empirical_0, s_1, ...]`.
#[wasm_bindgen(js_name = compareKernels)]
pub fn compare_kernels_js(n: usize, dim: usize, width: usize, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    let c = compare_kernels(n, dim, width, seed.into()).map_err(js)?;
    let mut out = vec![c.spectral_distance];
    out.extend(c.pairs.iter().flat_map(|p| [p.inner, p.analytic, p.empirical]));
    Ok(out)
}

/// `[lambda_0, lower_bound_0, mean_error_rate_0, lambda_1, ...]`.
#[wasm_bindgen(js_name = lambdaSweep)]
pub fn sweep_js(n_train: usize, clusters: usize, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    let rows = sweep(n_train, clusters, seed.into()).map_err(js)?;
    Ok(rows.iter().flat_map(|r| [r.lambda, r.lower_bound, r.mean_error_rate]).collect())
}

/// `[t_0, share_0, t_1, share_1, ...]`.
#[wasm_bindgen(js_name = noiseTrace)]
pub fn noise_trace_js(n_train: usize, noise: f64, leave_one_out: bool, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    let (t, s) = noise_trace(n_train, noise, leave_one_out, seed.into()).map_err(js)?;
    Ok(t.iter().zip(&s).flat_map(|(t, s)| [*t, *s]).collect())
}
