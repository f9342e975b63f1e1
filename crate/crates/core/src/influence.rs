//! Exact leave-one-out influence under kernel ridge regression, the
//! inverse-Hessian-vector-product estimator, and bounds on their gap.
//!
//! With `M = (K + lambda I)^{-1}`, `alpha = (M k_te)_i` and the leave-one-out
//! residual `r_i = f^{\i}(x_i) - y_i`:
//!
//! * exact influence `I = alpha (f - y_te) r_i + alpha^2 r_i^2 / 2`,
//! * estimator `I_hat = alpha (f - y_te) (f(x_i) - y_i) = (1 - A_i) alpha (f - y_te) r_i`.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::data::Dataset;
use crate::error::{check_index, check_len, Error, Result};
use crate::kernel::{self, KernelCross};
use crate::linalg::{self, Cholesky};
use crate::network::NetworkState;
use crate::ridge::RidgeModel;

/// Pairs with `|I|` below this are left out of error-rate aggregates.
pub const ZERO_INFLUENCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub alpha: f64,
    /// `alpha (f(x_te) - y_te) r_i`.
    pub term1: f64,
    /// `alpha^2 r_i^2 / 2`, never negative.
    pub term2: f64,
}

/// One (training point, test point) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub i: usize,
    pub test_id: usize,
    pub i_ntk: f64,
    pub i_hat: f64,
    pub alpha: f64,
    pub a_i: f64,
    pub term1: f64,
    pub term2: f64,
    pub lower_bound: f64,
    /// `|i_ntk - i_hat| / |i_ntk|`; empty for near-zero influence.
    pub error_rate: Option<f64>,
}

impl InfluenceRecord {
    pub fn gap(&self) -> f64 {
        (self.i_ntk - self.i_hat).abs()
    }
}

pub const RECORD_COLUMNS: [&str; 10] = [
    "i", "test_id", "i_ntk", "i_hat", "alpha", "a_i", "term1", "term2", "lower_bound", "error_rate",
];

/// CSV with the columns of [`RECORD_COLUMNS`]; a skipped error rate is an empty cell.
pub fn write_records_csv<W: Write>(out: W, records: &[InfluenceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.i.to_string(),
            r.test_id.to_string(),
            format!("{:e}", r.i_ntk),
            format!("{:e}", r.i_hat),
            format!("{:e}", r.alpha),
            format!("{:e}", r.a_i),
            format!("{:e}", r.term1),
            format!("{:e}", r.term2),
            format!("{:e}", r.lower_bound),
            r.error_rate.map(|e| format!("{e:e}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(bytes: &[u8]) -> Result<Vec<InfluenceRecord>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize()
        .map(|row| row.map_err(csv_err))
        .collect()
}

pub fn write_records_json<W: Write>(out: W, records: &[InfluenceRecord]) -> Result<()> {
    Ok(serde_json::to_writer_pretty(out, records)?)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            offset: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn decompose(model: &RidgeModel, cross: &KernelCross, y_te: f64, i: usize) -> Result<Decomposition> {
    let alpha = model.alpha(cross, i)?;
    let r = model.loo_residual(i)?;
    let f = model.predict(cross)?;
    Ok(Decomposition {
        alpha,
        term1: alpha * (f - y_te) * r,
        term2: 0.5 * alpha * alpha * r * r,
    })
}

/// `1/2 (f^{\i}(x_te) - y_te)^2 - 1/2 (f(x_te) - y_te)^2`.
pub fn influence_exact(model: &RidgeModel, cross: &KernelCross, y_te: f64, i: usize) -> Result<f64> {
    let f = model.predict(cross)?;
    let loo = model.loo_predict(cross, i)?;
    Ok(0.5 * (loo - y_te).powi(2) - 0.5 * (f - y_te).powi(2))
}

/// `alpha (f(x_te) - y_te) (f(x_i) - y_i)` with the full-data residual at `x_i`.
pub fn influence_ihvp(model: &RidgeModel, cross: &KernelCross, y_te: f64, i: usize) -> Result<f64> {
    let alpha = model.alpha(cross, i)?;
    let f = model.predict(cross)?;
    Ok(alpha * (f - y_te) * (model.fitted()[i] - model.labels()[i]))
}

/// `lambda_min / (lambda_min + lambda)`, the least possible `A_i`.
pub fn lower_bound_ratio(model: &RidgeModel) -> f64 {
    let lmin = model.kernel().lambda_min().max(0.0);
    if lmin == 0.0 && model.shift() == 0.0 {
        return 1.0;
    }
    lmin / (lmin + model.shift())
}

/// `lambda_min / (lambda_min + lambda) |I| - term2`, a lower bound on `|I - I_hat|`.
pub fn error_lower_bound(model: &RidgeModel, record: &InfluenceRecord) -> f64 {
    lower_bound_ratio(model) * record.i_ntk.abs() - record.term2
}

/// `sqrt(gamma / (n^2 p_k)) |I| + term2`, an upper bound on `|I - I_hat|` for
/// points of a cluster with probability `p_k`.
pub fn error_upper_bound(record: &InfluenceRecord, gamma: f64, p_k: f64, n: usize) -> Result<f64> {
    if !(p_k > 0.0 && p_k <= 1.0) {
        return Err(Error::Parameter(format!("cluster probability {p_k} outside (0, 1]")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    let n = n as f64;
    Ok((gamma / (n * n * p_k)).sqrt() * record.i_ntk.abs() + record.term2)
}

/// `|i_ntk - i_hat| / |i_ntk|`, or `None` for near-zero influence.
pub fn error_rate(record: &InfluenceRecord) -> Option<f64> {
    (record.i_ntk.abs() >= ZERO_INFLUENCE).then(|| record.gap() / record.i_ntk.abs())
}

/// Smallest `gamma` for which `A_i^2 <= gamma ||alpha(x_i)||^2 / n` holds, where
/// `alpha(x_i) = (K + lambda I)^{-1} K e_i`.
pub fn gamma(model: &RidgeModel, i: usize) -> Result<f64> {
    let a = model.self_influence(i)?;
    let col = model.smoother_column(i)?;
    let norm_sq = linalg::dot(&col, &col);
    if norm_sq == 0.0 {
        return Err(Error::Conditioning {
            module: "influence",
            lambda_min: model.kernel().lambda_min(),
            detail: format!("smoother column {i} vanishes"),
        });
    }
    Ok(model.n() as f64 * a * a / norm_sq)
}

/// `eps_r` with `eps_r^2 = 2 r^2 + arccos(1 - 2 r^2)`. Since
/// `arccos(1 - 2 r^2) = 2 asin(r)`, the second form avoids cancellation.
pub fn eps_r(r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Parameter(format!("cluster radius {r} outside [0, 1]")));
    }
    Ok((2.0 * r * r + 2.0 * r.asin()).sqrt())
}

/// `sqrt(2) lambda_max eps_r / (1 - sqrt(2) eps_r)`, infinite when
/// `sqrt(2) eps_r >= 1`.
pub fn lambda_threshold(lambda_max: f64, eps_r: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * eps_r;
    if s >= 1.0 {
        f64::INFINITY
    } else {
        s * lambda_max / (1.0 - s)
    }
}

/// Inputs of the mixture-model upper bound for one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub gamma: f64,
    pub p_k: f64,
    pub eps_r: f64,
    pub lambda_threshold: f64,
}

impl BoundInputs {
    pub fn new(gamma: f64, p_k: f64, r: f64, lambda_max: f64) -> Result<Self> {
        let eps = eps_r(r)?;
        Ok(Self {
            gamma,
            p_k,
            eps_r: eps,
            lambda_threshold: lambda_threshold(lambda_max, eps),
        })
    }

    /// Whether `lambda` exceeds the threshold the bound is stated for.
    pub fn lambda_admissible(&self, lambda: f64) -> bool {
        lambda > self.lambda_threshold
    }
}

/// Every record of one test point, sharing one `M k_te` product.
pub fn records_for_test(
    model: &RidgeModel,
    cross: &KernelCross,
    y_te: f64,
    test_id: usize,
) -> Result<Vec<InfluenceRecord>> {
    if model.n() < 2 {
        return Err(Error::DegenerateRemoval);
    }
    let alphas = model.alphas(cross)?;
    let f = model.predict(cross)?;
    let ratio = lower_bound_ratio(model);
    (0..model.n())
        .map(|i| {
            let alpha = alphas[i];
            let r = model.loo_residual(i)?;
            let a_i = model.self_influence(i)?;
            let loo = f + alpha * r;
            let i_ntk = 0.5 * (loo - y_te).powi(2) - 0.5 * (f - y_te).powi(2);
            let i_hat = alpha * (f - y_te) * (model.fitted()[i] - model.labels()[i]);
            let term1 = alpha * (f - y_te) * r;
            let term2 = 0.5 * alpha * alpha * r * r;
            let mut record = InfluenceRecord {
                i,
                test_id,
                i_ntk,
                i_hat,
                alpha,
                a_i,
                term1,
                term2,
                lower_bound: ratio * i_ntk.abs() - term2,
                error_rate: None,
            };
            record.error_rate = error_rate(&record);
            Ok(record)
        })
        .collect()
}

/// Finite-width estimator for every training point: with the empirical
/// kernel `K_m`, `alpha_m = (K_m + lambda I)^{-1} k_m(x_te)` and the network
/// residuals. By the push-through identity this equals the parameter-space
/// form with `(J J^T + lambda I)^{-1}`.
pub fn influence_ihvp_empirical_all(
    net: &NetworkState,
    data: &Dataset,
    lambda: f64,
    test_point: &[f64],
    y_te: f64,
) -> Result<Vec<f64>> {
    if !net.is_trained() {
        return Err(Error::State("the estimator needs a trained network".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    check_len("test point", data.d(), test_point.len())?;
    let test = Dataset::from_flat_unit(test_point.to_vec(), vec![y_te], data.d())?;
    let (k, cross) = kernel::empirical_kernel(net, data, Some(&test))?;
    let cross = cross.expect("test block requested");
    let k_te: Vec<f64> = (0..data.n()).map(|j| cross[(0, j)]).collect();
    let chol = Cholesky::new(linalg::shifted(k.values(), lambda).as_ref(), "influence")?;
    let alphas = chol.solve(&k_te);
    let f_te = net.predict(test_point)?;
    let fitted = net.predict_all(data)?;
    Ok(alphas
        .iter()
        .zip(fitted.iter().zip(data.labels()))
        .map(|(a, (f, y))| a * (f_te - y_te) * (f - y))
        .collect())
}

pub fn influence_ihvp_empirical(
    net: &NetworkState,
    data: &Dataset,
    lambda: f64,
    test_point: &[f64],
    y_te: f64,
    i: usize,
) -> Result<f64> {
    check_index(i, data.n())?;
    Ok(influence_ihvp_empirical_all(net, data, lambda, test_point, y_te)?[i])
}

/// `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(ZERO_INFLUENCE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{cross, gram};
    use rand::Rng as _;
    use std::sync::Arc;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = crate::rng::from_seed(seed);
        let rows = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let labels = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        Dataset::from_rows(rows, labels).unwrap()
    }

    fn model(data: &Dataset, lambda: f64) -> RidgeModel {
        RidgeModel::fit(Arc::new(gram(data).unwrap()), data.labels(), lambda).unwrap()
    }

    #[test]
    fn decomposition_identities() {
        let data = random_data(25, 6, 1);
        let test = random_data(3, 6, 2);
        let m = model(&data, 0.8);
        for t in 0..3 {
            let c = cross(&data, test.row(t)).unwrap();
            let y = test.labels()[t];
            let records = records_for_test(&m, &c, y, t).unwrap();
            for (i, rec) in records.iter().enumerate() {
                let dec = decompose(&m, &c, y, i).unwrap();
                let exact = influence_exact(&m, &c, y, i).unwrap();
                let ihvp = influence_ihvp(&m, &c, y, i).unwrap();
                assert!(relative_difference(exact, dec.term1 + dec.term2) < 1e-10);
                assert!(relative_difference(ihvp, (1.0 - rec.a_i) * dec.term1) < 1e-10);
                let gap = exact - ihvp;
                assert!(relative_difference(gap, rec.a_i * exact + (1.0 - rec.a_i) * dec.term2) < 1e-9);
                assert!(dec.term2 >= 0.0);
                assert!(relative_difference(rec.i_ntk, exact) < 1e-12);
                assert!(relative_difference(rec.i_hat, ihvp) < 1e-12);
                assert!(rec.gap() >= rec.lower_bound - 1e-10);
            }
        }
    }

    #[test]
    fn exact_influence_matches_two_fits() {
        let data = random_data(10, 4, 3);
        let test = random_data(1, 4, 4);
        let (x, y) = (test.row(0), test.labels()[0]);
        let m = model(&data, 0.5);
        let c = cross(&data, x).unwrap();
        let full = m.predict(&c).unwrap();
        for i in 0..10 {
            let rest = data.without(i).unwrap();
            let loo = model(&rest, 0.5).predict(&cross(&rest, x).unwrap()).unwrap();
            let oracle = 0.5 * (loo - y).powi(2) - 0.5 * (full - y).powi(2);
            assert!((influence_exact(&m, &c, y, i).unwrap() - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_alpha_and_zero_residual() {
        let data = Dataset::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, -1.0]).unwrap();
        let m = model(&data, 0.5);
        let c = cross(&data, &[0.0, 1.0]).unwrap();
        let dec = decompose(&m, &c, 0.3, 0).unwrap();
        assert_eq!(dec.alpha, 0.0);
        assert_eq!(influence_exact(&m, &c, 0.3, 0).unwrap(), 0.0);
        let rec = &records_for_test(&m, &c, 0.3, 0).unwrap()[0];
        assert_eq!(error_lower_bound(&m, rec), 0.0);
        assert_eq!(rec.gap(), 0.0);
        assert_eq!(rec.error_rate, None);
    }

    #[test]
    fn error_rate_cases() {
        let mut rec = InfluenceRecord {
            i: 0,
            test_id: 0,
            i_ntk: 0.2,
            i_hat: 0.2,
            alpha: 1.0,
            a_i: 0.1,
            term1: 0.0,
            term2: 0.0,
            lower_bound: 0.0,
            error_rate: None,
        };
        assert_eq!(error_rate(&rec), Some(0.0));
        rec.i_hat = 0.0;
        assert_eq!(error_rate(&rec), Some(1.0));
        rec.i_hat = 0.05;
        assert!((error_rate(&rec).unwrap() - 0.75).abs() < 1e-15);
        rec.i_ntk = 0.0;
        assert_eq!(error_rate(&rec), None);
    }

    #[test]
    fn lambda_sweep_shrinks_self_influence_and_error() {
        let data = random_data(30, 5, 5);
        let test = random_data(1, 5, 6);
        let k = Arc::new(gram(&data).unwrap());
        let c = cross(&data, test.row(0)).unwrap();
        let mut last_a = f64::INFINITY;
        let mut last_err = f64::INFINITY;
        for lambda in [0.1, 1.0, 10.0, 100.0, 1000.0] {
            let m = RidgeModel::fit(k.clone(), data.labels(), lambda).unwrap();
            let a_max = (0..30).map(|i| m.self_influence(i).unwrap()).fold(0.0, f64::max);
            let recs = records_for_test(&m, &c, test.labels()[0], 0).unwrap();
            let err = recs.iter().filter_map(|r| r.error_rate).sum::<f64>() / recs.len() as f64;
            assert!(a_max < last_a);
            assert!(err < last_err);
            last_a = a_max;
            last_err = err;
        }
    }

    #[test]
    fn self_influence_bounds() {
        let data = random_data(20, 5, 7);
        let m = model(&data, 0.4);
        let (lmin, lmax) = (m.kernel().lambda_min(), m.kernel().lambda_max());
        for i in 0..20 {
            let a = m.self_influence(i).unwrap();
            assert!(a >= lmin / (lmin + 0.4) - 1e-12 && a <= lmax / (lmax + 0.4) + 1e-12);
        }
    }

    #[test]
    fn radius_constants() {
        let e = eps_r(0.001).unwrap();
        // arccos(1 - 2e-6) to double precision, from its series 2 asin(r).
        let reference = (2e-6f64 + 2.0 * (0.001 + 1e-9 / 6.0 + 3e-15 / 40.0)).sqrt();
        assert!((e - reference).abs() < 1e-15);
        let naive = (2e-6 + (1.0f64 - 2e-6).acos()).sqrt();
        assert!((e - naive).abs() < 1e-9);
        assert!(lambda_threshold(10.0, 0.8).is_infinite());
        assert!((lambda_threshold(1.0, 0.1) - 0.1414213562373095 / 0.8585786437626905).abs() < 1e-15);
        let b = BoundInputs::new(2.0, 0.5, 0.001, 100.0).unwrap();
        assert!(b.lambda_admissible(b.lambda_threshold * 1.01));
    }

    #[test]
    fn upper_bound_formula() {
        let rec = InfluenceRecord {
            i: 0,
            test_id: 0,
            i_ntk: -0.3,
            i_hat: 0.0,
            alpha: 0.0,
            a_i: 0.0,
            term1: 0.0,
            term2: 0.01,
            lower_bound: 0.0,
            error_rate: None,
        };
        let b = error_upper_bound(&rec, 4.0, 1.0, 10).unwrap();
        assert!((b - (0.2 * 0.3 + 0.01)).abs() < 1e-15);
        assert!(matches!(error_upper_bound(&rec, 4.0, 0.0, 10), Err(Error::Parameter(_))));
    }

    #[test]
    fn records_csv_round_trip() {
        let data = random_data(6, 3, 8);
        let m = model(&data, 1.0);
        let c = cross(&data, data.row(0)).unwrap();
        let mut recs = records_for_test(&m, &c, 1.0, 4).unwrap();
        recs[1].error_rate = None;
        let mut bytes = Vec::new();
        write_records_csv(&mut bytes, &recs).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("i,test_id,i_ntk,i_hat,alpha,a_i,term1,term2,lower_bound,error_rate\n"));
        assert_eq!(read_records_csv(&bytes).unwrap(), recs);
    }

    #[test]
    fn empirical_estimator_needs_training_and_matches_large_lambda_expansion() {
        let data = random_data(8, 5, 9);
        let net = crate::network::init(500, 5, 0.5, 1).unwrap();
        let test = random_data(1, 5, 10);
        let err = influence_ihvp_empirical(&net, &data, 1.0, test.row(0), 1.0, 0);
        assert!(matches!(err, Err(Error::State(_))));
        let cfg = crate::network::TrainConfig {
            lambda: 1.0,
            learning_rate: 0.05,
            epochs: 20,
            seed: 0,
        };
        let (net, _) = crate::network::train(&net, &data, &cfg).unwrap();
        let lambda = 1e6;
        let values = influence_ihvp_empirical_all(&net, &data, lambda, test.row(0), 1.0).unwrap();
        let (_, cross) = kernel::empirical_kernel(&net, &data, Some(&test)).unwrap();
        let cross = cross.unwrap();
        let f_te = net.predict(test.row(0)).unwrap();
        let fitted = net.predict_all(&data).unwrap();
        for i in 0..8 {
            let approx = cross[(0, i)] / lambda * (f_te - 1.0) * (fitted[i] - data.labels()[i]);
            assert!((values[i] - approx).abs() <= 0.01 * approx.abs());
        }
    }
}
