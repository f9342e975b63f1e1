//! Correlation coefficients and selection of the most influential records.

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::influence::InfluenceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationSummary {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub n_pairs: usize,
}

pub fn correlate(xs: &[f64], ys: &[f64]) -> Result<CorrelationSummary> {
    Ok(CorrelationSummary {
        pearson_r: pearson(xs, ys)?,
        spearman_rho: spearman(xs, ys)?,
        n_pairs: xs.len(),
    })
}

/// Product-moment correlation, clamped to `[-1, 1]` against rounding.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_len("paired samples", xs.len(), ys.len())?;
    if xs.len() < 2 {
        return Err(Error::DegenerateInput("correlation needs at least two pairs".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_len("paired samples", xs.len(), ys.len())?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// The `k` records with the largest `|i_ntk|`; ties keep the input order.
pub fn top_k_by_magnitude(records: &[InfluenceRecord], k: usize) -> Vec<InfluenceRecord> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].i_ntk.abs().total_cmp(&records[a].i_ntk.abs()));
    order.truncate(k);
    order.iter().map(|&i| records[i].clone()).collect()
}

/// Indices of the `k` largest `|v|`, ties to the lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
    order.truncate(k);
    order
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
