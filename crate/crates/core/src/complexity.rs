//! RKHS-norm complexity `sqrt(Y^T K^{-1} Y)` and the share of it carried by
//! groups of training points ranked by influence.

use std::io::Write;

use serde::Serialize;

use crate::error::{check_index, check_len, Error, Result};
use crate::kernel::KernelMatrix;
use crate::linalg::{self, Cholesky};
use crate::ridge;

/// `sqrt(Y^T K^{-1} Y)` together with the diagonal jitter that was needed.
pub fn rkhs_norm_with_jitter(kernel: &KernelMatrix, labels: &[f64]) -> Result<(f64, f64)> {
    check_len("labels", kernel.n(), labels.len())?;
    let jitter = ridge::effective_shift(kernel, 0.0, "complexity")?;
    let chol = Cholesky::new(linalg::shifted(kernel.values(), jitter).as_ref(), "complexity")?;
    let quad = linalg::dot(labels, &chol.solve(labels));
    Ok((quad.max(0.0).sqrt(), jitter))
}

pub fn rkhs_norm(kernel: &KernelMatrix, labels: &[f64]) -> Result<f64> {
    Ok(rkhs_norm_with_jitter(kernel, labels)?.0)
}

/// `C(I) = ||f||_H - ||f^{\I}||_H`, the norm lost when the points in
/// `removed` are dropped. The reduced norm uses the exact principal
/// submatrix of `kernel`.
pub fn subset_complexity(kernel: &KernelMatrix, labels: &[f64], removed: &[usize]) -> Result<f64> {
    let total = rkhs_norm(kernel, labels)?;
    Ok(total - remainder_norm(kernel, labels, removed)?)
}

fn remainder_norm(kernel: &KernelMatrix, labels: &[f64], removed: &[usize]) -> Result<f64> {
    let n = kernel.n();
    let mut drop = vec![false; n];
    for &i in removed {
        check_index(i, n)?;
        drop[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !drop[i]).collect();
    if keep.is_empty() {
        return Ok(0.0);
    }
    if keep.len() == n {
        return rkhs_norm(kernel, labels);
    }
    let sub = kernel.principal(&keep)?;
    let sub_labels: Vec<f64> = keep.iter().map(|&i| labels[i]).collect();
    rkhs_norm(&sub, &sub_labels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    /// Half-open ranges `[lo, hi)` of influence ranks, group 0 first.
    pub group_bounds: Vec<(usize, usize)>,
    /// Training indices of each group.
    pub group_members: Vec<Vec<usize>>,
    pub group_complexity: Vec<f64>,
    pub group_mean_influence: Vec<f64>,
    pub total_norm: f64,
    pub jitter: f64,
}

impl ComplexityReport {
    /// Group ids ordered by decreasing complexity (stable on ties).
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.group_complexity.len()).collect();
        order.sort_by(|&a, &b| self.group_complexity[b].total_cmp(&self.group_complexity[a]));
        order
    }

    /// Columns `group_id,size,mean_influence,complexity`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["group_id", "size", "mean_influence", "complexity"])
            .map_err(crate::influence::csv_err)?;
        for g in 0..self.group_complexity.len() {
            w.write_record([
                g.to_string(),
                self.group_members[g].len().to_string(),
                format!("{:e}", self.group_mean_influence[g]),
                format!("{:e}", self.group_complexity[g]),
            ])
            .map_err(crate::influence::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sorts training points by ascending influence (group 0 holds the most
/// negative values), cuts them into `n_groups` groups of `n / n_groups`
/// points with the remainder in the last group, and measures each
/// group's complexity.
pub fn group_complexity(
    kernel: &KernelMatrix,
    labels: &[f64],
    influences: &[f64],
    n_groups: usize,
) -> Result<ComplexityReport> {
    let n = kernel.n();
    check_len("influences", n, influences.len())?;
    if n_groups == 0 || n_groups > n {
        return Err(Error::Parameter(format!("cannot split {n} points into {n_groups} groups")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| influences[a].total_cmp(&influences[b]));
    let size = n / n_groups;
    let group_bounds: Vec<(usize, usize)> = (0..n_groups)
        .map(|g| (g * size, if g + 1 == n_groups { n } else { (g + 1) * size }))
        .collect();
    let group_members: Vec<Vec<usize>> = group_bounds.iter().map(|&(lo, hi)| order[lo..hi].to_vec()).collect();
    let (total_norm, jitter) = rkhs_norm_with_jitter(kernel, labels)?;
    let group_complexity = crate::par::map_range(n_groups, |g| {
        remainder_norm(kernel, labels, &group_members[g]).map(|rest| total_norm - rest)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let group_mean_influence = group_members
        .iter()
        .map(|g| g.iter().map(|&i| influences[i]).sum::<f64>() / g.len() as f64)
        .collect();
    Ok(ComplexityReport {
        group_bounds,
        group_members,
        group_complexity,
        group_mean_influence,
        total_norm,
        jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::kernel::gram;
    use faer::Mat;
    use rand::Rng as _;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = crate::rng::from_seed(seed);
        let rows = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let labels = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        Dataset::from_rows(rows, labels).unwrap()
    }

    #[test]
    fn norm_special_cases() {
        let data = random_data(8, 5, 1);
        let k = gram(&data).unwrap();
        assert_eq!(rkhs_norm(&k, &[0.0; 8]).unwrap(), 0.0);
        let one = KernelMatrix::from_matrix(Mat::from_fn(1, 1, |_, _| 0.5)).unwrap();
        assert!((rkhs_norm(&one, &[1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn norm_matches_dual_form() {
        let data = random_data(20, 6, 2);
        let k = gram(&data).unwrap();
        let chol = Cholesky::new(k.values(), "test").unwrap();
        let beta = chol.solve(data.labels());
        let oracle = linalg::dot(&beta, &linalg::matvec(k.values(), &beta)).sqrt();
        assert!((rkhs_norm(&k, data.labels()).unwrap() - oracle).abs() < 1e-9 * oracle);
        let scaled: Vec<f64> = data.labels().iter().map(|y| -3.0 * y).collect();
        assert!((rkhs_norm(&k, &scaled).unwrap() - 3.0 * oracle).abs() < 1e-9 * oracle);
    }

    #[test]
    fn group_edge_cases() {
        let data = random_data(12, 5, 3);
        let k = gram(&data).unwrap();
        let y = data.labels();
        assert_eq!(subset_complexity(&k, y, &[]).unwrap(), 0.0);
        let infl: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let single = group_complexity(&k, y, &infl, 1).unwrap();
        assert_eq!(single.group_complexity, vec![single.total_norm]);
        assert!(group_complexity(&k, y, &infl, 13).is_err());
        let five = group_complexity(&k, y, &infl, 5).unwrap();
        assert_eq!(five.group_bounds, vec![(0, 2), (2, 4), (4, 6), (6, 8), (8, 12)]);
        let mut ranks: Vec<usize> = five.group_members.concat();
        ranks.sort_unstable();
        assert_eq!(ranks, (0..12).collect::<Vec<_>>());
        let means = &five.group_mean_influence;
        assert!(means.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn report_csv() {
        let data = random_data(6, 3, 4);
        let k = gram(&data).unwrap();
        let report = group_complexity(&k, data.labels(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap();
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("group_id,size,mean_influence,complexity\n0,2,"));
        assert_eq!(text.lines().count(), 4);
    }
}
