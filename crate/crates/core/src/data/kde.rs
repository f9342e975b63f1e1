//! Gaussian kernel density estimates on the leading principal coordinates.

use faer::Mat;

use super::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Number of principal coordinates the density is estimated on.
const KDE_DIMS: usize = 2;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum Bandwidth {
    /// Scott's rule per projected coordinate.
    Auto,
    /// One bandwidth shared by every projected coordinate.
    Scalar(f64),
    /// One bandwidth per projected coordinate.
    PerAxis(Vec<f64>),
}

/// Centered coordinates of every point along the top `k` principal axes,
/// row-major `n x k`. Data with `d <= k` is only centered.
pub fn pca_project(data: &Dataset, k: usize) -> Result<(Vec<f64>, usize)> {
    let (n, d) = (data.n(), data.d());
    let mut mean = vec![0.0; d];
    for row in data.rows() {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = data
        .rows()
        .flat_map(|row| row.iter().zip(&mean).map(|(x, m)| x - m))
        .collect();
    if d <= k {
        return Ok((centered, d));
    }
    // d x d scatter matrix; its eigenvectors are the principal axes.
    let z = faer::MatRef::from_row_major_slice(&centered, n, d);
    let mut scatter = Mat::<f64>::zeros(d, d);
    faer::linalg::matmul::matmul(
        scatter.as_mut(),
        faer::Accum::Replace,
        z.transpose(),
        z,
        1.0,
        faer::Par::Seq,
    );
    let (_, vectors) = linalg::symmetric_eigen(scatter.as_ref())?;
    let axes: Vec<Vec<f64>> = (0..k).map(|c| linalg::column(vectors.as_ref(), d - 1 - c)).collect();
    let mut out = Vec::with_capacity(n * k);
    for row in centered.chunks_exact(d) {
        out.extend(axes.iter().map(|axis| linalg::dot(row, axis)));
    }
    Ok((out, k))
}

/// Scott's rule `n^(-1/(k+4)) * sigma_c` for each of the `k` columns.
pub fn scott_bandwidth(points: &[f64], k: usize) -> Vec<f64> {
    let n = points.len() / k;
    let factor = (n as f64).powf(-1.0 / (k as f64 + 4.0));
    (0..k)
        .map(|c| {
            let col = points.iter().skip(c).step_by(k);
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            factor * var.sqrt()
        })
        .collect()
}

/// Density of the sample at each of its own points (self term included).
pub fn kde_density(data: &Dataset, bandwidth: &Bandwidth) -> Result<Vec<f64>> {
    let n = data.n();
    if n < 2 {
        return Err(Error::Parameter("density estimation needs at least two points".into()));
    }
    let (points, k) = pca_project(data, KDE_DIMS)?;
    let h = match bandwidth {
        Bandwidth::Auto => scott_bandwidth(&points, k),
        Bandwidth::Scalar(h) => vec![*h; k],
        Bandwidth::PerAxis(h) => {
            crate::error::check_len("bandwidth axes", k, h.len())?;
            h.clone()
        }
    };
    if let Some(bad) = h.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
        return Err(Error::Parameter(format!("bandwidth {bad} is not positive")));
    }
    let norm = h.iter().product::<f64>() * (2.0 * std::f64::consts::PI).powf(k as f64 / 2.0) * n as f64;
    let density = |i: usize| {
        let pi = &points[i * k..(i + 1) * k];
        let mut total = 0.0;
        for pj in points.chunks_exact(k) {
            let q: f64 = pi.iter().zip(pj).zip(&h).map(|((a, b), h)| ((a - b) / h).powi(2)).sum();
            total += (-0.5 * q).exp();
        }
        total / norm
    };
    Ok(crate::par::map_range(n, density))
}
