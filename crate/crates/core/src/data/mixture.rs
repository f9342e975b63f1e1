//! Finite mixtures of bounded clusters on the unit sphere.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const PROPORTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    centers: Vec<Vec<f64>>,
    radii: Vec<f64>,
    proportions: Vec<f64>,
    labels: Vec<f64>,
    n: usize,
}

impl MixtureSpec {
    /// `centers` must be distinct unit vectors, one radius in `[0, 1)`,
    /// proportion and label per cluster.
    pub fn new(
        centers: Vec<Vec<f64>>,
        radii: Vec<f64>,
        proportions: Vec<f64>,
        labels: Vec<f64>,
        n: usize,
    ) -> Result<Self> {
        let k = centers.len();
        if k == 0 {
            return Err(Error::Parameter("a mixture needs at least one cluster".into()));
        }
        crate::error::check_len("cluster radii", k, radii.len())?;
        crate::error::check_len("cluster proportions", k, proportions.len())?;
        crate::error::check_len("cluster labels", k, labels.len())?;
        let d = centers[0].len();
        if d == 0 {
            return Err(Error::Parameter("cluster centers must be non-empty".into()));
        }
        for (c, center) in centers.iter().enumerate() {
            crate::error::check_len("cluster center", d, center.len())?;
            let norm = center.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > super::UNIT_NORM_TOL {
                return Err(Error::Parameter(format!("center {c} has norm {norm}, expected 1")));
            }
            if centers[..c].iter().any(|other| other == center) {
                return Err(Error::Parameter(format!("center {c} duplicates an earlier center")));
            }
        }
        if let Some(r) = radii.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Parameter(format!("cluster radius {r} outside [0, 1)")));
        }
        if proportions.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Parameter("cluster proportions must be nonnegative".into()));
        }
        let total: f64 = proportions.iter().sum();
        if (total - 1.0).abs() > PROPORTION_TOL {
            return Err(Error::Parameter(format!(
                "cluster proportions sum to {total}, expected 1"
            )));
        }
        if n == 0 {
            return Err(Error::Parameter("mixture sample count must be positive".into()));
        }
        Ok(Self {
            centers,
            radii,
            proportions,
            labels,
            n,
        })
    }

    /// Spec whose per-cluster counts are exactly `counts`.
    pub fn from_counts(
        centers: Vec<Vec<f64>>,
        radii: Vec<f64>,
        counts: &[usize],
        labels: Vec<f64>,
    ) -> Result<Self> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::Parameter("mixture sample count must be positive".into()));
        }
        let proportions = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Self::new(centers, radii, proportions, labels, n)
    }

    /// Same clusters, different total sample count.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(
            self.centers.clone(),
            self.radii.clone(),
            self.proportions.clone(),
            self.labels.clone(),
            n,
        )
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn d(&self) -> usize {
        self.centers[0].len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Per-cluster sample counts by largest remainder: floors of `p_k n`,
    /// then one extra sample to the clusters with the largest fractional
    /// parts (ties to the larger proportion, then the lower index).
    pub fn counts(&self) -> Vec<usize> {
        let n = self.n as f64;
        let mut counts: Vec<usize> = self.proportions.iter().map(|p| (p * n).floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&a, &b| {
            let ra = self.proportions[a] * n - counts[a] as f64;
            let rb = self.proportions[b] * n - counts[b] as f64;
            rb.total_cmp(&ra)
                .then(self.proportions[b].total_cmp(&self.proportions[a]))
                .then(a.cmp(&b))
        });
        for &c in order.iter().cycle().take(self.n.saturating_sub(assigned)) {
            counts[c] += 1;
        }
        counts
    }
}

/// `k` random unit vectors in `R^d` (normalized Gaussians).
pub fn random_centers(k: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::split(seed, "mixture-centers");
    (0..k).map(|_| unit_gaussian(&mut rng, d)).collect()
}

fn unit_gaussian(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Samples uniformly from the ball of radius `r_k` around each center and
/// projects back to the unit sphere. Points come out grouped by cluster.
pub fn generate_mixture(spec: &MixtureSpec, seed: u64) -> Result<Dataset> {
    let mut rng = rng::split(seed, "mixture-points");
    let d = spec.d();
    let counts = spec.counts();
    let mut inputs = Vec::with_capacity(spec.n * d);
    let mut labels = Vec::with_capacity(spec.n);
    let mut groups = Vec::with_capacity(spec.n);
    for (k, &count) in counts.iter().enumerate() {
        let center = &spec.centers[k];
        let r = spec.radii[k];
        for _ in 0..count {
            let dir = unit_gaussian(&mut rng, d);
            let u: f64 = rng.random();
            let radius = r * u.powf(1.0 / d as f64);
            let start = inputs.len();
            inputs.extend(center.iter().zip(&dir).map(|(c, v)| c + radius * v));
            let row = &mut inputs[start..];
            // r < 1 keeps the point away from the origin.
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= norm);
            labels.push(spec.labels[k]);
            groups.push(k);
        }
    }
    Dataset::from_flat_unit(inputs, labels, d)?.with_group_ids(groups)
}
