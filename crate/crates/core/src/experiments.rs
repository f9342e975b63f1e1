//! Runnable experiment protocols shared by the command-line runner and the
//! acceptance tests. Each protocol returns typed results; [`run`] flattens
//! them into a CSV table plus a JSON summary.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::complexity::{self, ComplexityReport};
use crate::data::{self, flip_labels, generate_mixture, kde_density, random_centers, Bandwidth, DataSource, Dataset, MixtureSpec};
use crate::dynamics::{self, DynamicsTrace, TrackingMode};
use crate::error::{check_index, Error, Result};
use crate::influence::{self, InfluenceRecord, ZERO_INFLUENCE};
use crate::kernel::{self, KernelCross, KernelMatrix};
use crate::network::{NetConfig, RetrainOracle, TrainConfig};
use crate::par::map_range;
use crate::ridge::RidgeModel;
use crate::rng::derive_seed;
use crate::stats::{self, CorrelationSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Fig1Scatter,
    Table1Widths,
    Fig2LambdaSweep,
    Fig3Density,
    Fig4Rankings,
    Fig5Complexity,
    Fig6Tracking,
    Fig7LabelNoise,
    Thm4Bound,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Fig1Scatter,
        Experiment::Table1Widths,
        Experiment::Fig2LambdaSweep,
        Experiment::Fig3Density,
        Experiment::Fig4Rankings,
        Experiment::Fig5Complexity,
        Experiment::Fig6Tracking,
        Experiment::Fig7LabelNoise,
        Experiment::Thm4Bound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig1Scatter => "fig1_scatter",
            Experiment::Table1Widths => "table1_widths",
            Experiment::Fig2LambdaSweep => "fig2_lambda_sweep",
            Experiment::Fig3Density => "fig3_density",
            Experiment::Fig4Rankings => "fig4_rankings",
            Experiment::Fig5Complexity => "fig5_complexity",
            Experiment::Fig6Tracking => "fig6_tracking",
            Experiment::Fig7LabelNoise => "fig7_label_noise",
            Experiment::Thm4Bound => "thm4_bound",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::Fig1Scatter => "retrained vs NTK influence of the most influential points",
            Experiment::Table1Widths => "retrained/NTK influence agreement across network widths",
            Experiment::Fig2LambdaSweep => "mean IHVP error rate vs its lower bound over lambda",
            Experiment::Fig3Density => "KDE density of training points vs IHVP error rate",
            Experiment::Fig4Rankings => "most harmful, helpful and uninfluential training points",
            Experiment::Fig5Complexity => "RKHS complexity of influence-ranked groups",
            Experiment::Fig6Tracking => "top influencer of each test point along training time",
            Experiment::Fig7LabelNoise => "share of noisy top influencers along training time",
            Experiment::Thm4Bound => "mixture-model upper bound on the IHVP error",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|e| e.name()).collect()
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown experiment `{s}`; valid: {}", Self::names().join(", "))))
    }
}

/// Synthetic mixture with alternating `+1 / -1` cluster labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureParams {
    pub clusters: usize,
    pub dim: usize,
    pub radius: f64,
    /// Uniform when empty.
    pub proportions: Vec<f64>,
}

impl MixtureParams {
    pub fn spec(&self, seed: u64, n: usize) -> Result<MixtureSpec> {
        let k = self.clusters;
        let proportions = if self.proportions.is_empty() {
            vec![1.0 / k as f64; k]
        } else {
            self.proportions.clone()
        };
        MixtureSpec::new(
            random_centers(k, self.dim, derive_seed(seed, "centers")),
            vec![self.radius; k],
            proportions,
            alternating_labels(k),
            n,
        )
    }
}

fn alternating_labels(k: usize) -> Vec<f64> {
    (0..k).map(|c| if c % 2 == 0 { 1.0 } else { -1.0 }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DataSpec {
    /// A labelled file source; training and test points are the first
    /// `n_train` and the next `n_test` samples.
    Files { source: DataSource, classes: Option<(i64, i64)> },
    Mixture(MixtureParams),
}

/// Mixture layout of the upper-bound experiment: per class, clusters with
/// `base_count * 2^k` points for `k = 1..=clusters_per_class`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundParams {
    pub clusters_per_class: usize,
    pub base_count: usize,
    pub dim: usize,
    pub radius: f64,
    /// `lambda` as a multiple of the admissibility threshold.
    pub lambda_factor: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            clusters_per_class: 5,
            base_count: 50,
            dim: 100,
            radius: 0.001,
            lambda_factor: 1.1,
        }
    }
}

/// Every setting an experiment may read. Defaults follow the experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Params {
    pub data: DataSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    pub widths: Vec<usize>,
    /// One repetition per seed; each row of the output names its seed.
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub kappa: f64,
    pub top_k: usize,
    pub test_index: usize,
    pub noise: f64,
    pub groups: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub n_times: usize,
    pub bandwidth: Bandwidth,
    pub tracking: TrackingMode,
    pub bound: BoundParams,
}

/// The MNIST 7-vs-9 subset shipped with the repository, relative to the
/// repository root.
pub fn bundled_mnist(root: &std::path::Path) -> DataSpec {
    let dir = root.join("data").join("mnist-7-9");
    DataSpec::Files {
        source: DataSource::IdxPair {
            images: dir.join("images-idx3-ubyte"),
            labels: dir.join("labels-idx1-ubyte"),
        },
        classes: Some((7, 9)),
    }
}

impl Params {
    /// Protocol defaults; file-backed experiments read the bundled MNIST
    /// subset under `root`.
    pub fn defaults(experiment: Experiment, root: &std::path::Path) -> Self {
        let mut p = Params {
            data: bundled_mnist(root),
            n_train: 500,
            n_test: 100,
            lambda: 4.0,
            lambdas: (-4..=4).map(|k| 2f64.powi(k)).collect(),
            widths: vec![10_000],
            seeds: vec![0],
            epochs: 5000,
            learning_rate: 1e-3,
            kappa: 0.01,
            top_k: 40,
            test_index: 0,
            noise: 0.0,
            groups: 10,
            t_min: 0.1,
            t_max: 1e5,
            n_times: 50,
            bandwidth: Bandwidth::Auto,
            tracking: TrackingMode::LeaveOneOut,
            bound: BoundParams::default(),
        };
        let mixture = |clusters, proportions: Vec<f64>| {
            DataSpec::Mixture(MixtureParams {
                clusters,
                dim: 50,
                radius: 0.5,
                proportions,
            })
        };
        match experiment {
            Experiment::Fig1Scatter => {
                p.n_train = 200;
                p.n_test = 10;
            }
            Experiment::Table1Widths => {
                p.n_train = 200;
                p.n_test = 10;
                p.widths = vec![10_000, 20_000];
                p.seeds = (0..5).collect();
            }
            Experiment::Fig2LambdaSweep => {}
            Experiment::Fig3Density => {
                p.data = mixture(2, vec![0.9, 0.1]);
                p.n_train = 200;
                p.n_test = 50;
                p.lambda = 1.0;
                p.seeds = (0..5).collect();
            }
            Experiment::Fig4Rankings => p.top_k = 10,
            Experiment::Fig5Complexity => {
                p.data = mixture(10, Vec::new());
                p.lambda = 1.0;
                p.seeds = (0..5).collect();
            }
            Experiment::Fig6Tracking => p.n_test = 20,
            Experiment::Fig7LabelNoise => {
                p.data = mixture(10, Vec::new());
                p.noise = 0.4;
                p.seeds = (0..5).collect();
            }
            Experiment::Thm4Bound => p.n_test = 20,
        }
        p
    }

    pub fn train_config(&self, seed: u64, width: usize) -> (TrainConfig, NetConfig) {
        (
            TrainConfig {
                lambda: self.lambda,
                learning_rate: self.learning_rate,
                epochs: self.epochs,
                seed: derive_seed(seed, "network"),
            },
            NetConfig {
                width,
                kappa: self.kappa,
            },
        )
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        dynamics::geometric_grid(self.t_min, self.t_max, self.n_times)
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self, experiment: Experiment) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.n_train < 2 {
            return bad(format!("n_train must be at least 2, got {}", self.n_train));
        }
        if self.n_test == 0 {
            return bad("n_test must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if let DataSpec::Mixture(m) = &self.data {
            if m.clusters == 0 || m.dim == 0 {
                return bad("mixture clusters and dim must be positive".into());
            }
            if !(0.0..1.0).contains(&m.radius) {
                return bad(format!("mixture radius {} outside [0, 1)", m.radius));
            }
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise fraction {} outside [0, 1]", self.noise));
        }
        match experiment {
            Experiment::Fig1Scatter | Experiment::Table1Widths => {
                if self.widths.is_empty() || self.widths.contains(&0) {
                    return bad("widths must be a nonempty list of positive integers".into());
                }
                self.train_config(0, self.widths[0]).0.validate()?;
                if self.kappa <= 0.0 {
                    return bad(format!("kappa must be positive, got {}", self.kappa));
                }
                if self.test_index >= self.n_test {
                    return bad(format!("test_index {} not below n_test {}", self.test_index, self.n_test));
                }
                if self.top_k == 0 {
                    return bad("top_k must be positive".into());
                }
            }
            Experiment::Fig2LambdaSweep => {
                if self.lambdas.is_empty() {
                    return bad("lambdas must be nonempty".into());
                }
                if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
                    return bad(format!("lambdas must be positive, got {l}"));
                }
            }
            Experiment::Fig4Rankings if self.top_k == 0 => return bad("top_k must be positive".into()),
            Experiment::Fig5Complexity if self.groups == 0 || self.groups > self.n_train => {
                return bad(format!("groups must be in 1..={}, got {}", self.n_train, self.groups));
            }
            Experiment::Fig6Tracking | Experiment::Fig7LabelNoise => {
                self.times()?;
            }
            Experiment::Thm4Bound => {
                let b = &self.bound;
                if b.clusters_per_class == 0 || b.base_count == 0 || b.dim == 0 {
                    return bad("bound mixture sizes must be positive".into());
                }
                if !(0.0..1.0).contains(&b.radius) {
                    return bad(format!("bound radius {} outside [0, 1)", b.radius));
                }
                if !(b.lambda_factor > 1.0) {
                    return bad(format!("lambda_factor must exceed 1, got {}", b.lambda_factor));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Training and test sets for one repetition.
    pub fn datasets(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.data {
            DataSpec::Files { source, classes } => data::load_dataset(source, *classes)?.split(self.n_train, self.n_test)?,
            DataSpec::Mixture(m) => {
                let spec = m.spec(seed, self.n_train)?;
                (
                    generate_mixture(&spec, derive_seed(seed, "train"))?,
                    generate_mixture(&spec.with_n(self.n_test)?, derive_seed(seed, "test"))?,
                )
            }
        };
        let train = if self.noise > 0.0 {
            flip_labels(&train, self.noise, derive_seed(seed, "noise"))?
        } else {
            train
        };
        Ok((train, test))
    }
}

/// Exact influence records of every (test, train) pair under one model.
pub struct InfluenceTable {
    pub model: RidgeModel,
    pub crosses: Vec<KernelCross>,
    /// `records[j][i]` for test point `j` and training point `i`.
    pub records: Vec<Vec<InfluenceRecord>>,
}

impl InfluenceTable {
    pub fn new(kernel: Arc<KernelMatrix>, train: &Dataset, test: &Dataset, lambda: f64) -> Result<Self> {
        let model = RidgeModel::fit(kernel, train.labels(), lambda)?;
        let crosses = kernel::cross_all(train, test)?;
        let records = map_range(test.n(), |j| influence::records_for_test(&model, &crosses[j], test.labels()[j], j))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model, crosses, records })
    }

    /// Per training point, the mean of `i_ntk` over test points.
    pub fn mean_influence(&self) -> Vec<f64> {
        let n = self.model.n();
        let nte = self.records.len() as f64;
        (0..n).map(|i| self.records.iter().map(|r| r[i].i_ntk).sum::<f64>() / nte).collect()
    }

    /// Per training point, the mean defined error rate over test points.
    pub fn mean_error_rate(&self) -> Vec<Option<f64>> {
        (0..self.model.n())
            .map(|i| {
                let rates: Vec<f64> = self.records.iter().filter_map(|r| r[i].error_rate).collect();
                (!rates.is_empty()).then(|| stats::mean(&rates))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRun {
    pub seed: u64,
    pub width: usize,
    pub test_index: usize,
    /// Training indices, most influential first.
    pub indices: Vec<usize>,
    pub exact: Vec<f64>,
    pub retrained: Vec<f64>,
    pub ntk_prediction: f64,
    pub network_prediction: f64,
    pub final_loss: f64,
    pub summary: CorrelationSummary,
}

/// Retrains a network without each of the `top_k` points of largest exact
/// influence on one test point and correlates the two influence measures.
pub fn scatter(train: &Dataset, test: &Dataset, params: &Params, width: usize, seed: u64) -> Result<ScatterRun> {
    check_index(params.test_index, test.n())?;
    let kernel = Arc::new(kernel::gram(train)?);
    let model = RidgeModel::fit(kernel, train.labels(), params.lambda)?;
    let x_te = test.row(params.test_index);
    let y_te = test.labels()[params.test_index];
    let cross = kernel::cross(train, x_te)?;
    let records = influence::records_for_test(&model, &cross, y_te, params.test_index)?;
    let top = stats::top_k_by_magnitude(&records, params.top_k.min(records.len()));
    let single = Dataset::from_flat_unit(x_te.to_vec(), vec![y_te], train.d())?;
    let (cfg, net_cfg) = params.train_config(seed, width);
    let oracle = RetrainOracle::new(train, &single, &cfg, &net_cfg)?;
    let retrained = map_range(top.len(), |k| oracle.influences(top[k].i).map(|v| v[0]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let exact: Vec<f64> = top.iter().map(|r| r.i_ntk).collect();
    Ok(ScatterRun {
        seed,
        width,
        test_index: params.test_index,
        indices: top.iter().map(|r| r.i).collect(),
        summary: stats::correlate(&retrained, &exact)?,
        exact,
        retrained,
        ntk_prediction: model.predict(&cross)?,
        network_prediction: oracle.full_predictions()[0],
        final_loss: oracle.full_trace().last(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub lambda_min: f64,
    /// `lambda_min / (lambda_min + lambda)`.
    pub lower_bound: f64,
    pub mean_error_rate: f64,
    pub n_records: usize,
    pub n_rates: usize,
    /// `min (|I - I_hat| - bound) / |I|` over records with defined rates.
    pub min_slack: f64,
}

pub fn lambda_sweep(train: &Dataset, test: &Dataset, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    let kernel = Arc::new(kernel::gram(train)?);
    lambdas
        .iter()
        .map(|&lambda| {
            let table = InfluenceTable::new(kernel.clone(), train, test, lambda)?;
            let all: Vec<&InfluenceRecord> = table.records.iter().flatten().collect();
            let rates: Vec<f64> = all.iter().filter_map(|r| r.error_rate).collect();
            let min_slack = all
                .iter()
                .filter(|r| r.i_ntk.abs() >= ZERO_INFLUENCE)
                .map(|r| (r.gap() - r.lower_bound) / r.i_ntk.abs())
                .fold(f64::INFINITY, f64::min);
            Ok(SweepRow {
                lambda,
                lambda_min: kernel.lambda_min(),
                lower_bound: influence::lower_bound_ratio(&table.model),
                mean_error_rate: if rates.is_empty() { f64::NAN } else { stats::mean(&rates) },
                n_records: all.len(),
                n_rates: rates.len(),
                min_slack,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRun {
    pub density: Vec<f64>,
    pub error_rate: Vec<Option<f64>>,
    pub summary: CorrelationSummary,
}

/// KDE density of each training point against its mean IHVP error rate;
/// points whose influence vanishes on every test point are left out.
pub fn density_error(train: &Dataset, test: &Dataset, lambda: f64, bandwidth: &Bandwidth) -> Result<DensityRun> {
    let table = InfluenceTable::new(Arc::new(kernel::gram(train)?), train, test, lambda)?;
    let error_rate = table.mean_error_rate();
    let density = kde_density(train, bandwidth)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = density
        .iter()
        .zip(&error_rate)
        .filter_map(|(d, e)| e.map(|e| (*d, e)))
        .unzip();
    Ok(DensityRun {
        summary: stats::correlate(&xs, &ys)?,
        density,
        error_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Harmful,
    Helpful,
    Uninfluential,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Harmful => "harmful",
            Category::Helpful => "helpful",
            Category::Uninfluential => "uninfluential",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankRow {
    pub category: Category,
    pub rank: usize,
    pub i: usize,
    pub label: f64,
    pub influence: f64,
}

/// The `k` most harmful (most negative mean influence: removing them lowers
/// the test loss), most helpful and least influential training points.
pub fn rankings(train: &Dataset, test: &Dataset, lambda: f64, k: usize) -> Result<Vec<RankRow>> {
    let table = InfluenceTable::new(Arc::new(kernel::gram(train)?), train, test, lambda)?;
    let infl = table.mean_influence();
    let n = infl.len();
    let k = k.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| infl[a].total_cmp(&infl[b]));
    let mut calm: Vec<usize> = (0..n).collect();
    calm.sort_by(|&a, &b| infl[a].abs().total_cmp(&infl[b].abs()));
    let row = |category, rank, i: usize| RankRow {
        category,
        rank,
        i,
        label: train.labels()[i],
        influence: infl[i],
    };
    let mut rows = Vec::with_capacity(3 * k);
    rows.extend(order[..k].iter().enumerate().map(|(r, &i)| row(Category::Harmful, r, i)));
    rows.extend(order.iter().rev().take(k).enumerate().map(|(r, &i)| row(Category::Helpful, r, i)));
    rows.extend(calm[..k].iter().enumerate().map(|(r, &i)| row(Category::Uninfluential, r, i)));
    Ok(rows)
}

/// Groups of training points ranked by mean exact influence and their
/// share of the RKHS norm.
pub fn complexity_groups(train: &Dataset, test: &Dataset, lambda: f64, groups: usize) -> Result<ComplexityReport> {
    let kernel = Arc::new(kernel::gram(train)?);
    let table = InfluenceTable::new(kernel.clone(), train, test, lambda)?;
    complexity::group_complexity(&kernel, train.labels(), &table.mean_influence(), groups)
}

/// Whether the two groups of largest complexity are the first and the last.
pub fn extremes_lead(report: &ComplexityReport) -> bool {
    let ranking = report.ranking();
    let last = report.group_complexity.len() - 1;
    ranking.len() >= 2 && {
        let mut top = [ranking[0], ranking[1]];
        top.sort_unstable();
        top == [0, last]
    }
}

pub fn tracking(train: &Dataset, test: &Dataset, times: &[f64], mode: TrackingMode) -> Result<DynamicsTrace> {
    let kernel = kernel::gram(train)?;
    dynamics::track_top_influencers(&kernel, train, test, times, mode)
}

/// Whether the noise share peaks strictly inside the time grid.
pub fn interior_peak(trace: &DynamicsTrace) -> bool {
    match (trace.noise_peak(), trace.noise_fraction.as_ref()) {
        (Some(k), Some(nf)) => k > 0 && k + 1 < nf.len(),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub i: usize,
    pub cluster: usize,
    pub p_k: f64,
    pub gamma: f64,
    /// Largest `|I - I_hat| / bound` over test points.
    pub worst_ratio: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRun {
    pub n: usize,
    pub lambda: f64,
    pub lambda_max: f64,
    pub lambda_threshold: f64,
    pub eps_r: f64,
    pub rows: Vec<BoundRow>,
}

impl BoundRun {
    pub fn fraction_holding(&self) -> f64 {
        self.rows.iter().filter(|r| r.holds).count() as f64 / self.rows.len() as f64
    }
}

/// Mixture with per-class cluster sizes `base * 2^k`, `lambda` just above the
/// admissibility threshold, and test points drawn from the same mixture.
/// A point holds when its error stays under the bound for every test point.
pub fn upper_bound(bound: &BoundParams, n_test: usize, seed: u64) -> Result<BoundRun> {
    let k = 2 * bound.clusters_per_class;
    let counts: Vec<usize> = (0..k).map(|c| bound.base_count << (c / 2 + 1)).collect();
    let spec = MixtureSpec::from_counts(
        random_centers(k, bound.dim, derive_seed(seed, "centers")),
        vec![bound.radius; k],
        &counts,
        alternating_labels(k),
    )?;
    let train = generate_mixture(&spec, derive_seed(seed, "train"))?;
    let test = generate_mixture(&spec.with_n(n_test)?, derive_seed(seed, "test"))?;
    let kernel = Arc::new(kernel::gram(&train)?);
    let eps = influence::eps_r(bound.radius)?;
    let threshold = influence::lambda_threshold(kernel.lambda_max(), eps);
    if !threshold.is_finite() {
        return Err(Error::Parameter(format!("radius {} admits no lambda", bound.radius)));
    }
    let lambda = bound.lambda_factor * threshold;
    let table = InfluenceTable::new(kernel.clone(), &train, &test, lambda)?;
    let n = train.n();
    let groups = train.group_ids().expect("mixture samples carry cluster ids");
    let rows = map_range(n, |i| {
        let cluster = groups[i];
        let p_k = spec.proportions()[cluster];
        let gamma = influence::gamma(&table.model, i)?;
        let mut worst = 0.0f64;
        for recs in &table.records {
            let r = &recs[i];
            let ub = influence::error_upper_bound(r, gamma, p_k, n)?;
            worst = worst.max(if ub > 0.0 { r.gap() / ub } else if r.gap() > 0.0 { f64::INFINITY } else { 0.0 });
        }
        Ok(BoundRow {
            i,
            cluster,
            p_k,
            gamma,
            worst_ratio: worst,
            holds: worst <= 1.0,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(BoundRun {
        n,
        lambda,
        lambda_max: kernel.lambda_max(),
        lambda_threshold: threshold,
        eps_r: eps,
        rows,
    })
}

/// A CSV body with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header).map_err(influence::csv_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(influence::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub experiment: Experiment,
    pub table: Table,
    pub summary: BTreeMap<String, Value>,
}

/// Runs every repetition of `experiment` and collects its table.
pub fn run(experiment: Experiment, params: &Params) -> Result<Outcome> {
    params.validate(experiment)?;
    let seeds = &params.seeds;
    let mut summary = BTreeMap::new();
    let table = match experiment {
        Experiment::Fig1Scatter | Experiment::Table1Widths => {
            let widths = if experiment == Experiment::Fig1Scatter { &params.widths[..1] } else { &params.widths[..] };
            let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| widths.iter().map(move |&w| (s, w))).collect();
            let runs = map_range(jobs.len(), |k| {
                let (seed, width) = jobs[k];
                let (train, test) = params.datasets(seed)?;
                scatter(&train, &test, params, width, seed)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            if experiment == Experiment::Fig1Scatter {
                let mut t = Table::new(&["seed", "width", "test_id", "rank", "i", "i_ntk", "i_retrain"]);
                for run in &runs {
                    for k in 0..run.indices.len() {
                        t.push(vec![
                            run.seed.to_string(),
                            run.width.to_string(),
                            run.test_index.to_string(),
                            k.to_string(),
                            run.indices[k].to_string(),
                            num(run.exact[k]),
                            num(run.retrained[k]),
                        ]);
                    }
                }
                summary.insert("runs".into(), json!(runs.iter().map(scatter_summary).collect::<Vec<_>>()));
                t
            } else {
                let mut t = Table::new(&["seed", "width", "pearson_r", "spearman_rho", "n_pairs"]);
                for run in &runs {
                    t.push(vec![
                        run.seed.to_string(),
                        run.width.to_string(),
                        num(run.summary.pearson_r),
                        num(run.summary.spearman_rho),
                        run.summary.n_pairs.to_string(),
                    ]);
                }
                let improving = seeds
                    .iter()
                    .filter(|&&s| {
                        let mine: Vec<&ScatterRun> = runs.iter().filter(|r| r.seed == s).collect();
                        mine.windows(2).all(|w| {
                            w[1].summary.pearson_r >= w[0].summary.pearson_r
                                && w[1].summary.spearman_rho >= w[0].summary.spearman_rho
                        })
                    })
                    .count();
                summary.insert("seeds_non_decreasing".into(), json!(improving));
                summary.insert("runs".into(), json!(runs.iter().map(scatter_summary).collect::<Vec<_>>()));
                t
            }
        }
        Experiment::Fig2LambdaSweep => {
            let per_seed = map_range(seeds.len(), |k| {
                let (train, test) = params.datasets(seeds[k])?;
                lambda_sweep(&train, &test, &params.lambdas)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let mut t = Table::new(&[
                "seed",
                "lambda",
                "lambda_min",
                "lower_bound",
                "mean_error_rate",
                "n_records",
                "n_rates",
                "min_slack",
            ]);
            let mut min_slack = f64::INFINITY;
            for (seed, rows) in seeds.iter().zip(&per_seed) {
                for r in rows {
                    min_slack = min_slack.min(r.min_slack);
                    t.push(vec![
                        seed.to_string(),
                        num(r.lambda),
                        num(r.lambda_min),
                        num(r.lower_bound),
                        num(r.mean_error_rate),
                        r.n_records.to_string(),
                        r.n_rates.to_string(),
                        num(r.min_slack),
                    ]);
                }
            }
            summary.insert("min_slack".into(), json!(min_slack));
            t
        }
        Experiment::Fig3Density => {
            let runs = map_range(seeds.len(), |k| {
                let (train, test) = params.datasets(seeds[k])?;
                Ok((density_error(&train, &test, params.lambda, &params.bandwidth)?, train.group_ids().map(<[usize]>::to_vec)))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let mut t = Table::new(&["seed", "i", "group_id", "density", "error_rate"]);
            for (seed, (run, groups)) in seeds.iter().zip(&runs) {
                for i in 0..run.density.len() {
                    t.push(vec![
                        seed.to_string(),
                        i.to_string(),
                        groups.as_ref().map(|g| g[i].to_string()).unwrap_or_default(),
                        num(run.density[i]),
                        opt(run.error_rate[i]),
                    ]);
                }
            }
            let rhos: Vec<f64> = runs.iter().map(|(r, _)| r.summary.spearman_rho).collect();
            summary.insert("spearman_rho".into(), json!(rhos));
            summary.insert("seeds_negative".into(), json!(rhos.iter().filter(|r| **r < 0.0).count()));
            t
        }
        Experiment::Fig4Rankings => {
            let runs = map_range(seeds.len(), |k| {
                let (train, test) = params.datasets(seeds[k])?;
                rankings(&train, &test, params.lambda, params.top_k)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let mut t = Table::new(&["seed", "category", "rank", "i", "label", "influence"]);
            for (seed, rows) in seeds.iter().zip(&runs) {
                for r in rows {
                    t.push(vec![
                        seed.to_string(),
                        r.category.name().into(),
                        r.rank.to_string(),
                        r.i.to_string(),
                        num(r.label),
                        num(r.influence),
                    ]);
                }
            }
            t
        }
        Experiment::Fig5Complexity => {
            let reports = map_range(seeds.len(), |k| {
                let (train, test) = params.datasets(seeds[k])?;
                complexity_groups(&train, &test, params.lambda, params.groups)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let mut t = Table::new(&["seed", "group_id", "size", "mean_influence", "complexity"]);
            for (seed, rep) in seeds.iter().zip(&reports) {
                for g in 0..rep.group_complexity.len() {
                    t.push(vec![
                        seed.to_string(),
                        g.to_string(),
                        rep.group_members[g].len().to_string(),
                        num(rep.group_mean_influence[g]),
                        num(rep.group_complexity[g]),
                    ]);
                }
            }
            summary.insert("seeds_extremes_lead".into(), json!(reports.iter().filter(|r| extremes_lead(r)).count()));
            t
        }
        Experiment::Fig6Tracking | Experiment::Fig7LabelNoise => {
            let times = params.times()?;
            let traces = map_range(seeds.len(), |k| {
                let (train, test) = params.datasets(seeds[k])?;
                tracking(&train, &test, &times, params.tracking)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            if experiment == Experiment::Fig6Tracking {
                let mut t = Table::new(&["seed", "time", "test_id", "prediction", "top_influencer", "top_influence", "is_noise"]);
                for (seed, tr) in seeds.iter().zip(&traces) {
                    for (k, time) in tr.times.iter().enumerate() {
                        for j in 0..tr.predictions[k].len() {
                            t.push(vec![
                                seed.to_string(),
                                num(*time),
                                j.to_string(),
                                num(tr.predictions[k][j]),
                                tr.top_influencer[k][j].to_string(),
                                num(tr.top_influence[k][j]),
                                tr.is_noise.as_ref().map(|v| u8::from(v[k][j]).to_string()).unwrap_or_default(),
                            ]);
                        }
                    }
                }
                let changing: Vec<f64> = traces
                    .iter()
                    .map(|tr| {
                        let nte = tr.top_influencer[0].len();
                        let moved = (0..nte).filter(|&j| tr.top_influencer.iter().any(|row| row[j] != tr.top_influencer[0][j])).count();
                        moved as f64 / nte as f64
                    })
                    .collect();
                summary.insert("share_of_tests_with_changing_top".into(), json!(changing));
                t
            } else {
                let mut t = Table::new(&["seed", "time", "noise_fraction"]);
                for (seed, tr) in seeds.iter().zip(&traces) {
                    let nf = tr
                        .noise_fraction
                        .as_ref()
                        .ok_or_else(|| Error::Parameter("label-noise tracking needs noise > 0".into()))?;
                    for (time, f) in tr.times.iter().zip(nf) {
                        t.push(vec![seed.to_string(), num(*time), num(*f)]);
                    }
                }
                summary.insert("peak_index".into(), json!(traces.iter().map(|t| t.noise_peak()).collect::<Vec<_>>()));
                summary.insert("seeds_interior_peak".into(), json!(traces.iter().filter(|t| interior_peak(t)).count()));
                t
            }
        }
        Experiment::Thm4Bound => {
            let runs = map_range(seeds.len(), |k| upper_bound(&params.bound, params.n_test, seeds[k]))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let mut t = Table::new(&["seed", "i", "cluster", "p_k", "gamma", "worst_ratio", "holds"]);
            for (seed, run) in seeds.iter().zip(&runs) {
                for r in &run.rows {
                    t.push(vec![
                        seed.to_string(),
                        r.i.to_string(),
                        r.cluster.to_string(),
                        num(r.p_k),
                        num(r.gamma),
                        num(r.worst_ratio),
                        u8::from(r.holds).to_string(),
                    ]);
                }
            }
            summary.insert(
                "runs".into(),
                json!(runs
                    .iter()
                    .map(|r| json!({
                        "n": r.n,
                        "lambda": r.lambda,
                        "lambda_max": r.lambda_max,
                        "lambda_threshold": r.lambda_threshold,
                        "eps_r": r.eps_r,
                        "fraction_holding": r.fraction_holding(),
                    }))
                    .collect::<Vec<_>>()),
            );
            t
        }
    };
    Ok(Outcome {
        experiment,
        table,
        summary,
    })
}

fn scatter_summary(run: &ScatterRun) -> Value {
    json!({
        "seed": run.seed,
        "width": run.width,
        "pearson_r": run.summary.pearson_r,
        "spearman_rho": run.summary.spearman_rho,
        "ntk_prediction": run.ntk_prediction,
        "network_prediction": run.network_prediction,
        "final_loss": run.final_loss,
    })
}
