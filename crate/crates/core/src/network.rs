//! Finite-width two-layer ReLU network `f(x) = m^{-1/2} sum_r a_r relu(w_r . x)`
//! with a frozen `+-1` second layer, trained by full-batch gradient descent
//! on `1/2 sum_i (f(x_i) - y_i)^2 + lambda/2 ||W - W(0)||_F^2`.
//!
//! Every gradient of the data term is a combination of the training inputs,
//! so the iterates stay in `W(0) + s_t (W_start - W(0)) + C(t) X` with
//! `s_t = (1 - lr lambda)^t` and an `m x n` coefficient matrix `C`. Training
//! tracks `C` and the pre-activations `W X^T`, which costs one `m x n x n`
//! product per epoch instead of two `m x d x n` ones.

use std::io::{Read, Write};
use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{check_index, check_len, Error, Result};
use crate::matrix_io;
use crate::rng;

const CHECKPOINT_MAGIC: &[u8; 8] = b"NTKNET01";

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    w: Vec<f32>,
    w0: Vec<f32>,
    a: Vec<f32>,
    m: usize,
    d: usize,
    kappa: f64,
    seed: u64,
    trained: bool,
}

/// Width and initialization scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub width: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Initialization seed used when a network is built for retraining.
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Parameter("at least one epoch is required".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Parameter(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `W ~ N(0, kappa^2)` entrywise, `a` uniform on `{-1, +1}`.
pub fn init(m: usize, d: usize, kappa: f64, seed: u64) -> Result<NetworkState> {
    if m == 0 || d == 0 {
        return Err(Error::Parameter("width and input dimension must be positive".into()));
    }
    let normal = Normal::new(0.0, kappa)
        .ok()
        .filter(|_| kappa > 0.0)
        .ok_or_else(|| Error::Parameter(format!("kappa must be positive, got {kappa}")))?;
    let mut rng = rng::split(seed, "network-init");
    let w0: Vec<f32> = (0..m * d).map(|_| normal.sample(&mut rng) as f32).collect();
    let a: Vec<f32> = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Ok(NetworkState {
        w: w0.clone(),
        w0,
        a,
        m,
        d,
        kappa,
        seed,
        trained: false,
    })
}

pub fn predict_net(net: &NetworkState, x: &[f64]) -> Result<f64> {
    net.predict(x)
}

impl NetworkState {
    /// Assembles a state from explicit weights (`w`, `w0` row-major `m x d`).
    pub fn from_parts(
        w: Vec<f32>,
        w0: Vec<f32>,
        a: Vec<f32>,
        m: usize,
        d: usize,
        kappa: f64,
        seed: u64,
    ) -> Result<Self> {
        check_len("weights", m * d, w.len())?;
        check_len("initial weights", m * d, w0.len())?;
        check_len("second layer", m, a.len())?;
        if a.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::Parameter("second-layer weights must be +1 or -1".into()));
        }
        let trained = w != w0;
        Ok(Self {
            w,
            w0,
            a,
            m,
            d,
            kappa,
            seed,
            trained,
        })
    }

    pub fn width(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Current first layer, row-major `m x d`.
    pub fn weights(&self) -> &[f32] {
        &self.w
    }

    pub fn initial_weights(&self) -> &[f32] {
        &self.w0
    }

    pub fn second_layer(&self) -> &[f32] {
        &self.a
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_len("input", self.d, x.len())?;
        let mut total = 0.0;
        for (row, &a) in self.w.chunks_exact(self.d).zip(&self.a) {
            let z: f64 = row.iter().zip(x).map(|(w, x)| f64::from(*w) * x).sum();
            if z > 0.0 {
                total += f64::from(a) * z;
            }
        }
        Ok(total / (self.m as f64).sqrt())
    }

    /// Predictions for every row of `data`.
    pub fn predict_all(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_len("input dimension", self.d, data.d())?;
        let w: Vec<f64> = self.w.iter().map(|&v| f64::from(v)).collect();
        let pre = product_rows(&w, self.m, data.inputs(), data.n(), self.d);
        Ok(readout(pre.as_ref(), &self.a))
    }

    /// `max_r ||w_r - w_r(0)||_2`.
    pub fn max_drift(&self) -> f64 {
        self.w
            .chunks_exact(self.d)
            .zip(self.w0.chunks_exact(self.d))
            .map(|(w, w0)| {
                w.iter()
                    .zip(w0)
                    .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `||W - W(0)||_F`.
    pub fn distance_from_init(&self) -> f64 {
        self.w
            .iter()
            .zip(&self.w0)
            .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Magic tag, `m`, `d`, `kappa`, `seed`, trained flag, then `W`, `W(0)`
    /// and `a` in the binary matrix format.
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&(self.m as u64).to_le_bytes())?;
        out.write_all(&(self.d as u64).to_le_bytes())?;
        out.write_all(&self.kappa.to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&[u8::from(self.trained)])?;
        let widen = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
        matrix_io::write_matrix(out, self.m, self.d, &widen(&self.w))?;
        matrix_io::write_matrix(out, self.m, self.d, &widen(&self.w0))?;
        matrix_io::write_matrix(out, self.m, 1, &widen(&self.a))?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Self> {
        let mut head = [0u8; 41];
        input.read_exact(&mut head).map_err(|_| Error::Parse {
            offset: 0,
            message: "truncated checkpoint header".into(),
        })?;
        if &head[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "not a network checkpoint".into(),
            });
        }
        let word = |k: usize| u64::from_le_bytes(head[8 + 8 * k..16 + 8 * k].try_into().expect("8 bytes"));
        let (m, d) = (word(0) as usize, word(1) as usize);
        let kappa = f64::from_bits(word(2));
        let seed = word(3);
        let trained = head[40] != 0;
        let mut offset = 41;
        let mut next = |what: &'static str, rows: usize, cols: usize| -> Result<Vec<f32>> {
            let (r, c, v) = matrix_io::read_matrix(input, &mut offset)?;
            check_len(what, rows * cols, r * c)?;
            Ok(v.into_iter().map(|x| x as f32).collect())
        };
        let w = next("checkpoint weights", m, d)?;
        let w0 = next("checkpoint initial weights", m, d)?;
        let a = next("checkpoint second layer", m, 1)?;
        let mut state = Self::from_parts(w, w0, a, m, d, kappa, seed)?;
        state.trained = trained;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// `A B^T` for row-major `a` (`p x d`, any float) and `b` (`q x d`), as `p x q`.
fn product_rows(a: &[f64], p: usize, b: &[f64], q: usize, d: usize) -> Mat<f64> {
    crate::linalg::gram_rows(a, p, b, q, d)
}

/// `m^{-1/2} sum_r a_r relu(P_ri)` for every column `i` of an `m x n` block.
fn readout(pre: MatRef<'_, f64>, a: &[f32]) -> Vec<f64> {
    let scale = 1.0 / (pre.nrows() as f64).sqrt();
    (0..pre.ncols())
        .map(|i| {
            let col = pre.col(i);
            let mut total = 0.0;
            for (r, &ar) in a.iter().enumerate() {
                let z = col[r];
                if z > 0.0 {
                    total += f64::from(ar) * z;
                }
            }
            total * scale
        })
        .collect()
}

/// Training objective evaluated directly on `W`.
pub fn objective(net: &NetworkState, data: &Dataset, lambda: f64) -> Result<f64> {
    let preds = net.predict_all(data)?;
    let fit: f64 = preds.iter().zip(data.labels()).map(|(f, y)| 0.5 * (f - y).powi(2)).sum();
    Ok(fit + 0.5 * lambda * net.distance_from_init().powi(2))
}

/// Gradient of [`objective`] with respect to `W`, row-major `m x d`.
pub fn gradient(net: &NetworkState, data: &Dataset, lambda: f64) -> Result<Vec<f64>> {
    let preds = net.predict_all(data)?;
    let (m, d) = (net.m, net.d);
    let scale = 1.0 / (m as f64).sqrt();
    let mut grad = vec![0.0; m * d];
    for (r, g) in grad.chunks_exact_mut(d).enumerate() {
        let w = &net.w[r * d..(r + 1) * d];
        let w0 = &net.w0[r * d..(r + 1) * d];
        for (i, x) in data.rows().enumerate() {
            let z: f64 = w.iter().zip(x).map(|(w, x)| f64::from(*w) * x).sum();
            if z > 0.0 {
                let coef = (preds[i] - data.labels()[i]) * scale * f64::from(net.a[r]);
                g.iter_mut().zip(x).for_each(|(g, x)| *g += coef * x);
            }
        }
        for ((g, w), w0) in g.iter_mut().zip(w).zip(w0) {
            *g += lambda * (f64::from(*w) - f64::from(*w0));
        }
    }
    Ok(grad)
}

/// Objective value at every epoch, from the starting weights to the last
/// update (`epochs + 1` entries).
#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace(pub Vec<f64>);

impl LossTrace {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn initial(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        *self.0.last().expect("trace is never empty")
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "epoch,loss")?;
        for (t, v) in self.0.iter().enumerate() {
            writeln!(out, "{t},{v:e}")?;
        }
        Ok(())
    }
}

/// Quantities shared by every training run on one dataset.
pub struct RowSpaceTrainer {
    start: NetworkState,
    labels: Vec<f64>,
    inputs: Vec<f64>,
    cfg: TrainConfig,
    /// `X X^T`, `n x n`.
    gram: Mat<f32>,
    /// `W(0) X^T`, `m x n`.
    p0: Mat<f32>,
    /// `(W_start - W(0)) X^T`, `m x n`.
    delta0: Mat<f32>,
    delta0_sq: f64,
}

/// Result of one run: `W = W(0) + s (W_start - W(0)) + C X`.
pub struct RowSpaceRun {
    pub coefficients: Mat<f32>,
    pub decay: f64,
    pub trace: LossTrace,
}

fn to_f32(m: MatRef<'_, f64>) -> Mat<f32> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] as f32)
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

const LANES: usize = 8;

/// One column of the pre-activation state `P0 + s D0 + C G`. `d0` is `None`
/// when training starts at the initialization, where it vanishes.
#[derive(Clone, Copy)]
struct Column<'a> {
    p0: &'a [f32],
    d0: Option<&'a [f32]>,
    cg: &'a [f32],
    a: &'a [f32],
    sf: f32,
}

impl Column<'_> {
    /// `(sum_r a_r relu(z_r), <d0, c>, <c, cg>)`.
    fn forward(self, c: &[f32]) -> (f64, f64, f64) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { self.forward_avx2(c) };
        }
        self.forward_generic(c)
    }

    /// `c <- shrink c - step a 1{z > 0}`; the subgradient at 0 is 0.
    fn step(self, c: &mut [f32], shrink: f32, step: f32) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: as above.
            return unsafe { self.step_avx2(c, shrink, step) };
        }
        self.step_generic(c, shrink, step)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn forward_avx2(self, c: &[f32]) -> (f64, f64, f64) {
        self.forward_generic(c)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn step_avx2(self, c: &mut [f32], shrink: f32, step: f32) {
        self.step_generic(c, shrink, step)
    }

    /// Accumulates in f64 over independent lanes so the loop vectorizes.
    #[inline(always)]
    fn forward_generic(self, c: &[f32]) -> (f64, f64, f64) {
        let m = c.len();
        let (p0, cg, a) = (&self.p0[..m], &self.cg[..m], &self.a[..m]);
        let (mut f, mut cross, mut quad) = ([0.0f64; LANES], [0.0f64; LANES], [0.0f64; LANES]);
        let full = m - m % LANES;
        match self.d0 {
            Some(d0) => {
                let (d0, sf) = (&d0[..m], self.sf);
                for base in (0..full).step_by(LANES) {
                    for l in 0..LANES {
                        let r = base + l;
                        let z = p0[r] + sf * d0[r] + cg[r];
                        f[l] += f64::from(a[r] * z.max(0.0));
                        cross[l] += f64::from(d0[r]) * f64::from(c[r]);
                        quad[l] += f64::from(c[r]) * f64::from(cg[r]);
                    }
                }
                for r in full..m {
                    let z = p0[r] + sf * d0[r] + cg[r];
                    f[0] += f64::from(a[r] * z.max(0.0));
                    cross[0] += f64::from(d0[r]) * f64::from(c[r]);
                    quad[0] += f64::from(c[r]) * f64::from(cg[r]);
                }
            }
            None => {
                for base in (0..full).step_by(LANES) {
                    for l in 0..LANES {
                        let r = base + l;
                        f[l] += f64::from(a[r] * (p0[r] + cg[r]).max(0.0));
                        quad[l] += f64::from(c[r]) * f64::from(cg[r]);
                    }
                }
                for r in full..m {
                    f[0] += f64::from(a[r] * (p0[r] + cg[r]).max(0.0));
                    quad[0] += f64::from(c[r]) * f64::from(cg[r]);
                }
            }
        }
        (f.iter().sum(), cross.iter().sum(), quad.iter().sum())
    }

    #[inline(always)]
    fn step_generic(self, c: &mut [f32], shrink: f32, step: f32) {
        let m = c.len();
        let (p0, cg, a) = (&self.p0[..m], &self.cg[..m], &self.a[..m]);
        match self.d0 {
            Some(d0) => {
                let (d0, sf) = (&d0[..m], self.sf);
                for r in 0..m {
                    let z = p0[r] + sf * d0[r] + cg[r];
                    let g = if z > 0.0 { step * a[r] } else { 0.0 };
                    c[r] = shrink * c[r] - g;
                }
            }
            None => {
                for r in 0..m {
                    let g = if p0[r] + cg[r] > 0.0 { step * a[r] } else { 0.0 };
                    c[r] = shrink * c[r] - g;
                }
            }
        }
    }
}

impl RowSpaceTrainer {
    pub fn new(net: &NetworkState, data: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_len("input dimension", net.d, data.d())?;
        let (m, n, d) = (net.m, data.n(), data.d());
        let gram = to_f32(crate::linalg::gram_rows(data.inputs(), n, data.inputs(), n, d).as_ref());
        let w0 = widen(&net.w0);
        let p0 = to_f32(product_rows(&w0, m, data.inputs(), n, d).as_ref());
        let diff: Vec<f64> = net.w.iter().zip(&net.w0).map(|(a, b)| f64::from(*a) - f64::from(*b)).collect();
        let delta0_sq = diff.iter().map(|v| v * v).sum();
        let delta0 = to_f32(product_rows(&diff, m, data.inputs(), n, d).as_ref());
        Ok(Self {
            start: net.clone(),
            labels: data.labels().to_vec(),
            inputs: data.inputs().to_vec(),
            cfg: *cfg,
            gram,
            p0,
            delta0,
            delta0_sq,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Runs gradient descent with the loss terms of inactive points dropped.
    pub fn run(&self, active: &[bool]) -> Result<RowSpaceRun> {
        check_len("active mask", self.n(), active.len())?;
        let (m, n) = (self.start.m, self.n());
        let lr = self.cfg.learning_rate;
        let lambda = self.cfg.lambda;
        let shrink = 1.0 - lr * lambda;
        let scale = 1.0 / (m as f64).sqrt();
        let a = &self.start.a;
        let mut c = Mat::<f32>::zeros(m, n);
        let mut cg = Mat::<f32>::zeros(m, n);
        let mut s = 1.0f64;
        let mut trace = Vec::with_capacity(self.cfg.epochs + 1);
        let shrink32 = shrink as f32;
        let starts_at_init = self.delta0_sq == 0.0;
        for epoch in 0..=self.cfg.epochs {
            if epoch > 0 {
                matmul(cg.as_mut(), Accum::Replace, c.as_ref(), self.gram.as_ref(), 1.0f32, Par::Seq);
            }
            let sf = s as f32;
            let update = epoch < self.cfg.epochs;
            let (mut fit, mut cross_term, mut quad) = (0.0, 0.0, 0.0);
            // Each column's residual depends on that column alone, so the
            // step for column i follows its forward pass directly.
            for i in 0..n {
                let col = Column {
                    p0: &self.p0.col_as_slice(i)[..m],
                    d0: (!starts_at_init).then(|| &self.delta0.col_as_slice(i)[..m]),
                    cg: &cg.col_as_slice(i)[..m],
                    a: &a[..m],
                    sf,
                };
                let ci = &mut c.col_as_slice_mut(i)[..m];
                let (f, cross, q) = col.forward(ci);
                cross_term += cross;
                quad += q;
                let residual = if active[i] { f * scale - self.labels[i] } else { 0.0 };
                fit += 0.5 * residual * residual;
                if update {
                    col.step(ci, shrink32, (lr * scale * residual) as f32);
                }
            }
            let reg = s * s * self.delta0_sq + 2.0 * s * cross_term + quad;
            let loss = fit + 0.5 * lambda * reg;
            if !loss.is_finite() {
                return Err(Error::Divergence { step: epoch, loss });
            }
            trace.push(loss);
            if update {
                s *= shrink;
            }
        }
        Ok(RowSpaceRun {
            coefficients: c,
            decay: s,
            trace: LossTrace(trace),
        })
    }

    /// Network with `W = W(0) + s (W_start - W(0)) + C X`.
    pub fn materialize(&self, run: &RowSpaceRun) -> NetworkState {
        let (m, n, d) = (self.start.m, self.n(), self.start.d);
        let x = Mat::<f32>::from_fn(n, d, |i, k| self.inputs[i * d + k] as f32);
        let mut cx = Mat::<f32>::zeros(m, d);
        matmul(cx.as_mut(), Accum::Replace, run.coefficients.as_ref(), x.as_ref(), 1.0f32, Par::Seq);
        let s = run.decay;
        let w = (0..m * d)
            .map(|idx| {
                let (r, k) = (idx / d, idx % d);
                let w0 = f64::from(self.start.w0[idx]);
                let start = f64::from(self.start.w[idx]);
                (w0 + s * (start - w0) + f64::from(cx[(r, k)])) as f32
            })
            .collect();
        NetworkState {
            w,
            trained: true,
            ..self.start.clone()
        }
    }
}

/// Full-batch gradient descent from the current weights of `net`.
pub fn train(net: &NetworkState, data: &Dataset, cfg: &TrainConfig) -> Result<(NetworkState, LossTrace)> {
    let trainer = RowSpaceTrainer::new(net, data, cfg)?;
    let run = trainer.run(&vec![true; data.n()])?;
    let trained = trainer.materialize(&run);
    Ok((trained, run.trace))
}

/// Retraining oracle: one network trained on all points and, on demand,
/// networks trained from the same initialization with one point removed.
pub struct RetrainOracle {
    trainer: RowSpaceTrainer,
    tests: Dataset,
    full: NetworkState,
    full_predictions: Vec<f64>,
    full_trace: LossTrace,
}

impl RetrainOracle {
    pub fn new(data: &Dataset, tests: &Dataset, cfg: &TrainConfig, net_cfg: &NetConfig) -> Result<Self> {
        let net = init(net_cfg.width, data.d(), net_cfg.kappa, cfg.seed)?;
        Self::from_network(&net, data, tests, cfg)
    }

    pub fn from_network(net: &NetworkState, data: &Dataset, tests: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        check_len("test dimension", data.d(), tests.d())?;
        let trainer = RowSpaceTrainer::new(net, data, cfg)?;
        let run = trainer.run(&vec![true; data.n()])?;
        let full = trainer.materialize(&run);
        let full_predictions = full.predict_all(tests)?;
        Ok(Self {
            trainer,
            tests: tests.clone(),
            full,
            full_predictions,
            full_trace: run.trace,
        })
    }

    pub fn full_network(&self) -> &NetworkState {
        &self.full
    }

    pub fn full_trace(&self) -> &LossTrace {
        &self.full_trace
    }

    pub fn full_predictions(&self) -> &[f64] {
        &self.full_predictions
    }

    /// Test predictions of the network trained without point `i`.
    pub fn removal_predictions(&self, i: usize) -> Result<Vec<f64>> {
        let n = self.trainer.n();
        check_index(i, n)?;
        if n < 2 {
            return Err(Error::DegenerateRemoval);
        }
        let mut active = vec![true; n];
        active[i] = false;
        let run = self.trainer.run(&active)?;
        self.trainer.materialize(&run).predict_all(&self.tests)
    }

    /// `1/2 (f^{\i}(x_te) - y_te)^2 - 1/2 (f(x_te) - y_te)^2` for every test point.
    pub fn influences(&self, i: usize) -> Result<Vec<f64>> {
        let removed = self.removal_predictions(i)?;
        Ok(removed
            .iter()
            .zip(&self.full_predictions)
            .zip(self.tests.labels())
            .map(|((r, f), y)| 0.5 * (r - y).powi(2) - 0.5 * (f - y).powi(2))
            .collect())
    }
}

/// Test-loss change from retraining without point `i`, both runs starting
/// from the same initialization.
pub fn influence_retrain(
    data: &Dataset,
    cfg: &TrainConfig,
    net_cfg: &NetConfig,
    i: usize,
    test_point: &[f64],
    y_te: f64,
) -> Result<f64> {
    check_index(i, data.n())?;
    let test = Dataset::from_flat_unit(test_point.to_vec(), vec![y_te], data.d())?;
    Ok(RetrainOracle::new(data, &test, cfg, net_cfg)?.influences(i)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = rng::from_seed(seed);
        let rows = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let labels = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        Dataset::from_rows(rows, labels).unwrap()
    }

    #[test]
    fn init_statistics() {
        let net = init(2000, 50, 0.01, 1).unwrap();
        let w = widen(net.weights());
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - 0.01).abs() < 0.0005);
        let a_mean = widen(net.second_layer()).iter().sum::<f64>() / 2000.0;
        assert!(a_mean.abs() < 3.0 / 2000f64.sqrt());
        assert_eq!(net, init(2000, 50, 0.01, 1).unwrap());
        assert!(init(10, 5, 0.0, 1).is_err());
    }

    #[test]
    fn prediction_special_cases() {
        let zero = NetworkState::from_parts(vec![0.0; 6], vec![0.0; 6], vec![1.0, -1.0], 2, 3, 1.0, 0).unwrap();
        assert_eq!(zero.predict(&[0.6, 0.0, 0.8]).unwrap(), 0.0);
        let one = NetworkState::from_parts(vec![0.6, 0.0, 0.8], vec![0.0; 3], vec![1.0], 1, 3, 1.0, 0).unwrap();
        assert!((one.predict(&[0.6, 0.0, 0.8]).unwrap() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn batched_prediction_matches_loop() {
        let data = random_data(7, 5, 2);
        let net = init(300, 5, 0.5, 3).unwrap();
        let batch = net.predict_all(&data).unwrap();
        for (i, x) in data.rows().enumerate() {
            let mut naive = 0.0;
            for r in 0..300 {
                let z: f64 = (0..5).map(|k| f64::from(net.weights()[r * 5 + k]) * x[k]).sum();
                naive += f64::from(net.second_layer()[r]) * z.max(0.0);
            }
            naive /= 300f64.sqrt();
            assert!((batch[i] - naive).abs() < 1e-12);
            assert!((net.predict(x).unwrap() - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = random_data(6, 4, 4);
        let mut net = init(20, 4, 0.7, 5).unwrap();
        // Move away from W(0) so the regularizer contributes.
        net.w.iter_mut().enumerate().for_each(|(k, w)| *w += 0.01 * (k as f32).sin());
        let lambda = 0.3;
        let grad = gradient(&net, &data, lambda).unwrap();
        let h = 1e-3f32;
        let mut checked = 0;
        for k in (0..80).step_by(7) {
            let (r, _) = (k / 4, k % 4);
            // Skip units with a pre-activation near the kink.
            let near_kink = data.rows().any(|x| {
                let z: f64 = (0..4).map(|c| f64::from(net.w[r * 4 + c]) * x[c]).sum();
                z.abs() < 1e-2
            });
            if near_kink {
                continue;
            }
            let mut plus = net.clone();
            plus.w[k] += h;
            let mut minus = net.clone();
            minus.w[k] -= h;
            let step = f64::from(plus.w[k]) - f64::from(minus.w[k]);
            let fd = (objective(&plus, &data, lambda).unwrap() - objective(&minus, &data, lambda).unwrap()) / step;
            assert!((fd - grad[k]).abs() <= 1e-5 * grad[k].abs().max(1.0), "coord {k}: {fd} vs {}", grad[k]);
            checked += 1;
        }
        assert!(checked >= 5);
    }

    /// Direct gradient descent on `W` in double precision.
    fn naive_descent(net: &NetworkState, data: &Dataset, cfg: &TrainConfig) -> (Vec<f64>, Vec<f64>) {
        let mut w = widen(&net.w);
        let mut losses = Vec::new();
        for epoch in 0..=cfg.epochs {
            losses.push(objective_f64(&w, net, data, cfg.lambda));
            if epoch == cfg.epochs {
                break;
            }
            let g = gradient_f64(&w, net, data, cfg.lambda);
            w.iter_mut().zip(&g).for_each(|(w, g)| *w -= cfg.learning_rate * g);
        }
        (w, losses)
    }

    fn preds_f64(w: &[f64], net: &NetworkState, data: &Dataset) -> Vec<f64> {
        let d = net.d;
        data.rows()
            .map(|x| {
                let mut t = 0.0;
                for r in 0..net.m {
                    let z: f64 = (0..d).map(|k| w[r * d + k] * x[k]).sum();
                    if z > 0.0 {
                        t += f64::from(net.a[r]) * z;
                    }
                }
                t / (net.m as f64).sqrt()
            })
            .collect()
    }

    fn objective_f64(w: &[f64], net: &NetworkState, data: &Dataset, lambda: f64) -> f64 {
        let p = preds_f64(w, net, data);
        let fit: f64 = p.iter().zip(data.labels()).map(|(f, y)| 0.5 * (f - y).powi(2)).sum();
        let reg: f64 = w.iter().zip(&net.w0).map(|(a, b)| (a - f64::from(*b)).powi(2)).sum();
        fit + 0.5 * lambda * reg
    }

    fn gradient_f64(w: &[f64], net: &NetworkState, data: &Dataset, lambda: f64) -> Vec<f64> {
        let d = net.d;
        let p = preds_f64(w, net, data);
        let scale = 1.0 / (net.m as f64).sqrt();
        let mut g: Vec<f64> = w.iter().zip(&net.w0).map(|(a, b)| lambda * (a - f64::from(*b))).collect();
        for (i, x) in data.rows().enumerate() {
            let e = p[i] - data.labels()[i];
            for r in 0..net.m {
                let z: f64 = (0..d).map(|k| w[r * d + k] * x[k]).sum();
                if z > 0.0 {
                    for k in 0..d {
                        g[r * d + k] += e * scale * f64::from(net.a[r]) * x[k];
                    }
                }
            }
        }
        g
    }

    #[test]
    fn row_space_training_matches_direct_descent() {
        let data = random_data(8, 6, 6);
        let mut net = init(40, 6, 0.5, 7).unwrap();
        net.w.iter_mut().enumerate().for_each(|(k, w)| *w += 0.05 * (k as f32).cos());
        let cfg = TrainConfig {
            lambda: 0.5,
            learning_rate: 0.05,
            epochs: 200,
            seed: 0,
        };
        let (trained, trace) = train(&net, &data, &cfg).unwrap();
        let (w, losses) = naive_descent(&net, &data, &cfg);
        let worst = trained
            .weights()
            .iter()
            .zip(&w)
            .map(|(a, b)| (f64::from(*a) - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "weights differ by {worst}");
        for (a, b) in trace.values().iter().zip(&losses) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0));
        }
        assert!(trace.last() < trace.initial());
        assert!(trained.is_trained());
    }

    #[test]
    fn regularizer_is_anchored_at_init() {
        let data = random_data(5, 4, 8);
        let base = init(50, 4, 0.3, 9).unwrap();
        let start: Vec<f32> = base.weights().iter().map(|w| w + 0.5).collect();
        let net = NetworkState::from_parts(start, base.initial_weights().to_vec(), base.second_layer().to_vec(), 50, 4, 0.3, 9).unwrap();
        let zero = Dataset::from_flat_unit(data.inputs().to_vec(), vec![0.0; 5], 4).unwrap();
        let cfg = TrainConfig {
            lambda: 50.0,
            learning_rate: 0.01,
            epochs: 400,
            seed: 0,
        };
        let (trained, _) = train(&net, &zero, &cfg).unwrap();
        assert!(net.distance_from_init() > 5.0);
        // The fit term keeps the minimizer O(|f(W0)| / lambda) from W0.
        assert!(trained.distance_from_init() < 1e-2 * net.distance_from_init());
        let norm: f64 = widen(trained.weights()).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 1.0);
    }

    #[test]
    fn divergence_is_reported() {
        let data = random_data(5, 3, 10);
        let net = init(30, 3, 0.1, 1).unwrap();
        let cfg = TrainConfig {
            lambda: 1e6,
            learning_rate: 1.0,
            epochs: 2000,
            seed: 0,
        };
        let net = NetworkState::from_parts(
            net.weights().iter().map(|w| w + 1.0).collect(),
            net.initial_weights().to_vec(),
            net.second_layer().to_vec(),
            30,
            3,
            0.1,
            1,
        )
        .unwrap();
        assert!(matches!(train(&net, &data, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let data = random_data(4, 3, 11);
        let cfg = TrainConfig {
            lambda: 1.0,
            learning_rate: 0.1,
            epochs: 5,
            seed: 0,
        };
        let (net, trace) = train(&init(10, 3, 0.1, 12).unwrap(), &data, &cfg).unwrap();
        let mut bytes = Vec::new();
        net.write_checkpoint(&mut bytes).unwrap();
        assert_eq!(NetworkState::read_checkpoint(&mut bytes.as_slice()).unwrap(), net);
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("epoch,loss\n0,"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn removal_index_checked() {
        let data = random_data(4, 3, 13);
        let cfg = TrainConfig {
            lambda: 1.0,
            learning_rate: 0.1,
            epochs: 3,
            seed: 0,
        };
        let net_cfg = NetConfig { width: 8, kappa: 0.1 };
        let err = influence_retrain(&data, &cfg, &net_cfg, 4, data.row(0), 1.0);
        assert!(matches!(err, Err(Error::Index { .. })));
    }
}
