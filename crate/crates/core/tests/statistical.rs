//! Seed-majority properties of the influence estimator and of wide networks.

use std::path::Path;
use std::sync::Arc;

use ntk_influence::experiments::{DataSpec, Experiment, MixtureParams, Params};
use ntk_influence::kernel;
use ntk_influence::network::{self, NetConfig, RetrainOracle, TrainConfig};
use ntk_influence::ridge::RidgeModel;

#[test]
fn dense_cluster_has_smaller_self_influence() {
    let params = Params::defaults(Experiment::Fig3Density, Path::new("."));
    let mut wins = 0;
    let mut gaps = Vec::new();
    for seed in 0..5 {
        let (train, _) = params.datasets(seed).unwrap();
        let model = RidgeModel::fit(Arc::new(kernel::gram(&train).unwrap()), train.labels(), params.lambda).unwrap();
        let groups = train.group_ids().unwrap();
        let mean = |g: usize| {
            let a: Vec<f64> = (0..train.n()).filter(|&i| groups[i] == g).map(|i| model.self_influence(i).unwrap()).collect();
            a.iter().sum::<f64>() / a.len() as f64
        };
        let (dense, sparse) = (mean(0), mean(1));
        gaps.push(sparse - dense);
        if dense < sparse {
            wins += 1;
        }
    }
    assert!(wins >= 3, "sparse minus dense mean self-influence per seed: {gaps:?}");
}

fn agreement_data(seed: u64) -> (ntk_influence::Dataset, ntk_influence::Dataset) {
    let mut p = Params::defaults(Experiment::Fig7LabelNoise, Path::new("."));
    p.data = DataSpec::Mixture(MixtureParams {
        clusters: 10,
        dim: 50,
        radius: 0.5,
        proportions: Vec::new(),
    });
    p.noise = 0.0;
    p.n_train = 100;
    p.n_test = 50;
    p.datasets(seed).unwrap()
}

#[test]
fn network_predictions_approach_kernel_regression_with_width() {
    const LAMBDA: f64 = 1.0;
    let widths = [1_000, 10_000, 40_000];
    let mut means = [0.0f64; 3];
    for seed in 0..5u64 {
        let (train, test) = agreement_data(seed);
        let model = RidgeModel::fit(Arc::new(kernel::gram(&train).unwrap()), train.labels(), LAMBDA).unwrap();
        let krr: Vec<f64> = kernel::cross_all(&train, &test).unwrap().iter().map(|c| model.predict(c).unwrap()).collect();
        let cfg = TrainConfig {
            lambda: LAMBDA,
            learning_rate: 0.02,
            epochs: 1000,
            seed,
        };
        for (w, &m) in widths.iter().enumerate() {
            let net = network::init(m, train.d(), 0.01, 100 + seed).unwrap();
            let (trained, _) = network::train(&net, &train, &cfg).unwrap();
            let nn = trained.predict_all(&test).unwrap();
            means[w] += nn.iter().zip(&krr).map(|(a, b)| (a - b).abs()).sum::<f64>() / nn.len() as f64 / 5.0;
        }
    }
    assert!(means.windows(2).all(|w| w[1] < w[0]), "mean |f_nn - f_ntk| for widths {widths:?}: {means:?}");
}

#[test]
fn retraining_is_bit_reproducible() {
    let (train, test) = agreement_data(9);
    let cfg = TrainConfig {
        lambda: 1.0,
        learning_rate: 1e-3,
        epochs: 200,
        seed: 5,
    };
    let net_cfg = NetConfig { width: 500, kappa: 0.01 };
    let a = RetrainOracle::new(&train, &test, &cfg, &net_cfg).unwrap();
    let b = RetrainOracle::new(&train, &test, &cfg, &net_cfg).unwrap();
    assert_eq!(a.full_network().weights(), b.full_network().weights());
    for i in [0, 17, 99] {
        let (ra, rb) = (a.removal_predictions(i).unwrap(), b.removal_predictions(i).unwrap());
        assert!(ra.iter().zip(&rb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
