//! Influence functions of wide two-layer ReLU networks through their
//! infinite-width neural tangent kernel.
//!
//! The crate covers exact leave-one-out influence under kernel ridge
//! regression, the inverse-Hessian-vector-product estimator with its error
//! bounds, the complexity of influential groups, closed-form training
//! dynamics, and a finite-width network used as a retraining oracle.

pub mod complexity;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod influence;
pub mod kernel;
pub mod linalg;
pub mod matrix_io;
pub mod network;
mod par;
pub mod ridge;
pub mod rng;
pub mod stats;

pub use data::{Bandwidth, DataSource, Dataset, MixtureSpec};
pub use dynamics::{DynamicsTrace, SpectralDynamics};
pub use error::{Error, Result};
pub use influence::{BoundInputs, InfluenceRecord};
pub use kernel::{KernelCross, KernelMatrix};
pub use network::{NetConfig, NetworkState, TrainConfig};
pub use ridge::RidgeModel;
pub use stats::CorrelationSummary;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
