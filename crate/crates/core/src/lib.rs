//! Regression by a bridge-tree gated mixture of overlapping local regressors.
//!
//! A layered DAG routes probability mass from a root to `K` leaves. Each
//! leaf owns a linear regressor over a fixed label interval, and the
//! prediction is the mass-weighted sum of the local predictions. The core
//! is generic over the scalar type; `f64` is the reference arithmetic.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge_tree;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gating;
pub mod gradcheck;
pub mod linear;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod neuralnet;
pub mod regressors;
pub mod scalar;
pub mod train;

pub use bridge_tree::{validate, EdgeId, NodeId, Path, Topology, TopologyKind};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use data::{generate_synthetic, split, Dataset, Sample, SyntheticSpec};
pub use error::{Error, Result};
pub use gating::{grouped_softmax, propagate, propagate_oracle, EdgeProbabilities, GatingVector};
pub use linear::LinearRegression;
pub use metrics::EvalReport;
pub use model::{Baseline, BridgeNet, ModelSpec};
pub use regressors::{layout_regions, RegionLayout};
pub use scalar::Scalar;
pub use train::{EpochLog, Trainer};

pub type BridgeNet64 = BridgeNet<f64>;
pub type BridgeNet32 = BridgeNet<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type RegionLayout64 = RegionLayout<f64>;
pub type Trainer64 = Trainer<f64>;
