//! Composite feature selection: an ensemble of stochastically gated learners
//! that discovers groups of interacting predictive features.

pub mod autodiff;
pub mod baselines;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod gates;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
pub use metrics::{FeatureSet, GroupStructure};
pub use model::{CompFsModel, ModelConfig};
