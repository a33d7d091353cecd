//! Leakage-safe binary classification of ROI-level regional homogeneity
//! features.

pub mod augmentation;
pub mod data_model;
pub mod ensemble_eval;
pub mod error;
pub mod feature_selection;
pub mod importance;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod reho;
pub mod residualization;
pub mod rng;
pub mod scalar;
pub mod splitting;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset64 = data_model::Dataset<f64>;
pub type Dataset32 = data_model::Dataset<f32>;
pub type TrainedModel64 = models::TrainedModel<f64>;
pub type TrainedModel32 = models::TrainedModel<f32>;
pub type Ensemble64 = ensemble_eval::Ensemble<f64>;
pub type Ensemble32 = ensemble_eval::Ensemble<f32>;
pub type BalancedSet64 = augmentation::BalancedSet<f64>;
pub type BalancedSet32 = augmentation::BalancedSet<f32>;
pub type ResidualModel64 = residualization::ResidualModel<f64>;
pub type ResidualModel32 = residualization::ResidualModel<f32>;
pub type Covariates64 = data_model::Covariates<f64>;
pub type Covariates32 = data_model::Covariates<f32>;
