//! Demand forecasting: training data, the baseline model and a synthetic world.

mod model;
mod records;
pub mod world;

pub use model::{
    fit_baseline, predict_curve, BaselineModel, DemandModel, GroupFit, ModelMetadata, PredictionTable, Query,
};
pub use records::{
    winsor_cap, winsorize_targets, Covariates, FeatureRow, History, TrainingRecord, DEFAULT_WINSOR_PERCENTILE,
};
pub use world::{generate_catalogue, inject_outliers, SyntheticWorld, WorldConfig};
