//! Effluent temperature modeling for soil-aquifer-treatment recharge basins.
//!
//! The crate covers the whole chain from raw field records to decade-scale
//! predictions:
//!
//! * [`timeseries`]: regular series, resampling, IQR screening, daily means, alignment
//! * [`ingestion`]: meteorology / probe / basin-operation CSV parsers and drainage phases
//! * [`dataset`]: topsoil and profile targets, feature assembly, splitting, standardization
//! * [`models`]: linear regression, a small ReLU network and a regression forest
//! * [`evaluation`]: R², RMSE and permutation importance
//! * [`physics`]: the exponential viscosity-temperature law
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`). The aliases at
//! the crate root pin the common concrete types.

pub mod dataset;
pub mod evaluation;
pub mod ingestion;
mod linalg;
pub mod models;
pub mod physics;
pub mod rng;
mod scalar;
pub mod timeseries;

pub use scalar::Scalar;
pub use timeseries::{Timestamp, MINUTES_PER_DAY};

pub type SeriesF64 = timeseries::RegularSeries<f64>;
pub type SeriesF32 = timeseries::RegularSeries<f32>;
pub type IqrBoundsF64 = timeseries::IqrBounds<f64>;
pub type DatasetF64 = dataset::Dataset<f64>;
pub type DatasetF32 = dataset::Dataset<f32>;
pub type TargetSeriesF64 = dataset::TargetSeries<f64>;
pub type StandardizerF64 = dataset::Standardizer<f64>;
pub type MlrModelF64 = models::MlrModel<f64>;
pub type MlrModelF32 = models::MlrModel<f32>;
pub type NnModelF64 = models::NnModel<f64>;
pub type NnModelF32 = models::NnModel<f32>;
pub type RfModelF64 = models::RfModel<f64>;
pub type RfModelF32 = models::RfModel<f32>;
pub type TrainedModelF64 = models::TrainedModel<f64>;
pub type TrainedModelF32 = models::TrainedModel<f32>;
pub type ImportanceReportF64 = evaluation::ImportanceReport<f64>;
pub type MetricReportF64 = evaluation::MetricReport<f64>;
pub type ViscosityParamsF64 = physics::ViscosityParams<f64>;
