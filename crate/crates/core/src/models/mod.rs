//! The three regressors behind one prediction contract, plus the model file.

mod file;
mod forest;
mod mlr;
mod nn;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Feature, SplitMode, SplitSpec, TargetKind};
use crate::Scalar;

pub use file::{load_model, read_model, save_model, write_model, MODEL_SCHEMA_VERSION};
pub use forest::{fit_rf, predict_rf, RegressionTree, RfHyperParams, RfModel, TreeNode};
pub use mlr::{
    fit_mlr, fit_ols_raw, predict_mlr, MlrModel, REFERENCE_COEF_RH, REFERENCE_COEF_T,
    REFERENCE_INTERCEPT_PROFILE, REFERENCE_INTERCEPT_TOPSOIL,
};
pub use nn::{
    fit_nn, nn_forward, nn_gradient, DenseLayer, Network, NnHyperParams, NnModel, TrainingTrace,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{model}: need at least {needed} training rows, got {got}")]
    TooFewRows {
        model: ModelKind,
        needed: usize,
        got: usize,
    },
    #[error("singular design: column {column} is linearly dependent on the others")]
    Singular { column: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("shape mismatch: expected {expected} inputs, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite model parameter")]
    NonFinite,
    #[error("unsupported model schema version {found} (this build reads {supported})")]
    Version { found: u64, supported: u64 },
    #[error("model file: {0}")]
    Parse(String),
    #[error("model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlr,
    Nn,
    Rf,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mlr => "mlr",
            Self::Nn => "nn",
            Self::Rf => "rf",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mlr" => Ok(Self::Mlr),
            "nn" => Ok(Self::Nn),
            "rf" => Ok(Self::Rf),
            _ => Err(format!("unknown model {s:?} (expected mlr, nn or rf)")),
        }
    }
}

/// Anything that maps one feature row to a temperature.
pub trait Regressor<F: Scalar>: Sync {
    fn features(&self) -> &[Feature];

    /// `x` must hold one value per entry of [`Regressor::features`].
    fn predict_row(&self, x: &[F]) -> F;

    fn predict(&self, ds: &Dataset<F>) -> Vec<F> {
        ds.rows().map(|r| self.predict_row(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams<F> {
    Mlr(MlrModel<F>),
    Nn(NnModel<F>),
    Rf(RfModel<F>),
}

/// Where a fitted model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub target_kind: TargetKind,
    pub seed: u64,
    pub data_fingerprint: String,
    pub n_train: usize,
    pub split: Option<SplitSpec>,
    pub split_mode: SplitMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<F> {
    pub params: ModelParams<F>,
    pub meta: TrainingMeta,
}

impl<F: Scalar> TrainedModel<F> {
    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::Mlr(_) => ModelKind::Mlr,
            ModelParams::Nn(_) => ModelKind::Nn,
            ModelParams::Rf(_) => ModelKind::Rf,
        }
    }

}

impl<F: Scalar> ModelParams<F> {
    fn regressor(&self) -> &dyn Regressor<F> {
        match self {
            ModelParams::Mlr(m) => m,
            ModelParams::Nn(m) => m,
            ModelParams::Rf(m) => m,
        }
    }
}

impl<F: Scalar> Regressor<F> for ModelParams<F> {
    fn features(&self) -> &[Feature] {
        self.regressor().features()
    }

    fn predict_row(&self, x: &[F]) -> F {
        self.regressor().predict_row(x)
    }
}

impl<F: Scalar> Regressor<F> for TrainedModel<F> {
    fn features(&self) -> &[Feature] {
        self.params.features()
    }

    fn predict_row(&self, x: &[F]) -> F {
        self.params.predict_row(x)
    }
}

/// Fits the requested model kind with default hyperparameters.
pub fn fit_model<F: Scalar>(
    kind: ModelKind,
    train: &Dataset<F>,
    seed: u64,
    nn: &NnHyperParams,
    rf: &RfHyperParams,
) -> Result<ModelParams<F>, ModelError> {
    Ok(match kind {
        ModelKind::Mlr => ModelParams::Mlr(fit_mlr(train)?),
        ModelKind::Nn => ModelParams::Nn(fit_nn(train, seed, nn)?),
        ModelKind::Rf => ModelParams::Rf(fit_rf(train, seed, rf)?),
    })
}
