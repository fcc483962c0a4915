use serde::{Deserialize, Serialize};

use super::{ModelError, ModelKind, Regressor};
use crate::dataset::{mean_std, Dataset, Feature, DEFAULT_FEATURES};
use crate::linalg::least_squares;
use crate::Scalar;

/// Published ambient-to-effluent equations (raw units: RH in %, T in °C).
pub const REFERENCE_COEF_RH: f64 = 0.19;
pub const REFERENCE_COEF_T: f64 = 0.88;
pub const REFERENCE_INTERCEPT_TOPSOIL: f64 = -8.05;
pub const REFERENCE_INTERCEPT_PROFILE: f64 = -8.32;

pub const MIN_MLR_ROWS: usize = 2;

/// Affine model in raw feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrModel<F> {
    pub features: Vec<Feature>,
    pub coefficients: Vec<F>,
    pub intercept: F,
}

impl<F: Scalar> MlrModel<F> {
    pub fn new(
        features: Vec<Feature>,
        coefficients: Vec<F>,
        intercept: F,
    ) -> Result<Self, ModelError> {
        if features.len() != coefficients.len() {
            return Err(ModelError::Shape {
                expected: features.len(),
                got: coefficients.len(),
            });
        }
        if !intercept.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(Self {
            features,
            coefficients,
            intercept,
        })
    }

    fn reference(intercept: f64) -> Self {
        Self {
            features: DEFAULT_FEATURES.to_vec(),
            coefficients: vec![F::lit(REFERENCE_COEF_T), F::lit(REFERENCE_COEF_RH)],
            intercept: F::lit(intercept),
        }
    }

    /// `0.19·RH + 0.88·T − 8.05`
    pub fn reference_topsoil() -> Self {
        Self::reference(REFERENCE_INTERCEPT_TOPSOIL)
    }

    /// `0.19·RH + 0.88·T − 8.32`
    pub fn reference_profile() -> Self {
        Self::reference(REFERENCE_INTERCEPT_PROFILE)
    }

    pub fn coef(&self, feature: Feature) -> Option<F> {
        self.features
            .iter()
            .position(|f| *f == feature)
            .map(|j| self.coefficients[j])
    }

    pub fn coef_t(&self) -> F {
        self.coef(Feature::TAmbient).unwrap_or_else(F::zero)
    }

    pub fn coef_rh(&self) -> F {
        self.coef(Feature::Rh).unwrap_or_else(F::zero)
    }
}

impl<F: Scalar> Regressor<F> for MlrModel<F> {
    fn features(&self) -> &[Feature] {
        &self.features
    }

    fn predict_row(&self, x: &[F]) -> F {
        self.coefficients
            .iter()
            .zip(x)
            .fold(F::zero(), |acc, (c, v)| acc + *c * *v)
            + self.intercept
    }
}

/// `coef_rh·rh + coef_t·t + intercept`; features the model lacks contribute 0.
pub fn predict_mlr<F: Scalar>(m: &MlrModel<F>, t_ambient: F, rh: F) -> F {
    let x: Vec<F> = m
        .features
        .iter()
        .map(|f| match f {
            Feature::TAmbient => t_ambient,
            Feature::Rh => rh,
            _ => F::zero(),
        })
        .collect();
    m.predict_row(&x)
}

fn check_rows<F: Scalar>(train: &Dataset<F>) -> Result<(), ModelError> {
    if train.len() < MIN_MLR_ROWS {
        return Err(ModelError::TooFewRows {
            model: ModelKind::Mlr,
            needed: MIN_MLR_ROWS,
            got: train.len(),
        });
    }
    Ok(())
}

/// Ordinary least squares on z-scored features, denormalized to raw units.
///
/// A feature that is constant over the training rows is collinear with the
/// intercept; it gets coefficient 0 and is left out of the solve.
pub fn fit_mlr<F: Scalar>(train: &Dataset<F>) -> Result<MlrModel<F>, ModelError> {
    check_rows(train)?;
    let p = train.n_features();
    let stats: Vec<Option<(F, F)>> = (0..p).map(|j| mean_std(&train.column(j))).collect();
    let active: Vec<usize> = (0..p).filter(|j| stats[*j].is_some()).collect();

    let cols = active.len() + 1;
    let mut design = Vec::with_capacity(train.len() * cols);
    for row in train.rows() {
        design.push(F::one());
        for &j in &active {
            let (m, s) = stats[j].expect("active feature");
            design.push((row[j] - m) / s);
        }
    }
    let beta = least_squares(&design, cols, train.targets()).map_err(|e| ModelError::Singular {
        column: if e.column == 0 {
            0
        } else {
            active.get(e.column - 1).copied().unwrap_or(e.column)
        },
    })?;

    let mut coefficients = vec![F::zero(); p];
    let mut intercept = beta[0];
    for (k, &j) in active.iter().enumerate() {
        let (m, s) = stats[j].expect("active feature");
        coefficients[j] = beta[k + 1] / s;
        intercept = intercept - beta[k + 1] * m / s;
    }
    MlrModel::new(train.features().to_vec(), coefficients, intercept)
}

/// Ordinary least squares directly on raw features (no scaling).
pub fn fit_ols_raw<F: Scalar>(train: &Dataset<F>) -> Result<MlrModel<F>, ModelError> {
    check_rows(train)?;
    let cols = train.n_features() + 1;
    let mut design = Vec::with_capacity(train.len() * cols);
    for row in train.rows() {
        design.push(F::one());
        design.extend_from_slice(row);
    }
    let beta = least_squares(&design, cols, train.targets())
        .map_err(|e| ModelError::Singular { column: e.column })?;
    MlrModel::new(train.features().to_vec(), beta[1..].to_vec(), beta[0])
}
