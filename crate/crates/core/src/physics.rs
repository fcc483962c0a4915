//! Dynamic viscosity of water from temperature.
//!
//! `eta(T) = a * exp(b / (273 + T))` with `T` in °C. The 273 offset is the one
//! the default constants were fitted with; do not swap in 273.15.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::RegularSeries;
use crate::Scalar;

pub const DEFAULT_A_PA_S: f64 = 1.98404e-6;
pub const DEFAULT_B: f64 = 1825.85;
pub const KELVIN_OFFSET: f64 = 273.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("temperature {0} °C is at or below the -273 °C pole")]
    Domain(f64),
    #[error("viscosity parameters must be positive and finite (a = {a}, b = {b})")]
    InvalidParams { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscosityParams<F> {
    /// Pre-exponential constant, Pa·s.
    pub a: F,
    pub b: F,
}

impl<F: Scalar> Default for ViscosityParams<F> {
    fn default() -> Self {
        Self {
            a: F::lit(DEFAULT_A_PA_S),
            b: F::lit(DEFAULT_B),
        }
    }
}

impl<F: Scalar> ViscosityParams<F> {
    pub fn new(a: F, b: F) -> Result<Self, PhysicsError> {
        if a > F::zero() && b > F::zero() && a.is_finite() && b.is_finite() {
            Ok(Self { a, b })
        } else {
            Err(PhysicsError::InvalidParams {
                a: a.as_f64(),
                b: b.as_f64(),
            })
        }
    }
}

/// Viscosity in Pa·s at `temp_c`.
pub fn viscosity<F: Scalar>(temp_c: F, params: &ViscosityParams<F>) -> Result<F, PhysicsError> {
    let absolute = F::lit(KELVIN_OFFSET) + temp_c;
    // written negated so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(absolute > F::zero()) {
        return Err(PhysicsError::Domain(temp_c.as_f64()));
    }
    Ok(params.a * (params.b / absolute).exp())
}

/// Pointwise viscosity. Missing or out-of-domain temperatures give missing.
pub fn viscosity_series<F: Scalar>(
    temps: &RegularSeries<F>,
    params: &ViscosityParams<F>,
) -> RegularSeries<F> {
    let values = temps
        .values()
        .iter()
        .map(|t| t.and_then(|t| viscosity(t, params).ok()))
        .collect();
    RegularSeries::new(temps.start(), temps.step(), values)
        .expect("step copied from a valid series")
}
