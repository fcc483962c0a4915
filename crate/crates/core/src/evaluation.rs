//! Goodness-of-fit metrics and permutation importance.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Feature};
use crate::models::Regressor;
use crate::rng::{purpose, PortableRng};
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("metric needs at least one value")]
    Empty,
    #[error("length mismatch: {actual} actual vs {predicted} predicted")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("R² is undefined when the actual values have zero variance")]
    ZeroVariance,
    #[error("repeats must be at least 1")]
    ZeroRepeats,
    #[error("cannot build thread pool: {0}")]
    Pool(String),
}

fn check<F>(actual: &[F], predicted: &[F]) -> Result<(), EvalError> {
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// `1 - SS_res / SS_tot`, with `SS_tot` taken about the mean of `actual`.
pub fn r2<F: Scalar>(actual: &[F], predicted: &[F]) -> Result<F, EvalError> {
    check(actual, predicted)?;
    let n = F::from_usize_lossy(actual.len());
    let mean = actual.iter().copied().sum::<F>() / n;
    let ss_tot: F = actual.iter().map(|&a| (a - mean) * (a - mean)).sum();
    if ss_tot == F::zero() {
        return Err(EvalError::ZeroVariance);
    }
    let ss_res: F = actual
        .iter()
        .zip(predicted)
        .map(|(&a, &p)| (a - p) * (a - p))
        .sum();
    Ok(F::one() - ss_res / ss_tot)
}

pub fn rmse<F: Scalar>(actual: &[F], predicted: &[F]) -> Result<F, EvalError> {
    check(actual, predicted)?;
    let ss: F = actual
        .iter()
        .zip(predicted)
        .map(|(&a, &p)| (a - p) * (a - p))
        .sum();
    Ok((ss / F::from_usize_lossy(actual.len())).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport<F> {
    pub r2_train: F,
    pub rmse_train: F,
    pub r2_test: F,
    pub rmse_test: F,
    pub n_train: usize,
    pub n_test: usize,
}

impl<F: Scalar> MetricReport<F> {
    pub fn compute<M: Regressor<F> + ?Sized>(
        model: &M,
        train: &Dataset<F>,
        test: &Dataset<F>,
    ) -> Result<Self, EvalError> {
        let p_train = model.predict(train);
        let p_test = model.predict(test);
        Ok(Self {
            r2_train: r2(train.targets(), &p_train)?,
            rmse_train: rmse(train.targets(), &p_train)?,
            r2_test: r2(test.targets(), &p_test)?,
            rmse_test: rmse(test.targets(), &p_test)?,
            n_train: train.len(),
            n_test: test.len(),
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "split,r2,rmse_c,n")?;
        writeln!(
            w,
            "train,{},{},{}",
            self.r2_train, self.rmse_train, self.n_train
        )?;
        writeln!(
            w,
            "test,{},{},{}",
            self.r2_test, self.rmse_test, self.n_test
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance<F> {
    pub feature: Feature,
    pub mean: F,
    /// Population standard deviation over repeats.
    pub std: F,
    /// Baseline R² minus shuffled R², one per repeat. Negative values are kept.
    pub raw: Vec<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport<F> {
    pub features: Vec<FeatureImportance<F>>,
    pub repeats: usize,
    pub seed: u64,
    pub baseline_r2: F,
}

impl<F: Scalar> ImportanceReport<F> {
    pub fn get(&self, feature: Feature) -> Option<&FeatureImportance<F>> {
        self.features.iter().find(|f| f.feature == feature)
    }

    pub fn write_raw_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "feature,repeat,delta_r2")?;
        for f in &self.features {
            for (r, d) in f.raw.iter().enumerate() {
                writeln!(w, "{},{r},{d}", f.feature)?;
            }
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(
        &self,
        mut w: W,
        comment: Option<&str>,
    ) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "feature,mean_delta_r2,std_delta_r2")?;
        for f in &self.features {
            writeln!(w, "{},{},{}", f.feature, f.mean, f.std)?;
        }
        Ok(())
    }
}

/// The row order used to shuffle column `feature` on repeat `repeat`.
pub fn shuffle_order(n: usize, seed: u64, feature: usize, repeat: usize) -> Vec<usize> {
    PortableRng::derived(seed, purpose::IMPORTANCE, &[feature as u64, repeat as u64]).permutation(n)
}

fn shuffled_r2<F: Scalar, M: Regressor<F> + ?Sized>(
    model: &M,
    data: &Dataset<F>,
    feature: usize,
    order: &[usize],
) -> Result<F, EvalError> {
    let mut row = vec![F::zero(); data.n_features()];
    let predicted: Vec<F> = (0..data.len())
        .map(|i| {
            row.copy_from_slice(data.row(i));
            row[feature] = data.row(order[i])[feature];
            model.predict_row(&row)
        })
        .collect();
    r2(data.targets(), &predicted)
}

/// Drop in R² when each feature column is shuffled, `repeats` times per feature.
/// `workers` only changes the thread count, never the report.
pub fn permutation_importance<F: Scalar, M: Regressor<F> + ?Sized>(
    model: &M,
    data: &Dataset<F>,
    repeats: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<ImportanceReport<F>, EvalError> {
    if repeats == 0 {
        return Err(EvalError::ZeroRepeats);
    }
    let baseline = r2(data.targets(), &model.predict(data))?;
    let p = data.n_features();
    let run = || -> Result<Vec<F>, EvalError> {
        (0..p * repeats)
            .into_par_iter()
            .map(|k| {
                let (j, r) = (k / repeats, k % repeats);
                let order = shuffle_order(data.len(), seed, j, r);
                Ok(baseline - shuffled_r2(model, data, j, &order)?)
            })
            .collect()
    };
    let deltas = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let reps = F::from_usize_lossy(repeats);
    let features = data
        .features()
        .iter()
        .zip(deltas.chunks(repeats))
        .map(|(&feature, raw)| {
            let mean = raw.iter().copied().sum::<F>() / reps;
            let var = raw.iter().map(|&d| (d - mean) * (d - mean)).sum::<F>() / reps;
            FeatureImportance {
                feature,
                mean,
                std: var.sqrt(),
                raw: raw.to_vec(),
            }
        })
        .collect();
    Ok(ImportanceReport {
        features,
        repeats,
        seed,
        baseline_r2: baseline,
    })
}
