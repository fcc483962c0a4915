//! Regular time series on a minute grid.
//!
//! A [`RegularSeries`] stores one optional value per grid slot. Missing values
//! stay `None` all the way through: means skip them, nothing is interpolated
//! and no NaN is ever used as a sentinel.

use std::fmt;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

pub const MINUTES_PER_DAY: i64 = 1440;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeSeriesError {
    #[error("step must be positive, got {0} min")]
    NonPositiveStep(i64),
    #[error("step mismatch: {target} min is not compatible with {source_step} min")]
    StepMismatch { source_step: i64, target: i64 },
    #[error("insufficient data: need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("IQR multiplier must be positive and finite")]
    InvalidMultiplier,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("timestamp {ts} is not on the {step}-minute grid")]
    OffGrid { ts: Timestamp, step: i64 },
}

/// UTC instant with minute resolution, stored as minutes since 1970-01-01T00:00Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(i64);

/// A parsed timestamp plus the UTC offset the source text carried, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedTimestamp {
    pub ts: Timestamp,
    pub offset_minutes: Option<i32>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimestampError {
    #[error("unparseable timestamp {0:?}")]
    Unparseable(String),
    #[error("timestamp {0:?} has sub-minute precision")]
    SubMinute(String),
}

const NAIVE_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%d %H:%M",
];

impl Timestamp {
    pub const fn from_minutes(minutes: i64) -> Self {
        Self(minutes)
    }

    pub const fn minutes(self) -> i64 {
        self.0
    }

    pub fn from_ymd_hm(year: i32, month: u32, day: u32, hour: u32, minute: u32) -> Option<Self> {
        let dt = NaiveDate::from_ymd_opt(year, month, day)?.and_hms_opt(hour, minute, 0)?;
        Some(Self::from_naive_utc(dt))
    }

    fn from_naive_utc(dt: NaiveDateTime) -> Self {
        Self(dt.and_utc().timestamp().div_euclid(60))
    }

    pub fn to_naive_utc(self) -> NaiveDateTime {
        DateTime::from_timestamp(self.0 * 60, 0)
            .expect("minute timestamps stay within chrono's range")
            .naive_utc()
    }

    /// Parses ISO 8601 text. Offsets are normalized to UTC; text without an
    /// offset is taken as UTC.
    pub fn parse(text: &str) -> Result<ParsedTimestamp, TimestampError> {
        let s = text.trim();
        let (dt, offset) = if let Some(naive) = s.strip_suffix('Z').or_else(|| s.strip_suffix('z'))
        {
            (
                parse_naive(naive).ok_or_else(|| TimestampError::Unparseable(text.into()))?,
                Some(0),
            )
        } else if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            let off = dt.offset().local_minus_utc();
            (dt.naive_utc(), Some(off / 60))
        } else if let Ok(dt) = DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M%:z") {
            let off = dt.offset().local_minus_utc();
            (dt.naive_utc(), Some(off / 60))
        } else {
            (
                parse_naive(s).ok_or_else(|| TimestampError::Unparseable(text.into()))?,
                None,
            )
        };
        let secs = dt.and_utc().timestamp();
        if secs.rem_euclid(60) != 0 || dt.and_utc().timestamp_subsec_nanos() != 0 {
            return Err(TimestampError::SubMinute(text.into()));
        }
        Ok(ParsedTimestamp {
            ts: Self::from_naive_utc(dt),
            offset_minutes: offset,
        })
    }

    pub fn add_minutes(self, minutes: i64) -> Self {
        Self(self.0 + minutes)
    }

    /// Start of the `step`-minute grid cell containing `self` (grid anchored at the epoch).
    pub fn floor_to(self, step: i64) -> Self {
        Self(self.0.div_euclid(step) * step)
    }

    pub fn date(self) -> NaiveDate {
        self.to_naive_utc().date()
    }
}

fn parse_naive(s: &str) -> Option<NaiveDateTime> {
    NAIVE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_naive_utc().format("%Y-%m-%dT%H:%M:%SZ"))
    }
}

/// Values on a regular grid: slot `i` sits at `start + i * step`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularSeries<F> {
    start: Timestamp,
    step: i64,
    values: Vec<Option<F>>,
}

impl<F: Scalar> RegularSeries<F> {
    pub fn new(
        start: Timestamp,
        step: i64,
        values: Vec<Option<F>>,
    ) -> Result<Self, TimeSeriesError> {
        if step <= 0 {
            return Err(TimeSeriesError::NonPositiveStep(step));
        }
        Ok(Self {
            start,
            step,
            values,
        })
    }

    /// Places samples on the epoch-anchored `step` grid. The series spans the
    /// first to the last sample; unfilled slots are missing. When a slot is
    /// given twice the first sample wins.
    pub fn from_samples<I>(samples: I, step: i64) -> Result<Self, TimeSeriesError>
    where
        I: IntoIterator<Item = (Timestamp, F)>,
    {
        if step <= 0 {
            return Err(TimeSeriesError::NonPositiveStep(step));
        }
        let samples: Vec<(Timestamp, F)> = samples.into_iter().collect();
        let Some(first) = samples.iter().map(|s| s.0).min() else {
            return Ok(Self {
                start: Timestamp(0),
                step,
                values: Vec::new(),
            });
        };
        let last = samples.iter().map(|s| s.0).max().unwrap_or(first);
        let start = first.floor_to(step);
        let len = ((last.0 - start.0) / step + 1) as usize;
        let mut values = vec![None; len];
        for (ts, v) in samples {
            if (ts.0 - start.0) % step != 0 {
                return Err(TimeSeriesError::OffGrid { ts, step });
            }
            let slot = &mut values[((ts.0 - start.0) / step) as usize];
            if slot.is_none() {
                *slot = Some(v);
            }
        }
        Ok(Self {
            start,
            step,
            values,
        })
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn step(&self) -> i64 {
        self.step
    }

    /// One past the last slot.
    pub fn end(&self) -> Timestamp {
        self.start.add_minutes(self.step * self.values.len() as i64)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<F>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Option<F>> {
        self.values
    }

    pub fn timestamp_at(&self, index: usize) -> Timestamp {
        self.start.add_minutes(self.step * index as i64)
    }

    /// Slot index of `ts`, if it lies exactly on this series' grid.
    pub fn index_of(&self, ts: Timestamp) -> Option<usize> {
        let off = ts.0 - self.start.0;
        if off < 0 || off % self.step != 0 {
            return None;
        }
        let i = (off / self.step) as usize;
        (i < self.values.len()).then_some(i)
    }

    pub fn get(&self, ts: Timestamp) -> Option<F> {
        self.index_of(ts).and_then(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Timestamp, Option<F>)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.timestamp_at(i), *v))
    }

    pub fn present(&self) -> impl Iterator<Item = (Timestamp, F)> + '_ {
        self.iter().filter_map(|(t, v)| v.map(|v| (t, v)))
    }

    pub fn present_values(&self) -> Vec<F> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn count_present(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Pointwise map; missing stays missing.
    pub fn map<G: Scalar>(&self, mut f: impl FnMut(F) -> G) -> RegularSeries<G> {
        RegularSeries {
            start: self.start,
            step: self.step,
            values: self.values.iter().map(|v| v.map(&mut f)).collect(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> RegularSeries<G> {
        self.map(|v| G::lit(v.as_f64()))
    }
}

/// Mean of the non-missing inputs in each left-closed window
/// `[t, t + target_step)`, labeled by window start. Windows are anchored to
/// the epoch grid of `target_step`.
pub fn resample_mean<F: Scalar>(
    series: &RegularSeries<F>,
    target_step: i64,
) -> Result<RegularSeries<F>, TimeSeriesError> {
    if target_step <= 0 || target_step % series.step != 0 {
        return Err(TimeSeriesError::StepMismatch {
            source_step: series.step,
            target: target_step,
        });
    }
    let out_start = series.start.floor_to(target_step);
    if series.is_empty() {
        return RegularSeries::new(out_start, target_step, Vec::new());
    }
    let span = series.end().0 - out_start.0;
    let n_out = ((span + target_step - 1) / target_step) as usize;
    let mut sums = vec![F::zero(); n_out];
    let mut counts = vec![0usize; n_out];
    for (i, v) in series.values.iter().enumerate() {
        if let Some(v) = v {
            let w = ((series.timestamp_at(i).0 - out_start.0) / target_step) as usize;
            sums[w] = sums[w] + *v;
            counts[w] += 1;
        }
    }
    let values = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / F::from_usize_lossy(c)))
        .collect();
    RegularSeries::new(out_start, target_step, values)
}

/// One value per UTC calendar day.
pub fn daily_mean<F: Scalar>(
    series: &RegularSeries<F>,
) -> Result<RegularSeries<F>, TimeSeriesError> {
    if MINUTES_PER_DAY % series.step != 0 {
        return Err(TimeSeriesError::StepMismatch {
            source_step: series.step,
            target: MINUTES_PER_DAY,
        });
    }
    resample_mean(series, MINUTES_PER_DAY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqrBounds<F> {
    pub q1: F,
    pub q3: F,
    pub k: F,
    pub lo: F,
    pub hi: F,
}

impl<F: Scalar> IqrBounds<F> {
    pub fn contains(&self, v: F) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Quantile by linear interpolation at position `p * (n - 1)` of the sorted sample.
pub fn quantile_linear<F: Scalar>(sorted: &[F], p: F) -> F {
    let n = sorted.len();
    let pos = p * F::from_usize_lossy(n - 1);
    let lo = pos.floor();
    let i = lo.to_usize().unwrap_or(0).min(n - 1);
    let frac = pos - lo;
    if i + 1 >= n || frac == F::zero() {
        sorted[i]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

pub fn iqr_bounds<F: Scalar>(values: &[F], k: F) -> Result<IqrBounds<F>, TimeSeriesError> {
    if !(k > F::zero() && k.is_finite()) {
        return Err(TimeSeriesError::InvalidMultiplier);
    }
    if values.len() < 4 {
        return Err(TimeSeriesError::InsufficientData {
            needed: 4,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TimeSeriesError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values are ordered"));
    let q1 = quantile_linear(&sorted, F::lit(0.25));
    let q3 = quantile_linear(&sorted, F::lit(0.75));
    let iqr = q3 - q1;
    Ok(IqrBounds {
        q1,
        q3,
        k,
        lo: q1 - k * iqr,
        hi: q3 + k * iqr,
    })
}

/// Replaces values outside `[lo, hi]` with missing. Returns the number removed.
pub fn filter_outliers<F: Scalar>(
    series: &RegularSeries<F>,
    bounds: &IqrBounds<F>,
) -> (RegularSeries<F>, usize) {
    let mut removed = 0;
    let values = series
        .values
        .iter()
        .map(|v| match v {
            Some(x) if !bounds.contains(*x) => {
                removed += 1;
                None
            }
            other => *other,
        })
        .collect();
    (
        RegularSeries {
            start: series.start,
            step: series.step,
            values,
        },
        removed,
    )
}

/// Inner join on timestamps, dropping rows where either side is missing.
pub fn align<F: Scalar>(
    a: &RegularSeries<F>,
    b: &RegularSeries<F>,
) -> Result<Vec<(Timestamp, F, F)>, TimeSeriesError> {
    if a.step != b.step {
        return Err(TimeSeriesError::StepMismatch {
            source_step: a.step,
            target: b.step,
        });
    }
    Ok(a.present()
        .filter_map(|(t, x)| b.get(t).map(|y| (t, x, y)))
        .collect())
}
