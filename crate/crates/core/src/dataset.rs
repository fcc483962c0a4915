//! Modeling dataset: targets from probe records, drainage-filtered feature
//! assembly, splitting and standardization.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use csv::{ReaderBuilder, Trim};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingestion::{
    in_any_interval, DrainageInterval, MeteoRecord, ProbeRecord, SENSORS_PER_TIMESTEP,
    TOPSOIL_DEPTH_CM,
};
use crate::rng::{purpose, PortableRng};
use crate::timeseries::{resample_mean, RegularSeries, TimeSeriesError, Timestamp};
use crate::Scalar;

/// Step of the probe records and of every modeling series.
pub const MODEL_STEP_MIN: i64 = 30;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty after filtering ({0})")]
    Empty(BuildReport),
    #[error("too few rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("feature `{0}` has zero variance")]
    ZeroVariance(Feature),
    #[error("row {row} has a non-finite value")]
    NonFinite { row: usize },
    #[error("row {row}: timestamp {ts} lies outside every drainage interval")]
    OutsideDrainage { row: usize, ts: Timestamp },
    #[error("dataset csv: {0}")]
    Csv(String),
    #[error(transparent)]
    TimeSeries(#[from] TimeSeriesError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Topsoil,
    Profile,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Topsoil => "topsoil",
            Self::Profile => "profile",
        })
    }
}

impl FromStr for TargetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "topsoil" => Ok(Self::Topsoil),
            "profile" => Ok(Self::Profile),
            _ => Err(format!(
                "unknown target {s:?} (expected topsoil or profile)"
            )),
        }
    }
}

/// Ambient predictors. The default design matrix uses only `TAmbient` and `Rh`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    TAmbient,
    Rh,
    Precip,
    WindSpeed,
    WindDir,
}

pub const DEFAULT_FEATURES: [Feature; 2] = [Feature::TAmbient, Feature::Rh];
pub const ALL_FEATURES: [Feature; 5] = [
    Feature::TAmbient,
    Feature::Rh,
    Feature::Precip,
    Feature::WindSpeed,
    Feature::WindDir,
];

impl Feature {
    pub fn column(self) -> &'static str {
        match self {
            Self::TAmbient => "t_ambient_c",
            Self::Rh => "rh_pct",
            Self::Precip => "precip_mm",
            Self::WindSpeed => "wind_speed_ms",
            Self::WindDir => "wind_dir_deg",
        }
    }

    pub fn from_column(name: &str) -> Option<Self> {
        ALL_FEATURES.into_iter().find(|f| f.column() == name)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Self::TAmbient => "T",
            Self::Rh => "RH",
            Self::Precip => "P",
            Self::WindSpeed => "WS",
            Self::WindDir => "WD",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

/// Meteorological variables as aligned regular series.
#[derive(Debug, Clone, PartialEq)]
pub struct MeteoSeries<F> {
    pub t_ambient: RegularSeries<F>,
    pub rh: RegularSeries<F>,
    pub precip: RegularSeries<F>,
    pub wind_speed: RegularSeries<F>,
    pub wind_dir: RegularSeries<F>,
}

impl<F: Scalar> MeteoSeries<F> {
    pub fn from_records(records: &[MeteoRecord], step: i64) -> Result<Self, TimeSeriesError> {
        let col = |f: fn(&MeteoRecord) -> f64| {
            RegularSeries::from_samples(records.iter().map(|r| (r.ts, F::lit(f(r)))), step)
        };
        Ok(Self {
            t_ambient: col(|r| r.t_ambient_c)?,
            rh: col(|r| r.rh_pct)?,
            precip: col(|r| r.precip_mm)?,
            wind_speed: col(|r| r.wind_speed_ms)?,
            wind_dir: col(|r| r.wind_dir_deg)?,
        })
    }

    pub fn get(&self, feature: Feature) -> &RegularSeries<F> {
        match feature {
            Feature::TAmbient => &self.t_ambient,
            Feature::Rh => &self.rh,
            Feature::Precip => &self.precip,
            Feature::WindSpeed => &self.wind_speed,
            Feature::WindDir => &self.wind_dir,
        }
    }

    pub fn get_mut(&mut self, feature: Feature) -> &mut RegularSeries<F> {
        match feature {
            Feature::TAmbient => &mut self.t_ambient,
            Feature::Rh => &mut self.rh,
            Feature::Precip => &mut self.precip,
            Feature::WindSpeed => &mut self.wind_speed,
            Feature::WindDir => &mut self.wind_dir,
        }
    }

    pub fn resample(&self, target_step: i64) -> Result<Self, TimeSeriesError> {
        Ok(Self {
            t_ambient: resample_mean(&self.t_ambient, target_step)?,
            rh: resample_mean(&self.rh, target_step)?,
            precip: resample_mean(&self.precip, target_step)?,
            wind_speed: resample_mean(&self.wind_speed, target_step)?,
            wind_dir: resample_mean(&self.wind_dir, target_step)?,
        })
    }
}

/// Minimum sensor coverage for a target value to be defined at a timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageFloors {
    pub topsoil_min_probes: usize,
    pub profile_min_sensors: usize,
}

impl Default for CoverageFloors {
    fn default() -> Self {
        Self {
            topsoil_min_probes: 1,
            profile_min_sensors: SENSORS_PER_TIMESTEP / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSeries<F> {
    /// Mean of the 5 cm sensors.
    pub topsoil: RegularSeries<F>,
    /// Mean of all sensors of the profile.
    pub profile: RegularSeries<F>,
}

impl<F: Scalar> TargetSeries<F> {
    pub fn get(&self, kind: TargetKind) -> &RegularSeries<F> {
        match kind {
            TargetKind::Topsoil => &self.topsoil,
            TargetKind::Profile => &self.profile,
        }
    }
}

/// Order-independent mean: values are summed in ascending order so the
/// result does not depend on sensor labeling.
fn sorted_mean<F: Scalar>(mut values: Vec<F>) -> F {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite sensor values"));
    let n = F::from_usize_lossy(values.len());
    values.into_iter().sum::<F>() / n
}

/// Per-sensor (sum, count) within one slot, keyed by (probe, depth).
type SlotSums = BTreeMap<(u8, u32), (f64, usize)>;

/// Topsoil and profile temperature per 30-minute slot. Records are bucketed
/// into left-closed slots; repeated readings of one sensor within a slot are
/// averaged before the cross-sensor mean.
pub fn build_targets<F: Scalar>(probes: &[ProbeRecord], floors: CoverageFloors) -> TargetSeries<F> {
    let mut slots: BTreeMap<Timestamp, SlotSums> = BTreeMap::new();
    for p in probes {
        let slot = slots.entry(p.ts.floor_to(MODEL_STEP_MIN)).or_default();
        let acc = slot.entry((p.probe_id, p.depth_cm)).or_insert((0.0, 0));
        acc.0 += p.temp_c;
        acc.1 += 1;
    }
    let (Some(first), Some(last)) = (
        slots.keys().next().copied(),
        slots.keys().next_back().copied(),
    ) else {
        let empty = RegularSeries::new(Timestamp::from_minutes(0), MODEL_STEP_MIN, Vec::new())
            .expect("positive step");
        return TargetSeries {
            topsoil: empty.clone(),
            profile: empty,
        };
    };
    let len = ((last.minutes() - first.minutes()) / MODEL_STEP_MIN + 1) as usize;
    let mut topsoil = vec![None; len];
    let mut profile = vec![None; len];
    for (ts, sensors) in &slots {
        let i = ((ts.minutes() - first.minutes()) / MODEL_STEP_MIN) as usize;
        let mut top = Vec::new();
        let mut all = Vec::with_capacity(sensors.len());
        for (&(_, depth), &(sum, n)) in sensors {
            let v = F::lit(sum / n as f64);
            if depth == TOPSOIL_DEPTH_CM {
                top.push(v);
            }
            all.push(v);
        }
        if !top.is_empty() && top.len() >= floors.topsoil_min_probes {
            topsoil[i] = Some(sorted_mean(top));
        }
        if !all.is_empty() && all.len() >= floors.profile_min_sensors {
            profile[i] = Some(sorted_mean(all));
        }
    }
    TargetSeries {
        topsoil: RegularSeries::new(first, MODEL_STEP_MIN, topsoil).expect("positive step"),
        profile: RegularSeries::new(first, MODEL_STEP_MIN, profile).expect("positive step"),
    }
}

/// Row accounting for [`build_dataset`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub target_kind: Option<TargetKind>,
    /// Target-series timesteps considered.
    pub candidates: usize,
    pub outside_drainage: usize,
    pub missing_target: usize,
    pub missing_feature: usize,
    pub kept: usize,
}

impl fmt::Display for BuildReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} candidate timesteps, {} outside drainage, {} missing target, {} missing feature, {} kept",
            self.candidates, self.outside_drainage, self.missing_target, self.missing_feature, self.kept
        )
    }
}

/// Feature matrix plus target, one row per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    target_kind: TargetKind,
    features: Vec<Feature>,
    timestamps: Vec<Timestamp>,
    x: Vec<F>,
    y: Vec<F>,
}

impl<F: Scalar> Dataset<F> {
    /// Builds a dataset from complete rows. Every value must be finite.
    pub fn from_rows(
        target_kind: TargetKind,
        features: Vec<Feature>,
        rows: impl IntoIterator<Item = (Timestamp, Vec<F>, F)>,
    ) -> Result<Self, DatasetError> {
        let p = features.len();
        let mut ds = Self {
            target_kind,
            features,
            timestamps: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
        };
        for (i, (ts, x, y)) in rows.into_iter().enumerate() {
            if x.len() != p || !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { row: i });
            }
            ds.timestamps.push(ts);
            ds.x.extend(x);
            ds.y.push(y);
        }
        Ok(ds)
    }

    pub fn target_kind(&self) -> TargetKind {
        self.target_kind
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn row(&self, i: usize) -> &[F] {
        let p = self.features.len();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> + '_ {
        self.x.chunks(self.features.len().max(1)).take(self.len())
    }

    pub fn targets(&self) -> &[F] {
        &self.y
    }

    pub fn column(&self, j: usize) -> Vec<F> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn feature_index(&self, feature: Feature) -> Option<usize> {
        self.features.iter().position(|f| *f == feature)
    }

    /// Copy with column `j` replaced.
    pub fn with_column(&self, j: usize, values: &[F]) -> Self {
        assert_eq!(values.len(), self.len(), "column length");
        let mut out = self.clone();
        let p = self.features.len();
        for (i, v) in values.iter().enumerate() {
            out.x[i * p + j] = *v;
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let p = self.features.len();
        let mut out = Self {
            target_kind: self.target_kind,
            features: self.features.clone(),
            timestamps: Vec::with_capacity(indices.len()),
            x: Vec::with_capacity(indices.len() * p),
            y: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            out.timestamps.push(self.timestamps[i]);
            out.x.extend_from_slice(self.row(i));
            out.y.push(self.y[i]);
        }
        out
    }

    /// SHA-256 over timestamps and the bit patterns of every value, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.target_kind.to_string().as_bytes());
        for f in &self.features {
            h.update(f.column().as_bytes());
        }
        for i in 0..self.len() {
            h.update(self.timestamps[i].minutes().to_le_bytes());
            for v in self.row(i) {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
            h.update(self.y[i].as_f64().to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Header `timestamp,<feature columns>,target_c`.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> io::Result<()> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        let mut header = vec!["timestamp"];
        header.extend(self.features.iter().map(|f| f.column()));
        header.push("target_c");
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            write!(w, "{}", self.timestamps[i])?;
            for v in self.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", self.y[i])?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, target_kind: TargetKind) -> Result<Self, DatasetError> {
        let mut rdr = ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| DatasetError::Csv(e.to_string()))?
            .clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "timestamp" || cols[cols.len() - 1] != "target_c" {
            return Err(DatasetError::Csv(format!(
                "unexpected header {:?}",
                cols.join(",")
            )));
        }
        let features = cols[1..cols.len() - 1]
            .iter()
            .map(|c| {
                Feature::from_column(c)
                    .ok_or_else(|| DatasetError::Csv(format!("unknown feature column `{c}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| DatasetError::Csv(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |what: &str| DatasetError::Csv(format!("line {line}: bad {what}"));
            let ts = Timestamp::parse(&rec[0]).map_err(|_| bad("timestamp"))?.ts;
            let num = |s: &str| s.parse::<f64>().map(F::lit).map_err(|_| bad("number"));
            let x = (1..cols.len() - 1)
                .map(|j| num(&rec[j]))
                .collect::<Result<Vec<_>, _>>()?;
            let y = num(&rec[cols.len() - 1])?;
            rows.push((ts, x, y));
        }
        Self::from_rows(target_kind, features, rows)
    }
}

/// Joins features and the chosen target on drainage-phase timesteps.
///
/// Candidates are the target series' timesteps. A timestep is dropped when it
/// lies outside every interval, when the target is missing, or when any
/// selected feature is missing (checked in that order).
pub fn build_dataset<F: Scalar>(
    meteo30: &MeteoSeries<F>,
    targets: &TargetSeries<F>,
    phases: &[DrainageInterval],
    target_kind: TargetKind,
    features: &[Feature],
) -> Result<(Dataset<F>, BuildReport), DatasetError> {
    let target = targets.get(target_kind);
    let mut report = BuildReport {
        target_kind: Some(target_kind),
        ..Default::default()
    };
    let mut rows = Vec::new();
    for (ts, y) in target.iter() {
        report.candidates += 1;
        if !in_any_interval(phases, ts) {
            report.outside_drainage += 1;
            continue;
        }
        let Some(y) = y else {
            report.missing_target += 1;
            continue;
        };
        let x: Option<Vec<F>> = features.iter().map(|f| meteo30.get(*f).get(ts)).collect();
        match x {
            Some(x) => rows.push((ts, x, y)),
            None => report.missing_feature += 1,
        }
    }
    report.kept = rows.len();
    if rows.is_empty() {
        return Err(DatasetError::Empty(report));
    }
    let ds = Dataset::from_rows(target_kind, features.to_vec(), rows)?;
    for (row, ts) in ds.timestamps().iter().enumerate() {
        if !in_any_interval(phases, *ts) {
            return Err(DatasetError::OutsideDrainage { row, ts: *ts });
        }
    }
    Ok((ds, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Uniform row-wise partition.
    #[default]
    Random,
    /// Earliest rows train, latest rows test.
    Temporal,
}

pub const MIN_SPLIT_ROWS: usize = 10;

/// Train and test row indices, each in ascending order.
pub fn split_indices(
    n: usize,
    spec: SplitSpec,
    mode: SplitMode,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(spec.train_fraction));
    }
    if n < MIN_SPLIT_ROWS {
        return Err(DatasetError::TooFewRows {
            needed: MIN_SPLIT_ROWS,
            got: n,
        });
    }
    let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let order = match mode {
        SplitMode::Random => PortableRng::derived(spec.seed, purpose::SPLIT, &[]).permutation(n),
        SplitMode::Temporal => (0..n).collect(),
    };
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split<F: Scalar>(
    ds: &Dataset<F>,
    spec: SplitSpec,
    mode: SplitMode,
) -> Result<(Dataset<F>, Dataset<F>), DatasetError> {
    let (train, test) = split_indices(ds.len(), spec, mode)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Per-feature z-score with statistics from the training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<F> {
    pub means: Vec<F>,
    /// Population standard deviations.
    pub stds: Vec<F>,
}

/// Mean and population standard deviation, or `None` when the values are all equal.
pub(crate) fn mean_std<F: Scalar>(values: &[F]) -> Option<(F, F)> {
    let first = *values.first()?;
    if values.iter().all(|v| *v == first) {
        return None;
    }
    let n = F::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<F>() / n;
    let var = values.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() / n;
    let std = var.sqrt();
    (std > F::zero() && std.is_finite()).then_some((mean, std))
}

impl<F: Scalar> Standardizer<F> {
    pub fn fit(train: &Dataset<F>) -> Result<Self, DatasetError> {
        let mut means = Vec::with_capacity(train.n_features());
        let mut stds = Vec::with_capacity(train.n_features());
        for (j, feature) in train.features().iter().enumerate() {
            let (m, s) = mean_std(&train.column(j)).ok_or(DatasetError::ZeroVariance(*feature))?;
            means.push(m);
            stds.push(s);
        }
        Ok(Self { means, stds })
    }

    pub fn transform_row(&self, row: &[F]) -> Vec<F> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (*x - *m) / *s)
            .collect()
    }

    pub fn inverse_row(&self, z: &[F]) -> Vec<F> {
        z.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(z, (m, s))| *z * *s + *m)
            .collect()
    }

    pub fn transform(&self, ds: &Dataset<F>) -> Dataset<F> {
        let mut out = ds.clone();
        out.x = ds.rows().flat_map(|r| self.transform_row(r)).collect();
        out
    }

    pub fn inverse(&self, ds: &Dataset<F>) -> Dataset<F> {
        let mut out = ds.clone();
        out.x = ds.rows().flat_map(|r| self.inverse_row(r)).collect();
        out
    }
}
