//! The `satthermo` pipeline: synthetic fixtures, ingestion, training,
//! permutation importance, long-range prediction and viscosity.
//!
//! Every command writes its outputs through a staged [`output::OutputSet`],
//! so a failing command leaves no partial files behind.

pub mod output;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use satthermo_core::dataset::{
    build_dataset, build_targets, split, BuildReport, CoverageFloors, Dataset, DatasetError,
    Feature, MeteoSeries, SplitMode, SplitSpec, TargetKind, DEFAULT_FEATURES, MODEL_STEP_MIN,
};
use satthermo_core::evaluation::{permutation_importance, ImportanceReport, MetricReport};
use satthermo_core::ingestion::{
    identify_drainage_phases, infer_step, parse_meteo_csv, parse_ops_csv, parse_probe_csv,
    write_meteo, write_ops, write_probes, DrainageInterval, IngestReport, MeteoRecord, OpsRecord,
    ParseOptions, ProbeRecord, DEFAULT_LEVEL_FLOOR_CM,
};
use satthermo_core::models::{
    fit_model, load_model, read_model, write_model, MlrModel, ModelKind, ModelParams,
    NnHyperParams, Regressor, RfHyperParams, TrainedModel, TrainingMeta,
};
use satthermo_core::physics::{viscosity, ViscosityParams};
use satthermo_core::timeseries::{daily_mean, filter_outliers, iqr_bounds, RegularSeries};
use satthermo_core::Timestamp;

use output::{OutputSet, Provenance};
use synth::SynthSpec;

pub const PREDICTIONS_HEADER: &str = "timestamp,t_topsoil_pred_c,t_profile_pred_c,viscosity_pa_s";
pub const DAILY_HEADER: &str = "date,t_topsoil_daily_c,t_profile_daily_c,viscosity_daily_pa_s";
pub const VISCOSITY_HEADER: &str = "temp_c,viscosity_pa_s";
/// Meteorological variables screened with the IQR rule before the join.
pub const SCREENED_FEATURES: [Feature; 3] = [Feature::Precip, Feature::WindSpeed, Feature::WindDir];

#[derive(Parser, Debug)]
#[command(
    name = "satthermo",
    version,
    about = "Soil effluent temperature modeling pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic meteo, probe and operations CSVs.
    Synth(SynthArgs),
    /// Parse the source CSVs and write drainage-phase datasets for both targets.
    Ingest(IngestArgs),
    /// Fit a model on the train split and report train/test metrics.
    Train(TrainArgs),
    /// Permutation importance of each feature for a trained model.
    Importance(ImportanceArgs),
    /// Predict half-hourly effluent temperatures and viscosity from a meteo file.
    Predict(PredictArgs),
    /// Dynamic viscosity of water for one temperature or a CSV column.
    Viscosity(ViscosityArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Fail on the first malformed input row instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    /// Omit the `#` provenance line from CSV outputs.
    #[arg(long)]
    pub no_provenance: bool,
}

impl CommonArgs {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            seed: 42,
            out: out.into(),
            strict: false,
            no_provenance: false,
        }
    }

    fn comment(&self, p: &Provenance) -> Option<String> {
        (!self.no_provenance).then(|| p.line())
    }

    fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            strict: self.strict,
        }
    }
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 365)]
    pub days: u32,
    #[arg(long, default_value = "2023-01-01T00:00Z")]
    pub start: String,
    /// Meteorological sampling step in minutes (must divide 30).
    #[arg(long, default_value_t = 10)]
    pub meteo_step: i64,
    /// Standard deviation of the probe noise, °C.
    #[arg(long, default_value_t = 1.7)]
    pub noise_sigma: f64,
    /// Rescale ambient variability so the noise-limited R² equals this value.
    #[arg(long)]
    pub target_r2: Option<f64>,
    /// Write only the meteo file.
    #[arg(long)]
    pub meteo_only: bool,
}

impl SynthArgs {
    pub fn new(common: CommonArgs) -> Self {
        Self {
            common,
            days: 365,
            start: "2023-01-01T00:00Z".into(),
            meteo_step: 10,
            noise_sigma: 1.7,
            target_r2: None,
            meteo_only: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub files: Vec<PathBuf>,
    pub meteo_rows: usize,
    pub probe_rows: usize,
    pub ops_rows: usize,
    pub drainage_intervals: usize,
    pub signal_scale: f64,
    pub theoretical_r2: Option<f64>,
}

impl fmt::Display for SynthSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "meteo rows {}, probe rows {}, ops rows {}, drainage intervals {}, signal scale {:.6}",
            self.meteo_rows,
            self.probe_rows,
            self.ops_rows,
            self.drainage_intervals,
            self.signal_scale
        )?;
        if let Some(r2) = self.theoretical_r2 {
            write!(f, ", theoretical R² {r2:.4}")?;
        }
        Ok(())
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<SynthSummary> {
    ensure!(args.days > 0, "--days must be positive");
    ensure!(
        args.meteo_step > 0 && MODEL_STEP_MIN % args.meteo_step == 0,
        "--meteo-step must divide {MODEL_STEP_MIN} minutes"
    );
    ensure!(
        args.noise_sigma >= 0.0 && args.noise_sigma.is_finite(),
        "--noise-sigma must be finite and non-negative"
    );
    if let Some(r2) = args.target_r2 {
        ensure!(r2 > 0.0 && r2 < 1.0, "--target-r2 must lie in (0, 1)");
        ensure!(
            args.noise_sigma > 0.0,
            "--target-r2 needs a positive --noise-sigma"
        );
    }
    let start = Timestamp::parse(&args.start)
        .map_err(|e| anyhow!("--start: {e}"))?
        .ts;
    ensure!(
        start.minutes() % MODEL_STEP_MIN == 0,
        "--start must lie on a half-hour boundary"
    );
    let spec = SynthSpec {
        seed: args.common.seed,
        start,
        days: args.days,
        meteo_step: args.meteo_step,
        noise_sigma: args.noise_sigma,
        target_r2: args.target_r2,
    };
    let prov = Provenance::new("synth", spec.seed)
        .field("days", spec.days)
        .field("meteo_step", spec.meteo_step)
        .field("noise_sigma", spec.noise_sigma);
    let comment = args.common.comment(&prov);
    let comment = comment.as_deref();

    let mut out = OutputSet::new(&args.common.out)?;
    if args.meteo_only && args.target_r2.is_none() {
        let meteo = synth::generate_meteo(&spec);
        out.write("meteo.csv", |w| Ok(write_meteo(w, &meteo, comment)?))?;
        return Ok(SynthSummary {
            files: out.commit()?,
            meteo_rows: meteo.len(),
            probe_rows: 0,
            ops_rows: 0,
            drainage_intervals: 0,
            signal_scale: 1.0,
            theoretical_r2: None,
        });
    }
    let data = synth::generate(&spec);
    out.write("meteo.csv", |w| Ok(write_meteo(w, &data.meteo, comment)?))?;
    if !args.meteo_only {
        out.write("probes.csv", |w| {
            Ok(write_probes(w, &data.probes, comment)?)
        })?;
        out.write("ops.csv", |w| Ok(write_ops(w, &data.ops, comment)?))?;
    }
    Ok(SynthSummary {
        files: out.commit()?,
        meteo_rows: data.meteo.len(),
        probe_rows: if args.meteo_only {
            0
        } else {
            data.probes.len()
        },
        ops_rows: if args.meteo_only { 0 } else { data.ops.len() },
        drainage_intervals: data.phases.len(),
        signal_scale: data.signal_scale,
        theoretical_r2: (args.noise_sigma > 0.0).then(|| data.theoretical_r2(args.noise_sigma)),
    })
}

// ---------------------------------------------------------------- ingest

#[derive(Args, Debug, Clone)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Meteo CSV (default `<out>/meteo.csv`).
    #[arg(long)]
    pub meteo: Option<PathBuf>,
    /// Probe CSV (default `<out>/probes.csv`).
    #[arg(long)]
    pub probes: Option<PathBuf>,
    /// Operations CSV (default `<out>/ops.csv`).
    #[arg(long)]
    pub ops: Option<PathBuf>,
    /// Water level at or below which drainage is over, cm.
    #[arg(long, default_value_t = DEFAULT_LEVEL_FLOOR_CM)]
    pub level_floor: f64,
    /// IQR multiplier for the outlier screen.
    #[arg(long, default_value_t = 1.5)]
    pub iqr_k: f64,
}

impl IngestArgs {
    pub fn new(common: CommonArgs) -> Self {
        Self {
            common,
            meteo: None,
            probes: None,
            ops: None,
            level_floor: DEFAULT_LEVEL_FLOOR_CM,
            iqr_k: 1.5,
        }
    }
}

/// Row counts at each preprocessing stage.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestRunReport {
    pub meteo: IngestReport,
    pub probes: IngestReport,
    pub ops: IngestReport,
    pub meteo_step_min: i64,
    /// Half-hour slots with an ambient temperature after resampling.
    pub resampled_slots: usize,
    pub outliers_removed: BTreeMap<String, usize>,
    pub drainage_intervals: usize,
    pub drainage_minutes: i64,
    pub datasets: Vec<BuildReport>,
}

impl fmt::Display for IngestRunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in [&self.meteo, &self.probes, &self.ops] {
            writeln!(
                f,
                "parsed {}: {} read, {} kept, {} skipped",
                r.source,
                r.rows_read,
                r.rows_kept,
                r.rows_skipped()
            )?;
        }
        writeln!(
            f,
            "resampled: {} half-hour slots from a {}-minute meteo step",
            self.resampled_slots, self.meteo_step_min
        )?;
        for (col, n) in &self.outliers_removed {
            writeln!(f, "iqr screen: {n} removed from {col}")?;
        }
        writeln!(
            f,
            "drainage: {} intervals covering {} minutes",
            self.drainage_intervals, self.drainage_minutes
        )?;
        for b in &self.datasets {
            let kind = b
                .target_kind
                .map_or_else(|| "?".to_string(), |k| k.to_string());
            writeln!(f, "joined {kind}: {b}")?;
        }
        Ok(())
    }
}

pub struct Datasets {
    pub topsoil: Dataset<f64>,
    pub profile: Dataset<f64>,
    pub phases: Vec<DrainageInterval>,
    pub report: IngestRunReport,
}

/// Meteo records as half-hourly series, whatever their native step.
pub fn meteo_half_hourly(records: &[MeteoRecord]) -> Result<MeteoSeries<f64>> {
    let step = infer_step(records.iter().map(|r| r.ts)).unwrap_or(MODEL_STEP_MIN);
    ensure!(
        MODEL_STEP_MIN % step == 0,
        "meteo step of {step} minutes cannot be averaged onto a {MODEL_STEP_MIN}-minute grid"
    );
    Ok(MeteoSeries::from_records(records, step)?.resample(MODEL_STEP_MIN)?)
}

/// Parsed records to datasets: resample, screen, find drainage phases, join.
pub fn build_datasets(
    meteo: &[MeteoRecord],
    probes: &[ProbeRecord],
    ops: &[OpsRecord],
    level_floor: f64,
    iqr_k: f64,
    mut report: IngestRunReport,
) -> Result<Datasets> {
    report.meteo_step_min = infer_step(meteo.iter().map(|r| r.ts)).unwrap_or(MODEL_STEP_MIN);
    let mut m30 = meteo_half_hourly(meteo)?;
    report.resampled_slots = m30.t_ambient.count_present();
    for feature in SCREENED_FEATURES {
        let values = m30.get(feature).present_values();
        if values.is_empty() {
            continue;
        }
        let bounds = iqr_bounds(&values, iqr_k)?;
        let (screened, removed) = filter_outliers(m30.get(feature), &bounds);
        *m30.get_mut(feature) = screened;
        report
            .outliers_removed
            .insert(feature.column().to_string(), removed);
    }
    let targets = build_targets::<f64>(probes, CoverageFloors::default());
    let phases = identify_drainage_phases(ops, level_floor);
    report.drainage_intervals = phases.len();
    report.drainage_minutes = phases
        .iter()
        .map(|p| p.end.minutes() - p.start.minutes())
        .sum();

    let mut built = Vec::new();
    for kind in [TargetKind::Topsoil, TargetKind::Profile] {
        match build_dataset(&m30, &targets, &phases, kind, &DEFAULT_FEATURES) {
            Ok((ds, r)) => {
                report.datasets.push(r);
                built.push(Some(ds));
            }
            Err(DatasetError::Empty(r)) => {
                report.datasets.push(r);
                built.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let profile = built.pop().flatten();
    let topsoil = built.pop().flatten();
    match (topsoil, profile) {
        (Some(topsoil), Some(profile)) => Ok(Datasets {
            topsoil,
            profile,
            phases,
            report,
        }),
        _ => bail!("empty dataset after preprocessing\n{report}"),
    }
}

pub fn dataset_file_name(kind: TargetKind) -> String {
    format!("dataset_{kind}.csv")
}

#[derive(Debug, Clone)]
pub struct IngestSummary {
    pub report: IngestRunReport,
    pub files: Vec<PathBuf>,
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<IngestSummary> {
    ensure!(args.level_floor.is_finite(), "--level-floor must be finite");
    ensure!(
        args.iqr_k.is_finite() && args.iqr_k >= 0.0,
        "--iqr-k must be finite and non-negative"
    );
    let dir = &args.common.out;
    let meteo_path = args.meteo.clone().unwrap_or_else(|| dir.join("meteo.csv"));
    let probe_path = args
        .probes
        .clone()
        .unwrap_or_else(|| dir.join("probes.csv"));
    let ops_path = args.ops.clone().unwrap_or_else(|| dir.join("ops.csv"));
    let opts = args.common.parse_options();

    let (meteo, meteo_report) = parse_meteo_csv(&meteo_path, opts)?;
    let (probes, probe_report) = parse_probe_csv(&probe_path, opts)?;
    let (ops, ops_report) = parse_ops_csv(&ops_path, opts)?;
    let report = IngestRunReport {
        meteo: meteo_report,
        probes: probe_report,
        ops: ops_report,
        ..Default::default()
    };
    let data = build_datasets(&meteo, &probes, &ops, args.level_floor, args.iqr_k, report)?;

    let prov = Provenance::new("ingest", args.common.seed)
        .input(&meteo_path)?
        .input(&probe_path)?
        .input(&ops_path)?
        .field("level_floor", args.level_floor)
        .field("iqr_k", args.iqr_k);
    let comment = args.common.comment(&prov);
    let mut out = OutputSet::new(dir)?;
    for ds in [&data.topsoil, &data.profile] {
        out.write(&dataset_file_name(ds.target_kind()), |w| {
            Ok(ds.write_csv(w, comment.as_deref())?)
        })?;
    }
    out.write("ingest_report.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &data.report)?;
        Ok(writeln!(w)?)
    })?;
    Ok(IngestSummary {
        report: data.report,
        files: out.commit()?,
    })
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "mlr")]
    pub model: ModelKind,
    #[arg(long, default_value = "topsoil")]
    pub target: TargetKind,
    /// Fraction of rows used for training.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Split by time (earliest rows train) instead of at random.
    #[arg(long)]
    pub temporal: bool,
    /// Dataset CSV (default `<out>/dataset_<target>.csv`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of trees for `--model rf`.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Training epochs for `--model nn`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Worker threads for parallel fitting; never changes the result.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl TrainArgs {
    pub fn new(common: CommonArgs, model: ModelKind, target: TargetKind) -> Self {
        Self {
            common,
            model,
            target,
            split: 0.8,
            temporal: false,
            dataset: None,
            trees: None,
            epochs: None,
            workers: None,
        }
    }
}

pub fn model_file_name(kind: ModelKind, target: TargetKind) -> String {
    format!("model_{kind}_{target}.json")
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: TrainedModel<f64>,
    pub metrics: MetricReport<f64>,
    pub files: Vec<PathBuf>,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.metrics;
        write!(
            f,
            "{} {}: train R² {:.4} RMSE {:.4} (n={}), test R² {:.4} RMSE {:.4} (n={})",
            self.model.kind(),
            self.model.meta.target_kind,
            m.r2_train,
            m.rmse_train,
            m.n_train,
            m.r2_test,
            m.rmse_test,
            m.n_test
        )?;
        if let ModelParams::Mlr(mlr) = &self.model.params {
            for (feat, c) in mlr.features.iter().zip(&mlr.coefficients) {
                write!(f, "\n  coef {feat} = {c}")?;
            }
            write!(f, "\n  intercept = {}", mlr.intercept)?;
        }
        Ok(())
    }
}

fn read_dataset(path: &Path, kind: TargetKind) -> Result<Dataset<f64>> {
    let f = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    Dataset::read_csv(BufReader::new(f), kind)
        .with_context(|| format!("reading dataset {}", path.display()))
}

fn split_mode(temporal: bool) -> SplitMode {
    if temporal {
        SplitMode::Temporal
    } else {
        SplitMode::Random
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    ensure!(
        args.split > 0.0 && args.split < 1.0,
        "--split must lie strictly between 0 and 1, got {}",
        args.split
    );
    let seed = args.common.seed;
    let path = args
        .dataset
        .clone()
        .unwrap_or_else(|| args.common.out.join(dataset_file_name(args.target)));
    let data = read_dataset(&path, args.target)?;
    let spec = SplitSpec {
        train_fraction: args.split,
        seed,
    };
    let mode = split_mode(args.temporal);
    let (train, test) = split(&data, spec, mode)?;

    let mut nn = NnHyperParams::default();
    if let Some(e) = args.epochs {
        nn.epochs = e;
    }
    let mut rf = RfHyperParams {
        workers: args.workers,
        ..Default::default()
    };
    if let Some(t) = args.trees {
        ensure!(t > 0, "--trees must be positive");
        rf.n_trees = t;
    }
    let params = fit_model(args.model, &train, seed, &nn, &rf)
        .with_context(|| format!("fitting {} model", args.model))?;
    let model = TrainedModel {
        params,
        meta: TrainingMeta {
            target_kind: args.target,
            seed,
            data_fingerprint: data.fingerprint(),
            n_train: train.len(),
            split: Some(spec),
            split_mode: mode,
        },
    };
    let metrics = MetricReport::compute(&model, &train, &test)?;

    let prov = Provenance::new("train", seed)
        .input(&path)?
        .field("model", args.model)
        .field("target", args.target)
        .field("split", args.split);
    let comment = args.common.comment(&prov);
    let mut out = OutputSet::new(&args.common.out)?;
    out.write(&model_file_name(args.model, args.target), |w| {
        Ok(write_model(&model, w)?)
    })?;
    out.write(
        &format!("metrics_{}_{}.csv", args.model, args.target),
        |w| Ok(metrics.write_csv(w, comment.as_deref())?),
    )?;
    Ok(TrainSummary {
        model,
        metrics,
        files: out.commit()?,
    })
}

// ---------------------------------------------------------------- importance

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSet {
    Train,
    Test,
}

#[derive(Args, Debug, Clone)]
pub struct ImportanceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "mlr")]
    pub model: ModelKind,
    #[arg(long, default_value = "topsoil")]
    pub target: TargetKind,
    /// Model file (default `<out>/model_<model>_<target>.json`).
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Dataset CSV the model was trained on (default `<out>/dataset_<target>.csv`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, value_enum, default_value_t = EvalSet::Test)]
    pub on: EvalSet,
    #[arg(long)]
    pub workers: Option<usize>,
}

impl ImportanceArgs {
    pub fn new(common: CommonArgs, model: ModelKind, target: TargetKind) -> Self {
        Self {
            common,
            model,
            target,
            model_file: None,
            dataset: None,
            repeats: 10,
            on: EvalSet::Test,
            workers: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImportanceSummary {
    pub report: ImportanceReport<f64>,
    pub files: Vec<PathBuf>,
}

impl fmt::Display for ImportanceSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "baseline R² {:.4}, {} repeats, seed {}",
            self.report.baseline_r2, self.report.repeats, self.report.seed
        )?;
        for fi in &self.report.features {
            write!(
                f,
                "\n  {}: mean ΔR² {:.6} (std {:.6})",
                fi.feature, fi.mean, fi.std
            )?;
        }
        Ok(())
    }
}

pub fn cmd_importance(args: &ImportanceArgs) -> Result<ImportanceSummary> {
    ensure!(args.repeats > 0, "--repeats must be at least 1");
    let dir = &args.common.out;
    let model_path = args
        .model_file
        .clone()
        .unwrap_or_else(|| dir.join(model_file_name(args.model, args.target)));
    let model: TrainedModel<f64> = load_model(&model_path)
        .with_context(|| format!("loading model {}", model_path.display()))?;
    let kind = model.meta.target_kind;
    let data_path = args
        .dataset
        .clone()
        .unwrap_or_else(|| dir.join(dataset_file_name(kind)));
    let data = read_dataset(&data_path, kind)?;
    ensure!(
        data.fingerprint() == model.meta.data_fingerprint,
        "{} is not the dataset this model was trained on",
        data_path.display()
    );
    let subset = match model.meta.split {
        Some(spec) => {
            let (train, test) = split(&data, spec, model.meta.split_mode)?;
            match args.on {
                EvalSet::Train => train,
                EvalSet::Test => test,
            }
        }
        None => data,
    };
    let seed = args.common.seed;
    let report = permutation_importance(&model, &subset, args.repeats, seed, args.workers)?;

    let on = match args.on {
        EvalSet::Train => "train",
        EvalSet::Test => "test",
    };
    let prov = Provenance::new("importance", seed)
        .input(&model_path)?
        .input(&data_path)?
        .field("repeats", args.repeats)
        .field("on", on);
    let comment = args.common.comment(&prov);
    let stem = format!("{}_{}", model.kind(), kind);
    let mut out = OutputSet::new(dir)?;
    out.write(&format!("importance_raw_{stem}.csv"), |w| {
        Ok(report.write_raw_csv(w, comment.as_deref())?)
    })?;
    out.write(&format!("importance_summary_{stem}.csv"), |w| {
        Ok(report.write_summary_csv(w, comment.as_deref())?)
    })?;
    Ok(ImportanceSummary {
        report,
        files: out.commit()?,
    })
}

// ---------------------------------------------------------------- predict

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Meteo CSV at any step dividing 30 minutes.
    #[arg(long)]
    pub meteo: PathBuf,
    /// Use the built-in reference topsoil and profile equations.
    #[arg(long)]
    pub paper_equations: bool,
    #[arg(long, required_unless_present = "paper_equations")]
    pub topsoil_model: Option<PathBuf>,
    #[arg(long, required_unless_present = "paper_equations")]
    pub profile_model: Option<PathBuf>,
    /// Also write daily means.
    #[arg(long)]
    pub daily: bool,
}

impl PredictArgs {
    pub fn new(common: CommonArgs, meteo: impl Into<PathBuf>) -> Self {
        Self {
            common,
            meteo: meteo.into(),
            paper_equations: false,
            topsoil_model: None,
            profile_model: None,
            daily: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRow {
    pub ts: Timestamp,
    pub t_topsoil_pred: f64,
    pub t_profile_pred: f64,
    pub viscosity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyRow {
    pub date: Timestamp,
    pub t_topsoil: Option<f64>,
    pub t_profile: Option<f64>,
    pub viscosity: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PredictSummary {
    pub rows: usize,
    pub daily_rows: Option<usize>,
    pub files: Vec<PathBuf>,
}

impl fmt::Display for PredictSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} half-hourly predictions", self.rows)?;
        if let Some(d) = self.daily_rows {
            write!(f, ", {d} daily rows")?;
        }
        Ok(())
    }
}

fn load_for_target(path: &Path, kind: TargetKind) -> Result<Box<dyn Regressor<f64>>> {
    let f = File::open(path).with_context(|| format!("opening model {}", path.display()))?;
    let model: TrainedModel<f64> = read_model(BufReader::new(f))
        .with_context(|| format!("reading model {}", path.display()))?;
    ensure!(
        model.meta.target_kind == kind,
        "{} predicts {} temperature, expected {kind}",
        path.display(),
        model.meta.target_kind
    );
    Ok(Box::new(model))
}

/// Half-hourly predictions for every slot where both models have all inputs.
pub fn predict_rows(
    m30: &MeteoSeries<f64>,
    topsoil: &dyn Regressor<f64>,
    profile: &dyn Regressor<f64>,
    params: &ViscosityParams<f64>,
) -> Vec<PredictionRow> {
    let inputs = |feats: &[Feature], i: usize| -> Option<Vec<f64>> {
        feats.iter().map(|f| m30.get(*f).values()[i]).collect()
    };
    (0..m30.t_ambient.len())
        .filter_map(|i| {
            let xt = inputs(topsoil.features(), i)?;
            let xp = inputs(profile.features(), i)?;
            let t_topsoil_pred = topsoil.predict_row(&xt);
            let t_profile_pred = profile.predict_row(&xp);
            Some(PredictionRow {
                ts: m30.t_ambient.timestamp_at(i),
                t_topsoil_pred,
                t_profile_pred,
                viscosity: viscosity(t_profile_pred, params).ok(),
            })
        })
        .collect()
}

/// Calendar-day means of each prediction column.
pub fn daily_rows(rows: &[PredictionRow]) -> Result<Vec<DailyRow>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let col = |f: &dyn Fn(&PredictionRow) -> Option<f64>| -> Result<RegularSeries<f64>> {
        let s = RegularSeries::from_samples(
            rows.iter().filter_map(|r| f(r).map(|v| (r.ts, v))),
            MODEL_STEP_MIN,
        )?;
        Ok(daily_mean(&s)?)
    };
    let top = col(&|r| Some(r.t_topsoil_pred))?;
    let prof = col(&|r| Some(r.t_profile_pred))?;
    let visc = col(&|r| r.viscosity)?;
    Ok(top
        .iter()
        .filter_map(|(day, t)| {
            t.map(|t| DailyRow {
                date: day,
                t_topsoil: Some(t),
                t_profile: prof.get(day),
                viscosity: visc.get(day),
            })
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn cmd_predict(args: &PredictArgs) -> Result<PredictSummary> {
    let (topsoil, profile): (Box<dyn Regressor<f64>>, Box<dyn Regressor<f64>>) =
        if args.paper_equations {
            (
                Box::new(MlrModel::reference_topsoil()),
                Box::new(MlrModel::reference_profile()),
            )
        } else {
            let (Some(t), Some(p)) = (&args.topsoil_model, &args.profile_model) else {
                bail!("predict needs --topsoil-model and --profile-model, or --paper-equations");
            };
            (
                load_for_target(t, TargetKind::Topsoil)?,
                load_for_target(p, TargetKind::Profile)?,
            )
        };
    let (meteo, report) = parse_meteo_csv(&args.meteo, args.common.parse_options())?;
    ensure!(
        !meteo.is_empty(),
        "no usable rows in {}\n{report}",
        args.meteo.display()
    );
    let m30 = meteo_half_hourly(&meteo)?;
    let params = ViscosityParams::default();
    let rows = predict_rows(&m30, topsoil.as_ref(), profile.as_ref(), &params);

    let mut prov = Provenance::new("predict", args.common.seed).input(&args.meteo)?;
    if args.paper_equations {
        prov = prov.field("models", "reference-equations");
    } else {
        for p in [&args.topsoil_model, &args.profile_model]
            .into_iter()
            .flatten()
        {
            prov = prov.input(p)?;
        }
    }
    let comment = args.common.comment(&prov);
    let mut out = OutputSet::new(&args.common.out)?;
    out.write("predictions.csv", |w| {
        if let Some(c) = &comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{PREDICTIONS_HEADER}")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.ts,
                r.t_topsoil_pred,
                r.t_profile_pred,
                opt(r.viscosity)
            )?;
        }
        Ok(())
    })?;
    let mut daily_count = None;
    if args.daily {
        let daily = daily_rows(&rows)?;
        daily_count = Some(daily.len());
        out.write("predictions_daily.csv", |w| {
            if let Some(c) = &comment {
                writeln!(w, "# {c}")?;
            }
            writeln!(w, "{DAILY_HEADER}")?;
            for d in &daily {
                writeln!(
                    w,
                    "{},{},{},{}",
                    d.date.date(),
                    opt(d.t_topsoil),
                    opt(d.t_profile),
                    opt(d.viscosity)
                )?;
            }
            Ok(())
        })?;
    }
    Ok(PredictSummary {
        rows: rows.len(),
        daily_rows: daily_count,
        files: out.commit()?,
    })
}

// ---------------------------------------------------------------- viscosity

#[derive(Args, Debug, Clone)]
pub struct ViscosityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Single temperature, °C.
    #[arg(
        long,
        allow_hyphen_values = true,
        conflicts_with = "csv",
        required_unless_present = "csv"
    )]
    pub temp: Option<f64>,
    /// CSV with a temperature column; writes `<out>/viscosity.csv`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Temperature column name in `--csv`.
    #[arg(long, default_value = "temp_c")]
    pub column: String,
}

impl ViscosityArgs {
    pub fn new(common: CommonArgs) -> Self {
        Self {
            common,
            temp: None,
            csv: None,
            column: "temp_c".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViscosityOutput {
    Value(f64),
    File { rows: usize, path: PathBuf },
}

impl fmt::Display for ViscosityOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Value(v) => write!(f, "{v}"),
            Self::File { rows, path } => write!(f, "{rows} rows written to {}", path.display()),
        }
    }
}

pub fn cmd_viscosity(args: &ViscosityArgs) -> Result<ViscosityOutput> {
    let params = ViscosityParams::default();
    if let Some(t) = args.temp {
        return Ok(ViscosityOutput::Value(viscosity(t, &params)?));
    }
    let Some(path) = &args.csv else {
        bail!("viscosity needs --temp or --csv")
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == args.column)
        .ok_or_else(|| anyhow!("{} has no `{}` column", path.display(), args.column))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let text = rec.get(col).unwrap_or("");
        let t: f64 = text
            .parse()
            .map_err(|_| anyhow!("line {line}: `{text}` is not a temperature"))?;
        let v = viscosity(t, &params).with_context(|| format!("line {line}"))?;
        rows.push((t, v));
    }
    let prov = Provenance::new("viscosity", args.common.seed).input(path)?;
    let comment = args.common.comment(&prov);
    let mut out = OutputSet::new(&args.common.out)?;
    out.write("viscosity.csv", |w| {
        if let Some(c) = &comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{VISCOSITY_HEADER}")?;
        for (t, v) in &rows {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    })?;
    let path = out.commit()?.remove(0);
    Ok(ViscosityOutput::File {
        rows: rows.len(),
        path,
    })
}

/// Runs a parsed command line and returns the text to print.
pub fn run(cli: Cli) -> Result<String> {
    Ok(match cli.command {
        Command::Synth(a) => cmd_synth(&a)?.to_string(),
        Command::Ingest(a) => cmd_ingest(&a)?.report.to_string().trim_end().to_string(),
        Command::Train(a) => cmd_train(&a)?.to_string(),
        Command::Importance(a) => cmd_importance(&a)?.to_string(),
        Command::Predict(a) => cmd_predict(&a)?.to_string(),
        Command::Viscosity(a) => cmd_viscosity(&a)?.to_string(),
    })
}
