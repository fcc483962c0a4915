//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

// checks are negated comparisons so that NaN counts as a failure
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use satthermo_cli::output::OutputSet;
use satthermo_cli::{
    cmd_ingest, cmd_predict, cmd_synth, cmd_train, synth, CommonArgs, IngestArgs, PredictArgs,
    SynthArgs, TrainArgs,
};
use satthermo_core::dataset::{
    split, Dataset, Feature, SplitMode, SplitSpec, TargetKind, DEFAULT_FEATURES,
};
use satthermo_core::evaluation::{permutation_importance, r2};
use satthermo_core::ingestion::{
    identify_drainage_phases, in_any_interval, write_meteo, write_ops, write_probes, OpsRecord,
    ValveState,
};
use satthermo_core::models::{
    fit_mlr, fit_nn, fit_ols_raw, fit_rf, load_model, nn_gradient, predict_mlr, read_model,
    save_model, write_model, MlrModel, ModelKind, ModelParams, Network, NnHyperParams, Regressor,
    RfHyperParams, TrainedModel, TrainingMeta,
};
use satthermo_core::physics::{viscosity, ViscosityParams};
use satthermo_core::rng::PortableRng;
use satthermo_core::timeseries::{filter_outliers, iqr_bounds, resample_mean, RegularSeries};
use satthermo_core::Timestamp;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    if elapsed > limit {
        Err(format!("{what} took {elapsed:.2?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

/// Rows following the reference topsoil equation with normal T and RH.
fn eq2_dataset(n: usize, seed: u64, sd_t: f64, sd_rh: f64, noise: f64) -> Dataset<f64> {
    let eq = MlrModel::<f64>::reference_topsoil();
    let mut r = PortableRng::new(seed);
    Dataset::from_rows(
        TargetKind::Topsoil,
        DEFAULT_FEATURES.to_vec(),
        (0..n).map(|i| {
            let t = 22.0 + sd_t * r.next_gaussian();
            let rh = 50.0 + sd_rh * r.next_gaussian();
            let y = predict_mlr(&eq, t, rh) + noise * r.next_gaussian();
            (Timestamp::from_minutes(30 * i as i64), vec![t, rh], y)
        }),
    )
    .expect("finite rows")
}

fn meta() -> TrainingMeta {
    TrainingMeta {
        target_kind: TargetKind::Topsoil,
        seed: 42,
        data_fingerprint: String::new(),
        n_train: 0,
        split: None,
        split_mode: SplitMode::Random,
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let params = ViscosityParams::<f64>::default();
    let mut worst = 0.0f64;
    for t in [0.0f64, 10.0, 20.0, 30.0, 40.0] {
        let expected = 1.98404e-6 * (1825.85 / (t + 273.0)).exp();
        let got = viscosity(t, &params).map_err(|e| e.to_string())?;
        let rel = ((got - expected) / expected).abs();
        worst = worst.max(rel);
        check!(rel <= 5e-11, "T={t}: {got:e} vs {expected:e}");
    }
    // reference water viscosity, Pa·s
    let table = [
        (10.0, 1.3059e-3),
        (15.0, 1.1375e-3),
        (20.0, 1.0016e-3),
        (25.0, 0.8900e-3),
        (30.0, 0.7972e-3),
        (35.0, 0.7191e-3),
    ];
    let mut worst_ref = 0.0f64;
    for (t, eta) in table {
        let got = viscosity(t, &params).map_err(|e| e.to_string())?;
        let dev = ((got - eta) / eta).abs();
        worst_ref = worst_ref.max(dev);
        check!(
            dev <= 0.05,
            "T={t}: {got:e} deviates {:.2}% from {eta:e}",
            100.0 * dev
        );
    }
    within(
        start.elapsed(),
        Duration::from_millis(100),
        "viscosity checks",
    )?;
    Ok(format!(
        "max rel. error {worst:.1e}; max deviation from water table {:.2}%",
        100.0 * worst_ref
    ))
}

fn criterion_2() -> Outcome {
    let data = eq2_dataset(5000, 7, 6.0, 15.0, 0.0);
    let start = Instant::now();
    let m = fit_mlr(&data).map_err(|e| e.to_string())?;
    let raw = fit_ols_raw(&data).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let errs = [
        (m.coef_rh() - 0.19).abs(),
        (m.coef_t() - 0.88).abs(),
        (m.intercept + 8.05).abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    check!(worst <= 1e-6, "coefficient error {worst:e}: {m:?}");
    let mut gap = 0.0f64;
    let mut r = PortableRng::new(3);
    for row in data.rows() {
        gap = gap.max((m.predict_row(row) - raw.predict_row(row)).abs());
    }
    for _ in 0..1000 {
        let q = [-10.0 + 60.0 * r.next_f64(), 100.0 * r.next_f64()];
        gap = gap.max((m.predict_row(&q) - raw.predict_row(&q)).abs());
    }
    check!(
        gap <= 1e-9,
        "standardized vs raw predictions differ by {gap:e}"
    );
    within(elapsed, Duration::from_secs(1), "MLR fits")?;
    Ok(format!(
        "max coefficient error {worst:.1e}; raw vs standardized gap {gap:.1e}"
    ))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let common = CommonArgs {
            seed,
            ..CommonArgs::new(dir.path())
        };
        let synth = SynthArgs {
            target_r2: Some(0.86),
            noise_sigma: 1.7,
            ..SynthArgs::new(common.clone())
        };
        cmd_synth(&synth).map_err(|e| format!("{e:#}"))?;
        cmd_ingest(&IngestArgs::new(common.clone())).map_err(|e| format!("{e:#}"))?;
        let s = cmd_train(&TrainArgs::new(common, ModelKind::Mlr, TargetKind::Topsoil))
            .map_err(|e| format!("{e:#}"))?;
        let (r2t, rmse) = (s.metrics.r2_test, s.metrics.rmse_test);
        lines.push(format!("seed {seed}: R² {r2t:.4} RMSE {rmse:.3}"));
        check!(
            (r2t - 0.86).abs() <= 0.03,
            "seed {seed}: test R² {r2t:.4} outside 0.86 ± 0.03"
        );
        check!(
            (rmse - 1.7).abs() <= 0.15,
            "seed {seed}: test RMSE {rmse:.4} outside 1.7 ± 0.15"
        );
    }
    within(
        start.elapsed(),
        Duration::from_secs(30),
        "five pipeline runs",
    )?;
    Ok(lines.join("; "))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    // (a) a feature the model ignores
    let data = eq2_dataset(1000, 11, 6.0, 15.0, 1.0);
    let no_rh = MlrModel::new(DEFAULT_FEATURES.to_vec(), vec![0.88, 0.0], -8.05)
        .map_err(|e| e.to_string())?;
    let rep = permutation_importance(&no_rh, &data, 10, 42, None).map_err(|e| e.to_string())?;
    let rh = rep.get(Feature::Rh).ok_or("no RH entry")?;
    check!(
        rh.raw.len() == 10 && rh.raw.iter().all(|&d| d == 0.0),
        "RH importance not exactly zero: {:?}",
        rh.raw
    );

    // (b) temperature outranks humidity for a fitted model
    for seed in 1..=10u64 {
        let data = eq2_dataset(2000, seed, 6.0, 15.0, 1.7);
        let (train, test) = split(
            &data,
            SplitSpec {
                train_fraction: 0.8,
                seed,
            },
            SplitMode::Random,
        )
        .map_err(|e| e.to_string())?;
        let m = fit_mlr(&train).map_err(|e| e.to_string())?;
        let rep = permutation_importance(&m, &test, 10, 42, None).map_err(|e| e.to_string())?;
        let t = rep.get(Feature::TAmbient).ok_or("no T entry")?.mean;
        let rh = rep.get(Feature::Rh).ok_or("no RH entry")?.mean;
        check!(t > rh, "seed {seed}: importance T {t} <= RH {rh}");
    }

    // (c) determinism, including across worker counts
    let m = MlrModel::<f64>::reference_topsoil();
    let a = permutation_importance(&m, &data, 10, 42, Some(1)).map_err(|e| e.to_string())?;
    let b = permutation_importance(&m, &data, 10, 42, Some(4)).map_err(|e| e.to_string())?;
    let bits = |r: &satthermo_core::evaluation::ImportanceReport<f64>| -> Vec<u64> {
        r.features
            .iter()
            .flat_map(|f| f.raw.iter().chain([&f.mean, &f.std]).map(|v| v.to_bits()))
            .collect()
    };
    check!(
        bits(&a) == bits(&b) && a.repeats == b.repeats && a.seed == b.seed,
        "reports differ between runs"
    );
    within(
        start.elapsed(),
        Duration::from_secs(10),
        "importance checks",
    )?;
    Ok(
        "unused RH exactly 0 in 10/10 repeats; T > RH for seeds 1-10; repeat runs bit-identical"
            .into(),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let sizes = [2, 10, 5, 1];
    let h = 1e-5;
    let mut worst = 0.0f64;
    for point in 0..20u64 {
        let mut r = PortableRng::new(1000 + point);
        let mut net = Network::<f64>::zeros(&sizes);
        let params: Vec<f64> = (0..net.n_params())
            .map(|_| 2.0 * r.next_f64() - 1.0)
            .collect();
        net.set_parameters(&params);
        let n = 32;
        let xs: Vec<f64> = (0..2 * n).map(|_| r.next_gaussian()).collect();
        let ys: Vec<f64> = (0..n).map(|_| r.next_gaussian()).collect();
        let (_, grad) = nn_gradient(&net, &xs, &ys).map_err(|e| e.to_string())?;
        let analytic = grad.parameters();
        let mut probe = net.clone();
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] = params[k] + h;
            probe.set_parameters(&p);
            let up = probe.mse(&xs, &ys);
            p[k] = params[k] - h;
            probe.set_parameters(&p);
            let down = probe.mse(&xs, &ys);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    check!(worst <= 1e-4, "max relative gradient error {worst:e}");
    within(start.elapsed(), Duration::from_secs(5), "gradient check")?;
    Ok(format!(
        "91 parameters x 20 points, max relative error {worst:.1e}"
    ))
}

fn criterion_6() -> Outcome {
    // constant target
    let mut data = eq2_dataset(500, 5, 6.0, 15.0, 0.0);
    let c = 17.3;
    data = Dataset::from_rows(
        TargetKind::Topsoil,
        DEFAULT_FEATURES.to_vec(),
        data.timestamps()
            .iter()
            .zip(data.rows())
            .map(|(ts, x)| (*ts, x.to_vec(), c)),
    )
    .map_err(|e| e.to_string())?;
    let m = fit_rf(&data, 42, &RfHyperParams::default()).map_err(|e| e.to_string())?;
    let mut r = PortableRng::new(9);
    for _ in 0..1000 {
        let q = [-20.0 + 80.0 * r.next_f64(), 100.0 * r.next_f64()];
        check!(
            m.predict_row(&q) == c,
            "constant forest predicted {} not {c}",
            m.predict_row(&q)
        );
    }

    // bounds, overfitting pattern, runtime and worker determinism on 30k rows
    let data = eq2_dataset(30_000, 6, 6.0, 15.0, 1.7);
    let (train, test) =
        split(&data, SplitSpec::default(), SplitMode::Random).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let one = fit_rf(
        &data,
        42,
        &RfHyperParams {
            workers: Some(1),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let fit_time = start.elapsed();
    within(fit_time, Duration::from_secs(60), "100 trees on 30k rows")?;
    let lo = data.targets().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data
        .targets()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..10_000 {
        let q = [-20.0 + 100.0 * r.next_f64(), -20.0 + 140.0 * r.next_f64()];
        let p = one.predict_row(&q);
        check!(
            p >= lo && p <= hi,
            "prediction {p} outside [{lo}, {hi}] at {q:?}"
        );
    }
    let json = |m: &satthermo_core::models::RfModel<f64>| {
        serde_json::to_string(&m.trees).expect("serializable")
    };
    let reference = json(&one);
    for w in [2, 8] {
        let other = fit_rf(
            &data,
            42,
            &RfHyperParams {
                workers: Some(w),
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        check!(
            json(&other) == reference,
            "{w} workers produced a different forest"
        );
    }

    let m = fit_rf(&train, 42, &RfHyperParams::default()).map_err(|e| e.to_string())?;
    let r2_train = r2(train.targets(), &m.predict(&train)).map_err(|e| e.to_string())?;
    let r2_test = r2(test.targets(), &m.predict(&test)).map_err(|e| e.to_string())?;
    check!(
        r2_train >= r2_test,
        "train R² {r2_train} < test R² {r2_test}"
    );
    Ok(format!(
        "constant exact; 10^4 queries in range; train R² {r2_train:.3} >= test R² {r2_test:.3}; 1/2/8 workers identical; fit {fit_time:.1?}"
    ))
}

fn criterion_7() -> Outcome {
    // resample mean preservation
    let mut r = PortableRng::new(21);
    let n = 3 * 4000;
    let values: Vec<Option<f64>> = (0..n)
        .map(|_| Some(20.0 + 10.0 * r.next_gaussian()))
        .collect();
    let s = RegularSeries::new(Timestamp::from_minutes(0), 10, values.clone())
        .map_err(|e| e.to_string())?;
    let coarse = resample_mean(&s, 30).map_err(|e| e.to_string())?;
    let mean_fine = values.iter().flatten().sum::<f64>() / n as f64;
    let c = coarse.present_values();
    let mean_coarse = c.iter().sum::<f64>() / c.len() as f64;
    let drift = (mean_fine - mean_coarse).abs();
    check!(drift <= 1e-9, "resampled mean drifted by {drift:e}");

    // IQR idempotence
    let mut noisy = values;
    for i in (0..n).step_by(97) {
        noisy[i] = Some(200.0 * r.next_gaussian());
    }
    let s = RegularSeries::new(Timestamp::from_minutes(0), 10, noisy).map_err(|e| e.to_string())?;
    let bounds = iqr_bounds(&s.present_values(), 1.5).map_err(|e| e.to_string())?;
    let (once, removed) = filter_outliers(&s, &bounds);
    let (twice, again) = filter_outliers(&once, &bounds);
    check!(
        once == twice && again == 0,
        "second filter pass changed the series"
    );

    // drainage filtering on three interleaved cycles
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Timestamp::from_ymd_hm(2023, 6, 1, 0, 0).ok_or("bad date")?;
    let spec = synth::SynthSpec {
        seed: 3,
        start,
        days: 3,
        ..Default::default()
    };
    let data = synth::generate(&spec);
    let mut ops = Vec::new();
    for k in 0..(3 * 48) {
        let ts = start.add_minutes(30 * k);
        let phase = k % 48;
        let (valve_state, level) = match phase {
            0..=11 => (ValveState::Open, 5.0 * phase as f64),
            12..=31 => (ValveState::Closed, 60.0 - 3.0 * (phase - 12) as f64),
            _ => (ValveState::Closed, 0.0),
        };
        ops.push(OpsRecord {
            ts,
            valve_state,
            water_level_cm: level,
        });
    }
    let mut out = OutputSet::new(dir.path()).map_err(|e| e.to_string())?;
    out.write("meteo.csv", |w| Ok(write_meteo(w, &data.meteo, None)?))
        .map_err(|e| e.to_string())?;
    out.write("probes.csv", |w| Ok(write_probes(w, &data.probes, None)?))
        .map_err(|e| e.to_string())?;
    out.write("ops.csv", |w| Ok(write_ops(w, &ops, None)?))
        .map_err(|e| e.to_string())?;
    out.commit().map_err(|e| e.to_string())?;
    let phases = identify_drainage_phases(&ops, 1.0);
    check!(
        phases.len() == 3,
        "expected 3 drainage intervals, found {}",
        phases.len()
    );
    cmd_ingest(&IngestArgs::new(CommonArgs::new(dir.path()))).map_err(|e| format!("{e:#}"))?;
    let mut per_interval = [0usize; 3];
    for kind in [TargetKind::Topsoil, TargetKind::Profile] {
        let f = fs::File::open(dir.path().join(format!("dataset_{kind}.csv")))
            .map_err(|e| e.to_string())?;
        let ds = Dataset::<f64>::read_csv(f, kind).map_err(|e| e.to_string())?;
        for ts in ds.timestamps() {
            check!(
                in_any_interval(&phases, *ts),
                "{kind} row at {ts} is outside every drainage interval"
            );
            if kind == TargetKind::Topsoil {
                let i = phases.iter().position(|p| p.contains(*ts)).expect("inside");
                per_interval[i] += 1;
            }
        }
    }
    check!(
        per_interval.iter().all(|&c| c > 0),
        "an interval contributed no rows: {per_interval:?}"
    );
    Ok(format!(
        "resample drift {drift:.1e}; IQR removed {removed} then 0; rows per drainage interval {per_interval:?}"
    ))
}

fn count_data_lines(path: &Path) -> Result<Vec<String>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect())
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let common = CommonArgs::new(dir.path());
    let days = 3653u32; // 2015-01-01 through 2024-12-31
    let synth = SynthArgs {
        days,
        start: "2015-01-01T00:00Z".into(),
        meteo_step: 30,
        meteo_only: true,
        ..SynthArgs::new(common.clone())
    };
    cmd_synth(&synth).map_err(|e| format!("{e:#}"))?;
    let meteo_path = dir.path().join("meteo.csv");
    let meteo_rows = count_data_lines(&meteo_path)?.len();
    check!(
        meteo_rows == days as usize * 48,
        "meteo has {meteo_rows} rows"
    );

    let out = dir.path().join("pred");
    let args = PredictArgs {
        paper_equations: true,
        daily: true,
        ..PredictArgs::new(CommonArgs::new(&out), &meteo_path)
    };
    let start = Instant::now();
    let summary = cmd_predict(&args).map_err(|e| format!("{e:#}"))?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30), "decade prediction")?;

    let rows = count_data_lines(&out.join("predictions.csv"))?;
    check!(
        rows.len() == meteo_rows,
        "{} prediction rows for {meteo_rows} meteo rows",
        rows.len()
    );
    let daily = count_data_lines(&out.join("predictions_daily.csv"))?;
    check!(
        daily.len() == days as usize,
        "{} daily rows for {days} days",
        daily.len()
    );
    let mut day = Timestamp::from_ymd_hm(2015, 1, 1, 0, 0)
        .ok_or("bad date")?
        .date();
    for line in &daily {
        let date = line.split(',').next().unwrap_or("");
        check!(date == day.to_string(), "daily row {date}, expected {day}");
        day = day.succ_opt().ok_or("date overflow")?;
    }

    let parsed: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect();
    let mut increases = 0;
    for w in parsed.windows(2) {
        if w[1].1 > w[0].1 {
            increases += 1;
            check!(
                w[1].2 < w[0].2,
                "viscosity not decreasing while profile temperature rises: {:?} -> {:?}",
                w[0],
                w[1]
            );
        }
    }

    // bit-for-bit agreement with the reference equations on the first rows
    let (meteo, _) = satthermo_core::ingestion::parse_meteo_csv(&meteo_path, Default::default())
        .map_err(|e| e.to_string())?;
    let top = MlrModel::reference_topsoil();
    let prof = MlrModel::reference_profile();
    for (rec, row) in meteo.iter().zip(&parsed).take(2000) {
        check!(
            predict_mlr(&top, rec.t_ambient_c, rec.rh_pct) == row.0
                && predict_mlr(&prof, rec.t_ambient_c, rec.rh_pct) == row.1,
            "prediction at {} differs from the reference equations",
            rec.ts
        );
    }
    Ok(format!(
        "{} rows, {} days in {elapsed:.2?}; viscosity fell at all {increases} temperature rises",
        summary.rows,
        daily.len()
    ))
}

fn criterion_9() -> Outcome {
    let data = eq2_dataset(600, 13, 6.0, 15.0, 1.7);
    let models = [
        ModelParams::Mlr(fit_mlr(&data).map_err(|e| e.to_string())?),
        ModelParams::Nn(
            fit_nn(
                &data,
                42,
                &NnHyperParams {
                    epochs: 300,
                    ..Default::default()
                },
            )
            .map_err(|e| e.to_string())?,
        ),
        ModelParams::Rf(fit_rf(&data, 42, &RfHyperParams::default()).map_err(|e| e.to_string())?),
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = PortableRng::new(77);
    let queries: Vec<[f64; 2]> = (0..1000)
        .map(|_| [-10.0 + 60.0 * r.next_f64(), 100.0 * r.next_f64()])
        .collect();
    let mut kinds = Vec::new();
    for params in models {
        let model = TrainedModel {
            params,
            meta: meta(),
        };
        let path = dir.path().join(format!("{}.json", model.kind()));
        save_model(&model, &path).map_err(|e| e.to_string())?;
        let from_file: TrainedModel<f64> = load_model(&path).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_model(&model, &mut buf).map_err(|e| e.to_string())?;
        let from_bytes: TrainedModel<f64> =
            read_model(buf.as_slice()).map_err(|e| e.to_string())?;
        for q in &queries {
            let p = model.predict_row(q).to_bits();
            check!(
                from_file.predict_row(q).to_bits() == p && from_bytes.predict_row(q).to_bits() == p,
                "{} prediction changed after round-trip at {q:?}",
                model.kind()
            );
        }
        kinds.push(model.kind().to_string());
    }
    Ok(format!(
        "{} reproduce 1000 predictions bit-for-bit",
        kinds.join(", ")
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("equation fidelity", criterion_1),
        ("MLR oracle recovery", criterion_2),
        ("pipeline R² band", criterion_3),
        ("permutation importance", criterion_4),
        ("NN gradient check", criterion_5),
        ("RF properties", criterion_6),
        ("preprocessing exactness", criterion_7),
        ("decade prediction run", criterion_8),
        ("model serialization", criterion_9),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {} ({name})", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {label} [{t:.2?}]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {label} [{t:.2?}]: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
