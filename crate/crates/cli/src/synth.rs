//! Synthetic meteorology, probe and operations records.
//!
//! Ambient conditions follow annual and diurnal cycles plus autocorrelated
//! weather noise. Probe temperatures are the reference topsoil and profile
//! equations applied to the half-hourly ambient means, plus Gaussian noise.
//! The operations log repeats flood, drain and dry phases.

use satthermo_core::dataset::{MeteoSeries, MODEL_STEP_MIN};
use satthermo_core::ingestion::{
    identify_drainage_phases, in_any_interval, DrainageInterval, MeteoRecord, OpsRecord,
    ProbeRecord, ValveState, DEFAULT_LEVEL_FLOOR_CM, PROBE_DEPTHS_CM, PROBE_IDS, TOPSOIL_DEPTH_CM,
};
use satthermo_core::models::{predict_mlr, MlrModel};
use satthermo_core::rng::{purpose, PortableRng};
use satthermo_core::{Timestamp, MINUTES_PER_DAY};

const YEAR_MINUTES: f64 = 365.25 * MINUTES_PER_DAY as f64;
/// Degrees per cm of depth applied to the deeper sensors around their mean.
const DEPTH_GRADIENT: f64 = -0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub start: Timestamp,
    pub days: u32,
    /// Meteorological sampling step in minutes; must divide 30.
    pub meteo_step: i64,
    pub noise_sigma: f64,
    /// Rescale the ambient signal so that signal / (signal + noise) variance
    /// over drainage timesteps equals this value.
    pub target_r2: Option<f64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            start: Timestamp::from_ymd_hm(2023, 1, 1, 0, 0).expect("valid date"),
            days: 365,
            meteo_step: 10,
            noise_sigma: 1.7,
            target_r2: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub meteo: Vec<MeteoRecord>,
    pub probes: Vec<ProbeRecord>,
    pub ops: Vec<OpsRecord>,
    pub phases: Vec<DrainageInterval>,
    /// Factor applied to ambient deviations from their mean.
    pub signal_scale: f64,
    /// Population variance of the topsoil equation over drainage timesteps.
    pub signal_variance: f64,
}

impl SynthData {
    pub fn theoretical_r2(&self, sigma: f64) -> f64 {
        self.signal_variance / (self.signal_variance + sigma * sigma)
    }
}

struct Ar1 {
    phi: f64,
    innovation: f64,
    state: f64,
}

impl Ar1 {
    fn new(step_min: i64, correlation_min: f64, sd: f64) -> Self {
        let phi = (-(step_min as f64) / correlation_min).exp();
        Self {
            phi,
            innovation: sd * (1.0 - phi * phi).sqrt(),
            state: 0.0,
        }
    }

    fn next(&mut self, rng: &mut PortableRng) -> f64 {
        self.state = self.phi * self.state + self.innovation * rng.next_gaussian();
        self.state
    }
}

pub fn generate_meteo(spec: &SynthSpec) -> Vec<MeteoRecord> {
    assert!(
        spec.meteo_step > 0 && MODEL_STEP_MIN % spec.meteo_step == 0,
        "meteo step must divide {MODEL_STEP_MIN}"
    );
    let step = spec.meteo_step;
    let n = spec.days as i64 * MINUTES_PER_DAY / step;
    let mut weather = PortableRng::derived(spec.seed, purpose::SYNTH, &[0]);
    let mut rain = PortableRng::derived(spec.seed, purpose::SYNTH, &[1]);
    let mut wind = PortableRng::derived(spec.seed, purpose::SYNTH, &[2]);
    let mut t_noise = Ar1::new(step, 720.0, 1.5);
    let mut rh_noise = Ar1::new(step, 720.0, 6.0);
    let mut ws_noise = Ar1::new(step, 180.0, 1.0);
    let start_chance = step as f64 / (3.0 * MINUTES_PER_DAY as f64);
    let stop_chance = step as f64 / 240.0;
    let mut raining = 0.0;
    let mut dir: f64 = 300.0;

    let tau = std::f64::consts::TAU;
    (0..n)
        .map(|k| {
            let ts = spec.start.add_minutes(k * step);
            let m = ts.minutes() as f64;
            let annual = -(tau * (m / YEAR_MINUTES - 15.0 / 365.25)).cos();
            let diurnal =
                -(tau * ((m % MINUTES_PER_DAY as f64) / MINUTES_PER_DAY as f64 - 0.125)).cos();
            let t = 20.0 + 7.0 * annual + 5.0 * diurnal + t_noise.next(&mut weather);
            let rh = (50.0 - 1.2 * (t - 20.0) + rh_noise.next(&mut weather)).clamp(1.0, 99.0);

            if raining > 0.0 {
                if rain.next_f64() < stop_chance {
                    raining = 0.0;
                }
            } else if rain.next_f64() < start_chance {
                raining = -(1.0 - rain.next_f64()).ln();
            }
            let precip = raining * step as f64 / 60.0;

            let ws = (3.0 + 1.5 * diurnal + ws_noise.next(&mut wind)).max(0.0);
            dir = (dir + 10.0 * wind.next_gaussian()).rem_euclid(360.0);
            if dir >= 360.0 {
                dir = 0.0;
            }
            MeteoRecord {
                ts,
                t_ambient_c: t,
                rh_pct: rh,
                precip_mm: precip,
                wind_speed_ms: ws,
                wind_dir_deg: dir,
            }
        })
        .collect()
}

/// Half-hourly flood (valve open, level rising), drain (closed, level falling
/// to zero) and dry (closed, empty) phases covering the whole period.
pub fn generate_ops(spec: &SynthSpec) -> Vec<OpsRecord> {
    let mut rng = PortableRng::derived(spec.seed, purpose::SYNTH, &[3]);
    let n = spec.days as i64 * MINUTES_PER_DAY / MODEL_STEP_MIN;
    let mut out = Vec::with_capacity(n as usize);
    let mut k = 0i64;
    let push = |state: ValveState, level: f64, out: &mut Vec<OpsRecord>, k: &mut i64| {
        if *k < n {
            out.push(OpsRecord {
                ts: spec.start.add_minutes(*k * MODEL_STEP_MIN),
                valve_state: state,
                water_level_cm: level,
            });
        }
        *k += 1;
    };
    while k < n {
        let peak = 40.0 + 20.0 * rng.next_f64();
        let flood = 48;
        let drain = 72 + rng.below(49) as i64;
        let dry = 36 + rng.below(25) as i64;
        for i in 0..flood {
            push(
                ValveState::Open,
                peak * i as f64 / flood as f64,
                &mut out,
                &mut k,
            );
        }
        for i in 0..drain {
            push(
                ValveState::Closed,
                peak * (1.0 - i as f64 / (drain - 1) as f64),
                &mut out,
                &mut k,
            );
        }
        for _ in 0..dry {
            push(ValveState::Closed, 0.0, &mut out, &mut k);
        }
    }
    out
}

fn drainage_signal_variance(meteo: &[MeteoRecord], step: i64, phases: &[DrainageInterval]) -> f64 {
    let m30 = MeteoSeries::<f64>::from_records(meteo, step)
        .and_then(|m| m.resample(MODEL_STEP_MIN))
        .expect("generated meteo is regular");
    let eq = MlrModel::<f64>::reference_topsoil();
    let signal: Vec<f64> = m30
        .t_ambient
        .present()
        .filter(|(ts, _)| in_any_interval(phases, *ts))
        .filter_map(|(ts, t)| m30.rh.get(ts).map(|rh| predict_mlr(&eq, t, rh)))
        .collect();
    if signal.len() < 2 {
        return 0.0;
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    signal.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n
}

pub fn generate(spec: &SynthSpec) -> SynthData {
    let ops = generate_ops(spec);
    let phases = identify_drainage_phases(&ops, DEFAULT_LEVEL_FLOOR_CM);
    let mut meteo = generate_meteo(spec);
    let mut variance = drainage_signal_variance(&meteo, spec.meteo_step, &phases);
    let mut scale = 1.0;

    if let Some(r2) = spec.target_r2 {
        assert!(r2 > 0.0 && r2 < 1.0, "target R² must lie in (0, 1)");
        assert!(spec.noise_sigma > 0.0, "a target R² needs positive noise");
        let wanted = spec.noise_sigma * spec.noise_sigma * r2 / (1.0 - r2);
        if variance > 0.0 {
            scale = (wanted / variance).sqrt();
            let n = meteo.len() as f64;
            let t_mean = meteo.iter().map(|r| r.t_ambient_c).sum::<f64>() / n;
            let rh_mean = meteo.iter().map(|r| r.rh_pct).sum::<f64>() / n;
            for r in &mut meteo {
                r.t_ambient_c = t_mean + scale * (r.t_ambient_c - t_mean);
                r.rh_pct = (rh_mean + scale * (r.rh_pct - rh_mean)).clamp(0.0, 100.0);
            }
            variance = drainage_signal_variance(&meteo, spec.meteo_step, &phases);
        }
    }

    let probes = generate_probes(spec, &meteo);
    SynthData {
        meteo,
        probes,
        ops,
        phases,
        signal_scale: scale,
        signal_variance: variance,
    }
}

fn generate_probes(spec: &SynthSpec, meteo: &[MeteoRecord]) -> Vec<ProbeRecord> {
    let m30 = MeteoSeries::<f64>::from_records(meteo, spec.meteo_step)
        .and_then(|m| m.resample(MODEL_STEP_MIN))
        .expect("generated meteo is regular");
    let topsoil_eq = MlrModel::<f64>::reference_topsoil();
    let profile_eq = MlrModel::<f64>::reference_profile();
    let mut rng = PortableRng::derived(spec.seed, purpose::SYNTH, &[4]);
    let sigma = spec.noise_sigma;

    let deep: Vec<u32> = PROBE_DEPTHS_CM
        .iter()
        .copied()
        .filter(|&d| d != TOPSOIL_DEPTH_CM)
        .collect();
    let deep_mean = deep.iter().sum::<u32>() as f64 / deep.len() as f64;
    let n_top = PROBE_IDS.len() as f64;
    let n_deep = (PROBE_IDS.len() * deep.len()) as f64;

    let mut out = Vec::new();
    for (ts, t) in m30.t_ambient.present() {
        let Some(rh) = m30.rh.get(ts) else { continue };
        let top = predict_mlr(&topsoil_eq, t, rh) + sigma * rng.next_gaussian();
        let profile = predict_mlr(&profile_eq, t, rh) + sigma * rng.next_gaussian();
        // deeper sensors share a base value so the 36-sensor mean equals `profile`
        let base = ((n_top + n_deep) * profile - n_top * top) / n_deep;
        for &probe_id in &PROBE_IDS {
            out.push(ProbeRecord {
                ts,
                probe_id,
                depth_cm: TOPSOIL_DEPTH_CM,
                temp_c: top,
            });
            for &depth in &deep {
                let temp_c = base + DEPTH_GRADIENT * (depth as f64 - deep_mean);
                out.push(ProbeRecord {
                    ts,
                    probe_id,
                    depth_cm: depth,
                    temp_c,
                });
            }
        }
    }
    out
}
