//! Per-event covariate sequences.

use std::f64::consts::TAU;

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};

use crate::error::{Error, Result};
use crate::metrics::PenetrationRates;
use crate::synth::{OutageEvent, WeatherTrace};

pub const STEP_MIN: i64 = 15;

/// Column order of a step vector.
pub const FEATURE_NAMES: [&str; 16] = [
    "hour_sin",
    "hour_cos",
    "dow_sin",
    "dow_cos",
    "month_sin",
    "month_cos",
    "temp_c",
    "ghi",
    "precip_water_mm",
    "outage_active",
    "duration_so_far_h",
    "r_ev",
    "r_hp",
    "r_der",
    "duration_h",
    "pad",
];
pub const FEATURE_DIM: usize = FEATURE_NAMES.len();
const PAD_COL: usize = FEATURE_DIM - 1;

/// `t` trailing steps ending at restoration; row-major `t x FEATURE_DIM`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFeatures {
    pub t: usize,
    pub values: Vec<f64>,
    /// `false` for left padding.
    pub valid: Vec<bool>,
}

impl EventFeatures {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * FEATURE_DIM..(k + 1) * FEATURE_DIM]
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Calendar encodings as (sin, cos) pairs: hour of day, day of week, month.
pub fn calendar(t: NaiveDateTime) -> [f64; 6] {
    let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
    let dow = t.weekday().num_days_from_monday() as f64;
    let month = t.month0() as f64;
    let h = TAU * hour / 24.0;
    let d = TAU * dow / 7.0;
    let m = TAU * month / 12.0;
    [h.sin(), h.cos(), d.sin(), d.cos(), m.sin(), m.cos()]
}

/// Event covariates that do not come from the weather trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventKey {
    pub restoration_time: NaiveDateTime,
    pub duration_h: f64,
    pub rates: PenetrationRates,
}

impl EventKey {
    pub fn of(event: &OutageEvent, rates: PenetrationRates) -> Self {
        Self {
            restoration_time: event.restoration_time,
            duration_h: event.duration_h,
            rates,
        }
    }
}

pub fn featurize(key: &EventKey, weather: &WeatherTrace, t: usize) -> Result<EventFeatures> {
    if t == 0 {
        return Err(Error::invalid("sequence length must be >= 1"));
    }
    if !(key.duration_h >= 0.0 && key.duration_h.is_finite()) {
        return Err(Error::invalid("duration_h must be finite and >= 0"));
    }
    if weather.step_of(key.restoration_time).is_none() {
        return Err(Error::invalid(format!(
            "weather does not cover restoration time {}",
            key.restoration_time
        )));
    }
    let start_min = key.duration_h * 60.0;
    let r = key.rates;
    let mut values = vec![0.0; t * FEATURE_DIM];
    let mut valid = vec![false; t];
    for k in 0..t {
        let back = (t - 1 - k) as i64;
        let ts = key.restoration_time - Duration::minutes(STEP_MIN * back);
        let row = &mut values[k * FEATURE_DIM..(k + 1) * FEATURE_DIM];
        let Some(s) = weather.step_of(ts) else {
            row[PAD_COL] = 1.0;
            continue;
        };
        valid[k] = true;
        let before_res = (STEP_MIN * back) as f64; // minutes before restoration
        let elapsed_h = ((start_min - before_res) / 60.0).clamp(0.0, key.duration_h);
        let active = back > 0 && before_res <= start_min;
        row[..6].copy_from_slice(&calendar(ts));
        row[6] = weather.temp_c[s];
        row[7] = weather.ghi[s];
        row[8] = weather.precip_water_mm[s];
        row[9] = if active { 1.0 } else { 0.0 };
        row[10] = elapsed_h;
        row[11] = r.r_ev;
        row[12] = r.r_hp;
        row[13] = r.r_der;
        row[14] = key.duration_h;
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite covariate in weather trace"));
    }
    Ok(EventFeatures { t, values, valid })
}

/// A weather trace that holds `w` constant over `[end - steps·15 min, end]`.
pub fn constant_weather(end: NaiveDateTime, steps: usize, temp_c: f64, ghi: f64, precip_water_mm: f64) -> WeatherTrace {
    let n = steps + 1;
    WeatherTrace {
        start: end - Duration::minutes(STEP_MIN * steps as i64),
        temp_c: vec![temp_c; n],
        ghi: vec![ghi; n],
        precip_water_mm: vec![precip_water_mm; n],
    }
}

/// Per-feature statistics over valid steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(items: impl Iterator<Item = &'a EventFeatures>) -> Self {
        let mut n = 0.0;
        let mut s = vec![0.0; FEATURE_DIM];
        let mut ss = vec![0.0; FEATURE_DIM];
        for f in items {
            for k in 0..f.t {
                if !f.valid[k] {
                    continue;
                }
                n += 1.0;
                for (j, v) in f.row(k).iter().enumerate() {
                    s[j] += v;
                    ss[j] += v * v;
                }
            }
        }
        let n = f64::max(n, 1.0);
        let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
        let std = ss
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let v = (q / n - m * m).max(0.0).sqrt();
                if v > 1e-9 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; FEATURE_DIM],
            std: vec![1.0; FEATURE_DIM],
        }
    }

    /// Normalised copy; pad rows are zero.
    pub fn apply(&self, f: &EventFeatures) -> Vec<f64> {
        let mut out = vec![0.0; f.values.len()];
        for k in 0..f.t {
            if !f.valid[k] {
                continue;
            }
            for j in 0..FEATURE_DIM {
                out[k * FEATURE_DIM + j] = (f.values[k * FEATURE_DIM + j] - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}
