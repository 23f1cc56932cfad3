use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{STEPS_PER_DAY, STEP_MIN};
use crate::rng::{substream, Domain};

pub const GHI_MAX: f64 = 1400.0;
pub const MAX_TEMP_STEP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeatherSample {
    pub temp_c: f64,
    pub ghi: f64,
    pub precip_water_mm: f64,
}

/// 15-minute weather on a regular grid starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherTrace {
    pub start: NaiveDateTime,
    pub temp_c: Vec<f64>,
    pub ghi: Vec<f64>,
    pub precip_water_mm: Vec<f64>,
}

/// Fixed-latitude sinusoidal daylight model: (sunrise, sunset) in clock hours.
pub fn daylight_hours(day_of_year: u32) -> (f64, f64) {
    let len = 12.2 + 2.9 * (2.0 * PI * (day_of_year as f64 - 80.0) / 365.0).sin();
    let noon = 13.0;
    (noon - len / 2.0, noon + len / 2.0)
}

/// Clear-sky irradiance (W/m^2) at a clock hour; zero outside daylight.
pub fn clear_sky_ghi(day_of_year: u32, hour: f64) -> f64 {
    let (rise, set) = daylight_hours(day_of_year);
    if hour <= rise || hour >= set {
        return 0.0;
    }
    let peak = 760.0 + 240.0 * (2.0 * PI * (day_of_year as f64 - 80.0) / 365.0).sin();
    peak * (PI * (hour - rise) / (set - rise)).sin().powf(1.3)
}

impl WeatherTrace {
    pub fn len(&self) -> usize {
        self.temp_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temp_c.is_empty()
    }

    pub fn timestamp(&self, step: usize) -> NaiveDateTime {
        self.start + Duration::minutes(STEP_MIN * step as i64)
    }

    pub fn end(&self) -> NaiveDateTime {
        self.timestamp(self.len())
    }

    /// Grid index of `t`, if `t` is on the grid and covered.
    pub fn step_of(&self, t: NaiveDateTime) -> Option<usize> {
        let mins = (t - self.start).num_minutes();
        if mins < 0 || mins % STEP_MIN != 0 || (t - self.start).num_seconds() % 60 != 0 {
            return None;
        }
        let step = (mins / STEP_MIN) as usize;
        (step < self.len()).then_some(step)
    }

    pub fn sample(&self, step: usize) -> WeatherSample {
        WeatherSample {
            temp_c: self.temp_c[step],
            ghi: self.ghi[step],
            precip_water_mm: self.precip_water_mm[step],
        }
    }

    /// Deterministic synthetic weather for `days` days.
    pub fn generate(start: NaiveDateTime, days: usize, seed: u64) -> Self {
        let n = days * STEPS_PER_DAY;
        let mut rng = substream(seed, Domain::Weather, 0);
        let mut temp_c = Vec::with_capacity(n);
        let mut ghi = Vec::with_capacity(n);
        let mut precip = Vec::with_capacity(n);

        let mut anomaly = 0.0_f64;
        let mut cloud = 0.8_f64;
        let mut moisture = 0.0_f64;
        let mut prev_temp: Option<f64> = None;
        for step in 0..n {
            let t = start + Duration::minutes(STEP_MIN * step as i64);
            let doy = t.ordinal();
            let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
            if step % STEPS_PER_DAY == 0 {
                // Day-scale cloudiness.
                let shock: f64 = rng.gen_range(-0.35..0.35);
                cloud = (0.55 * cloud + 0.45 * rng.gen_range(0.25..1.0) + 0.1 * shock).clamp(0.15, 1.0);
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            anomaly = 0.995 * anomaly + 0.28 * z;
            let seasonal = 12.0 - 14.0 * (2.0 * PI * (doy as f64 - 20.0) / 365.0).cos();
            let diurnal = 4.5 * (2.0 * PI * (hour - 9.0) / 24.0).sin();
            let mut temp = seasonal + diurnal + anomaly;
            if let Some(p) = prev_temp {
                temp = temp.clamp(p - MAX_TEMP_STEP, p + MAX_TEMP_STEP);
            }
            prev_temp = Some(temp);
            temp_c.push(temp);

            let g = clear_sky_ghi(doy, hour) * cloud;
            ghi.push(g.clamp(0.0, GHI_MAX));

            let zm: f64 = StandardNormal.sample(&mut rng);
            moisture = 0.99 * moisture + 0.4 * zm;
            let base_pw = 22.0 - 13.0 * (2.0 * PI * (doy as f64 - 20.0) / 365.0).cos();
            precip.push((base_pw + moisture).max(0.5));
        }
        Self {
            start,
            temp_c,
            ghi,
            precip_water_mm: precip,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn trace() -> WeatherTrace {
        let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        WeatherTrace::generate(start, 366, 11)
    }

    #[test]
    fn physical_invariants_hold() {
        let w = trace();
        assert_eq!(w.len(), 366 * 96);
        for s in 0..w.len() {
            let g = w.ghi[s];
            assert!((0.0..=GHI_MAX).contains(&g));
            let t = w.timestamp(s);
            let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
            let (rise, set) = daylight_hours(t.ordinal());
            if hour <= rise || hour >= set {
                assert_eq!(g, 0.0, "sun below horizon at {t}");
            }
            if s > 0 {
                assert!((w.temp_c[s] - w.temp_c[s - 1]).abs() <= MAX_TEMP_STEP + 1e-12);
            }
            assert!(w.precip_water_mm[s] >= 0.0);
        }
        let jan: f64 = w.temp_c[..31 * 96].iter().sum::<f64>() / (31.0 * 96.0);
        let jul: f64 = w.temp_c[181 * 96..212 * 96].iter().sum::<f64>() / (31.0 * 96.0);
        assert!(jan < 5.0 && jul > 18.0, "jan {jan}, jul {jul}");
    }

    #[test]
    fn step_lookup_round_trips() {
        let w = trace();
        assert_eq!(w.step_of(w.timestamp(1234)), Some(1234));
        assert_eq!(w.step_of(w.timestamp(3) + Duration::minutes(5)), None);
        assert_eq!(w.step_of(w.end()), None);
        assert_eq!(w.step_of(w.start - Duration::minutes(15)), None);
    }
}
