//! Synthetic city: feeders, weather, outages and planted surge physics.
//!
//! Every downstream estimator is validated against the ground truth recorded
//! here. Generation is a pure function of `(config, seed)`; each event draws
//! from its own counter-based substream so results are order-independent.

pub mod io;
mod physics;
mod weather;

use std::collections::HashMap;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::Rng as _;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{DerDelayModel, SurgeComponents};
use crate::rng::{substream, Domain};

pub use io::{read_dataset, write_dataset};
pub use physics::{ev_propensity, plant_surge, PlantedEvent};
pub use weather::{clear_sky_ghi, daylight_hours, WeatherSample, WeatherTrace, GHI_MAX};

pub const STEP_MIN: i64 = 15;
pub const STEPS_PER_DAY: usize = 96;
/// Days of history kept in front of the first admissible outage start.
pub const LEAD_DAYS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederTemplate {
    pub feeder_id: u32,
    pub n_smart_meters: u32,
    pub n_ev_submeters: u32,
    pub n_hp_submeters: u32,
    pub der_capacity_kw: f64,
    pub daily_peak_kw: f64,
    /// Non-asset demand (kW) per 15-min slot of the day.
    pub base_profile: Vec<f64>,
}

impl FeederTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.n_ev_submeters > self.n_smart_meters || self.n_hp_submeters > self.n_smart_meters {
            return Err(Error::invalid(format!(
                "feeder {}: submeter counts exceed smart meters",
                self.feeder_id
            )));
        }
        if !(self.der_capacity_kw >= 0.0) {
            return Err(Error::invalid(format!("feeder {}: negative DER capacity", self.feeder_id)));
        }
        if self.base_profile.len() != STEPS_PER_DAY {
            return Err(Error::invalid(format!(
                "feeder {}: base profile needs {STEPS_PER_DAY} slots",
                self.feeder_id
            )));
        }
        let peak = self.base_profile.iter().cloned().fold(f64::MIN, f64::max);
        if peak != self.daily_peak_kw {
            return Err(Error::invalid(format!(
                "feeder {}: daily peak must equal the profile maximum",
                self.feeder_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageEvent {
    pub event_id: u64,
    pub feeder_id: u32,
    pub start_time: NaiveDateTime,
    pub duration_h: f64,
    pub n_customers_affected: u32,
    pub restoration_time: NaiveDateTime,
    pub weather_at_restoration: WeatherSample,
}

impl OutageEvent {
    pub fn restoration_hour(&self) -> f64 {
        let t = self.restoration_time;
        t.hour() as f64 + t.minute() as f64 / 60.0
    }
}

/// One 15-min meter row: net feeder demand, EV and HP submeter sums, and the
/// potential DER generation `C_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: NaiveDateTime,
    pub total_kw: f64,
    pub ev_kw: f64,
    pub hp_kw: f64,
    pub der_kw: f64,
}

impl TraceRow {
    /// `[total, ev, hp, der]`.
    pub fn new(time: NaiveDateTime, v: [f64; 4]) -> Self {
        Self {
            time,
            total_kw: v[0],
            ev_kw: v[1],
            hp_kw: v[2],
            der_kw: v[3],
        }
    }
}

/// Sparse, time-sorted meter rows of one event: the baseline intervals and
/// the rows from restoration onward.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTrace {
    pub event_id: u64,
    pub rows: Vec<TraceRow>,
}

impl EventTrace {
    pub fn row(&self, t: NaiveDateTime) -> Option<&TraceRow> {
        self.rows
            .binary_search_by(|r| r.time.cmp(&t))
            .ok()
            .map(|i| &self.rows[i])
    }
}

/// A deferred-charging EV session that starts at restoration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvSession {
    pub event_id: u64,
    pub charger: u32,
    pub power_kw: f64,
    pub session_min: f64,
}

/// Penetration-rate distribution across feeders: `lo + (hi - lo) * Beta(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateDist {
    pub lo: f64,
    pub hi: f64,
    pub a: f64,
    pub b: f64,
}

impl RateDist {
    pub fn fixed(v: f64) -> Self {
        Self {
            lo: v,
            hi: v,
            a: 1.0,
            b: 1.0,
        }
    }

    fn sample(&self, rng: &mut crate::rng::Rng) -> f64 {
        if self.hi <= self.lo {
            return self.lo;
        }
        let beta = Beta::new(self.a, self.b).expect("validated beta parameters");
        self.lo + (self.hi - self.lo) * beta.sample(rng)
    }

    fn validate(&self, what: &str, max: f64) -> Result<()> {
        let ok = self.lo >= 0.0 && self.hi >= self.lo && self.hi <= max && self.a > 0.0 && self.b > 0.0;
        if !ok {
            return Err(Error::invalid(format!("bad {what} rate distribution {self:?}")));
        }
        Ok(())
    }
}

/// Planted surge physics. All gains are non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruthParams {
    pub ev_rate: RateDist,
    pub hp_rate: RateDist,
    pub der_rate: RateDist,
    /// Evening window of peak deferred-charging propensity, clock hours.
    pub ev_evening_peak_hours: (f64, f64),
    pub ev_peak_propensity: f64,
    pub ev_midday_propensity: f64,
    pub ev_night_propensity: f64,
    /// Relative propensity gain per outage hour, saturating at 6 h.
    pub ev_duration_gain: f64,
    pub ev_charger_kw: f64,
    /// Per-EV normal charging load at evening peak (kW).
    pub ev_base_kw: f64,
    pub hp_comfort_c: f64,
    pub hp_strip_heat_threshold_c: f64,
    /// Extra kW per heat pump per degree below comfort.
    pub hp_cold_slope: f64,
    /// Strip-heat step per heat pump below the threshold (kW).
    pub hp_strip_kw: f64,
    pub hp_cooling_c: f64,
    pub hp_cool_slope: f64,
    /// Duration time constant of compressor-driven recovery (h).
    pub hp_recovery_tau_h: f64,
    /// Duration time constant of strip-heat saturation (h).
    pub hp_strip_tau_h: f64,
    pub der_delay: DerDelayModel,
    pub der_derate: f64,
    pub clpu_base: f64,
    pub clpu_gain: f64,
    /// Decay constant (h) of the cold-load-pickup duration response.
    pub clpu_decay_const: f64,
    pub noise_sd: f64,
}

impl Default for GroundTruthParams {
    fn default() -> Self {
        Self {
            ev_rate: RateDist { lo: 0.05, hi: 0.50, a: 1.1, b: 2.2 },
            hp_rate: RateDist { lo: 0.05, hi: 0.85, a: 1.3, b: 2.0 },
            der_rate: RateDist { lo: 0.05, hi: 0.35, a: 1.1, b: 1.8 },
            ev_evening_peak_hours: (18.0, 21.0),
            ev_peak_propensity: 0.5,
            ev_midday_propensity: 0.18,
            ev_night_propensity: 0.05,
            ev_duration_gain: 0.2,
            ev_charger_kw: 7.2,
            ev_base_kw: 0.6,
            hp_comfort_c: 15.0,
            hp_strip_heat_threshold_c: 5.0,
            hp_cold_slope: 0.25,
            hp_strip_kw: 5.0,
            hp_cooling_c: 25.0,
            hp_cool_slope: 0.08,
            hp_recovery_tau_h: 3.0,
            hp_strip_tau_h: 0.7,
            der_delay: DerDelayModel::default(),
            der_derate: 0.85,
            clpu_base: 0.05,
            clpu_gain: 0.35,
            clpu_decay_const: 2.0,
            noise_sd: 0.05,
        }
    }
}

impl GroundTruthParams {
    pub fn validate(&self) -> Result<()> {
        self.ev_rate.validate("EV", 1.0)?;
        self.hp_rate.validate("HP", 1.0)?;
        self.der_rate.validate("DER", f64::INFINITY)?;
        let gains = [
            ("ev_peak_propensity", self.ev_peak_propensity),
            ("ev_midday_propensity", self.ev_midday_propensity),
            ("ev_night_propensity", self.ev_night_propensity),
            ("ev_duration_gain", self.ev_duration_gain),
            ("ev_charger_kw", self.ev_charger_kw),
            ("ev_base_kw", self.ev_base_kw),
            ("hp_cold_slope", self.hp_cold_slope),
            ("hp_strip_kw", self.hp_strip_kw),
            ("hp_cool_slope", self.hp_cool_slope),
            ("der_derate", self.der_derate),
            ("clpu_base", self.clpu_base),
            ("clpu_gain", self.clpu_gain),
            ("noise_sd", self.noise_sd),
        ];
        for (name, v) in gains {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        let (a, b) = self.ev_evening_peak_hours;
        if !(0.0..=24.0).contains(&a) || !(0.0..=24.0).contains(&b) || b <= a {
            return Err(Error::invalid("ev_evening_peak_hours must be an increasing clock range"));
        }
        for (name, v) in [
            ("hp_recovery_tau_h", self.hp_recovery_tau_h),
            ("hp_strip_tau_h", self.hp_strip_tau_h),
            ("clpu_decay_const", self.clpu_decay_const),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0")));
            }
        }
        self.der_delay.validate()
    }
}

/// One component of the outage-duration mixture: log-normal with the given
/// median (h) and log-scale sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationComponent {
    pub weight: f64,
    pub median_h: f64,
    pub sigma_log: f64,
}

/// Timing model for outage starts and durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutageSampling {
    /// Relative start weight per clock hour.
    pub hour_weights: Vec<f64>,
    /// Relative start weight per calendar month.
    pub month_weights: Vec<f64>,
    pub durations: Vec<DurationComponent>,
    pub max_duration_h: f64,
    /// Smallest share of a feeder's customers an outage interrupts.
    pub min_affected_share: f64,
}

impl Default for OutageSampling {
    fn default() -> Self {
        Self {
            hour_weights: vec![1.0; 24],
            month_weights: vec![1.0; 12],
            durations: vec![DurationComponent {
                weight: 1.0,
                median_h: 1.5,
                sigma_log: 0.8,
            }],
            max_duration_h: 12.0,
            min_affected_share: 0.2,
        }
    }
}

impl OutageSampling {
    pub fn validate(&self) -> Result<()> {
        let pos = |w: &[f64]| w.iter().all(|v| *v >= 0.0) && w.iter().any(|v| *v > 0.0);
        if self.hour_weights.len() != 24 || !pos(&self.hour_weights) {
            return Err(Error::invalid("hour_weights needs 24 non-negative values, not all zero"));
        }
        if self.month_weights.len() != 12 || !pos(&self.month_weights) {
            return Err(Error::invalid("month_weights needs 12 non-negative values, not all zero"));
        }
        if self.durations.is_empty()
            || self
                .durations
                .iter()
                .any(|c| !(c.weight >= 0.0 && c.median_h > 0.0 && c.sigma_log >= 0.0))
        {
            return Err(Error::invalid("bad duration mixture"));
        }
        if !(self.max_duration_h >= 0.25 && self.max_duration_h <= 23.0) {
            return Err(Error::invalid("max_duration_h must lie in [0.25, 23]"));
        }
        if !(self.min_affected_share > 0.0 && self.min_affected_share <= 1.0) {
            return Err(Error::invalid("min_affected_share must lie in (0, 1]"));
        }
        Ok(())
    }

    fn draw_duration(&self, rng: &mut crate::rng::Rng) -> f64 {
        let total: f64 = self.durations.iter().map(|c| c.weight).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut comp = self.durations[self.durations.len() - 1];
        for c in &self.durations {
            if u < c.weight {
                comp = *c;
                break;
            }
            u -= c.weight;
        }
        let z: f64 = StandardNormal.sample(rng);
        let d = comp.median_h * (comp.sigma_log * z).exp();
        ((d * 4.0).round() / 4.0).clamp(0.25, self.max_duration_h)
    }
}

/// Full generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CityConfig {
    pub n_feeders: usize,
    pub n_events: usize,
    pub start_date: NaiveDate,
    pub days: usize,
    pub params: GroundTruthParams,
    pub sampling: OutageSampling,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self {
            n_feeders: 200,
            n_events: 4000,
            start_date: NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date"),
            days: 366 + LEAD_DAYS,
            params: GroundTruthParams::default(),
            sampling: OutageSampling::default(),
        }
    }
}

/// Generated city plus the per-event artifacts emitted with it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: CityConfig,
    pub seed: u64,
    pub feeders: Vec<FeederTemplate>,
    pub weather: WeatherTrace,
    pub events: Vec<OutageEvent>,
    /// Observed (noisy) meter traces, aligned with `events`.
    pub traces: Vec<EventTrace>,
    /// Noise-free planted components, aligned with `events`.
    pub ground_truth: Vec<SurgeComponents>,
    /// Deferred-charging sessions of every event.
    pub ev_sessions: Vec<EvSession>,
}

impl SyntheticDataset {
    pub fn feeder(&self, id: u32) -> Result<&FeederTemplate> {
        self.feeders
            .get(id as usize)
            .filter(|f| f.feeder_id == id)
            .or_else(|| self.feeders.iter().find(|f| f.feeder_id == id))
            .ok_or_else(|| Error::invalid(format!("unknown feeder {id}")))
    }

    /// Sessions grouped by event id.
    pub fn sessions_by_event(&self) -> HashMap<u64, Vec<EvSession>> {
        let mut map: HashMap<u64, Vec<EvSession>> = HashMap::new();
        for s in &self.ev_sessions {
            map.entry(s.event_id).or_default().push(*s);
        }
        map
    }
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    let mut d = (hour - centre).abs() % 24.0;
    if d > 12.0 {
        d = 24.0 - d;
    }
    (-0.5 * (d / width).powi(2)).exp()
}

/// Per-customer residential demand shape (kW) at a clock hour.
fn residential_kw(hour: f64) -> f64 {
    0.55 + 0.35 * bump(hour, 7.5, 1.5) + 0.95 * bump(hour, 19.0, 2.5) + 0.15 * bump(hour, 13.0, 3.0)
}

/// Per-customer commercial demand shape (kW) at a clock hour.
fn commercial_kw(hour: f64) -> f64 {
    let day = 1.0 / (1.0 + (-(hour - 8.0) * 2.0).exp()) / (1.0 + ((hour - 18.0) * 2.0).exp());
    0.35 + 1.05 * day
}

/// Draw feeder templates.
pub fn gen_feeders(n: usize, params: &GroundTruthParams, seed: u64) -> Result<Vec<FeederTemplate>> {
    if n == 0 {
        return Err(Error::invalid("n_feeders >= 1 required"));
    }
    params.validate()?;
    let feeders = (0..n)
        .map(|i| {
            let mut rng = substream(seed, Domain::Feeders, i as u64);
            let sm: u32 = rng.gen_range(600..=1500);
            let r_ev = params.ev_rate.sample(&mut rng);
            let r_hp = params.hp_rate.sample(&mut rng);
            let r_der = params.der_rate.sample(&mut rng);
            let commercial = rng.gen_range(0.0..0.2);
            let scale = rng.gen_range(0.92..1.08);
            let base_profile: Vec<f64> = (0..STEPS_PER_DAY)
                .map(|slot| {
                    let h = slot as f64 / 4.0;
                    sm as f64
                        * scale
                        * ((1.0 - commercial) * residential_kw(h) + commercial * commercial_kw(h))
                })
                .collect();
            let peak = base_profile.iter().cloned().fold(f64::MIN, f64::max);
            FeederTemplate {
                feeder_id: i as u32,
                n_smart_meters: sm,
                n_ev_submeters: (r_ev * sm as f64).round() as u32,
                n_hp_submeters: (r_hp * sm as f64).round() as u32,
                der_capacity_kw: r_der * peak,
                daily_peak_kw: peak,
                base_profile,
            }
        })
        .collect();
    Ok(feeders)
}

/// Admissible restoration window: room for a week of baselines in front and
/// the DER profile rows behind.
fn admissible_starts(weather: &WeatherTrace, max_duration_h: f64) -> (usize, usize) {
    let lo = LEAD_DAYS * STEPS_PER_DAY;
    let tail = (max_duration_h * 4.0).ceil() as usize + 4;
    (lo, weather.len().saturating_sub(tail))
}

/// Draw `n` outages over the weather horizon.
pub fn sample_outages(
    n: usize,
    feeders: &[FeederTemplate],
    weather: &WeatherTrace,
    sampling: &OutageSampling,
    seed: u64,
) -> Result<Vec<OutageEvent>> {
    if n == 0 {
        return Err(Error::invalid("n ≥ 1 required"));
    }
    if feeders.is_empty() {
        return Err(Error::invalid("feeder list is empty"));
    }
    sampling.validate()?;
    let (lo, hi) = admissible_starts(weather, sampling.max_duration_h);
    if hi <= lo {
        return Err(Error::invalid("weather horizon too short for outages"));
    }
    let w_max = sampling.hour_weights.iter().cloned().fold(0.0, f64::max)
        * sampling.month_weights.iter().cloned().fold(0.0, f64::max);

    let events = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Domain::Outages, i as u64);
            let start_step = loop {
                let s = rng.gen_range(lo..hi);
                let t = weather.timestamp(s);
                let w = sampling.hour_weights[t.hour() as usize]
                    * sampling.month_weights[t.month0() as usize];
                if rng.gen::<f64>() * w_max < w {
                    break s;
                }
            };
            let duration_h = sampling.draw_duration(&mut rng);
            let feeder = &feeders[rng.gen_range(0..feeders.len())];
            let share = rng.gen_range(sampling.min_affected_share..=1.0);
            let n_customers = ((share * feeder.n_smart_meters as f64).round() as u32)
                .clamp(1, feeder.n_smart_meters.max(1));
            let start_time = weather.timestamp(start_step);
            let restoration_time = start_time + Duration::minutes((duration_h * 60.0).round() as i64);
            let res_step = start_step + (duration_h * 4.0).round() as usize;
            OutageEvent {
                event_id: i as u64,
                feeder_id: feeder.feeder_id,
                start_time,
                duration_h,
                n_customers_affected: n_customers,
                restoration_time,
                weather_at_restoration: weather.sample(res_step),
            }
        })
        .collect();
    Ok(events)
}

/// Generate a full synthetic city.
pub fn gen_city_with(config: &CityConfig, seed: u64) -> Result<SyntheticDataset> {
    if config.n_feeders == 0 {
        return Err(Error::invalid("n_feeders >= 1 required"));
    }
    if config.n_events == 0 {
        return Err(Error::invalid("n_events >= 1 required"));
    }
    if config.days < LEAD_DAYS + 2 {
        return Err(Error::invalid(format!("days must be at least {}", LEAD_DAYS + 2)));
    }
    config.params.validate()?;
    config.sampling.validate()?;
    let start = config
        .start_date
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists");
    let weather = WeatherTrace::generate(start, config.days, seed);
    let feeders = gen_feeders(config.n_feeders, &config.params, seed)?;
    let events = sample_outages(config.n_events, &feeders, &weather, &config.sampling, seed)?;

    let planted: Vec<PlantedEvent> = events
        .par_iter()
        .map(|e| {
            let feeder = &feeders[e.feeder_id as usize];
            let mut rng = substream(seed, Domain::Events, e.event_id);
            plant_surge(e, feeder, &weather, &config.params, seed, &mut rng)
        })
        .collect::<Result<_>>()?;

    let mut traces = Vec::with_capacity(planted.len());
    let mut ground_truth = Vec::with_capacity(planted.len());
    let mut ev_sessions = Vec::new();
    for p in planted {
        traces.push(p.trace);
        ground_truth.push(p.truth);
        ev_sessions.extend(p.sessions);
    }
    Ok(SyntheticDataset {
        config: config.clone(),
        seed,
        feeders,
        weather,
        events,
        traces,
        ground_truth,
        ev_sessions,
    })
}

/// Generate a city with default timing over one year.
pub fn gen_city(
    n_feeders: usize,
    n_events: usize,
    params: GroundTruthParams,
    seed: u64,
) -> Result<SyntheticDataset> {
    let config = CityConfig {
        n_feeders,
        n_events,
        params,
        ..CityConfig::default()
    };
    gen_city_with(&config, seed)
}

/// Day-to-day multiplicative demand variation of a feeder.
pub(crate) fn day_factor(seed: u64, feeder_id: u32, day: i64) -> f64 {
    let key = ((feeder_id as u64) << 32) ^ (day as u64 & 0xFFFF_FFFF);
    let mut rng = substream(seed, Domain::Misc, key);
    let z: f64 = StandardNormal.sample(&mut rng);
    (1.0 + 0.04 * z).max(0.5)
}

pub(crate) fn slot_of(t: NaiveDateTime) -> usize {
    (t.hour() * 4 + t.minute() / 15) as usize
}

pub(crate) fn clock_hour(t: NaiveDateTime) -> f64 {
    t.hour() as f64 + t.minute() as f64 / 60.0
}

/// Normal (non-deferred) per-EV charging shape, 1.0 at the evening peak.
pub(crate) fn ev_normal_shape(hour: f64) -> f64 {
    0.15 + 0.85 * bump(hour, 21.5, 2.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn generation_is_deterministic() {
        let a = gen_city(1, 1, GroundTruthParams::default(), 7).unwrap();
        let b = gen_city(1, 1, GroundTruthParams::default(), 7).unwrap();
        assert_eq!(a, b);
        let c = gen_city(1, 1, GroundTruthParams::default(), 8).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn rejects_empty_inputs() {
        assert!(gen_city(0, 1, GroundTruthParams::default(), 1).is_err());
        assert!(gen_city(1, 0, GroundTruthParams::default(), 1).is_err());
        let bad = GroundTruthParams {
            hp_cold_slope: -1.0,
            ..Default::default()
        };
        let err = gen_city(1, 1, bad, 1).unwrap_err();
        assert!(err.to_string().contains("hp_cold_slope"));
    }

    #[test]
    fn feeders_respect_invariants() {
        let feeders = gen_feeders(50, &GroundTruthParams::default(), 3).unwrap();
        for f in &feeders {
            f.validate().unwrap();
        }
    }

    #[test]
    fn outage_sampling_boundaries() {
        let city = gen_city(3, 2, GroundTruthParams::default(), 1).unwrap();
        let err = sample_outages(0, &city.feeders, &city.weather, &OutageSampling::default(), 1)
            .unwrap_err();
        assert!(err.to_string().contains("n ≥ 1 required"));
        assert!(sample_outages(5, &[], &city.weather, &OutageSampling::default(), 1).is_err());
        let a = sample_outages(100, &city.feeders, &city.weather, &OutageSampling::default(), 9).unwrap();
        let b = sample_outages(100, &city.feeders, &city.weather, &OutageSampling::default(), 9).unwrap();
        assert_eq!(a, b);
        for e in &a {
            assert!(e.duration_h > 0.0);
            assert_eq!(
                e.restoration_time,
                e.start_time + Duration::minutes((e.duration_h * 60.0) as i64)
            );
            let f = &city.feeders[e.feeder_id as usize];
            assert!(e.n_customers_affected <= f.n_smart_meters);
        }
    }

    #[test]
    fn uniform_hour_weighting_passes_chi_square() {
        let city = gen_city(3, 1, GroundTruthParams::default(), 1).unwrap();
        let n = 10_000;
        let events = sample_outages(n, &city.feeders, &city.weather, &OutageSampling::default(), 3).unwrap();
        let mut counts = [0f64; 24];
        for e in &events {
            counts[e.start_time.hour() as usize] += 1.0;
        }
        let expected = n as f64 / 24.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(23.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn median_duration_is_near_default() {
        let city = gen_city(3, 1, GroundTruthParams::default(), 1).unwrap();
        let events = sample_outages(4000, &city.feeders, &city.weather, &OutageSampling::default(), 5).unwrap();
        let d: Vec<f64> = events.iter().map(|e| e.duration_h).collect();
        let med = crate::stats::nearest_rank(&d, 50.0);
        assert!((1.25..=1.75).contains(&med), "median {med}");
    }
}
