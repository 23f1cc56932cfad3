//! Planted surge physics and the meter traces that carry it.

use chrono::Duration;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};

use super::{
    bump, clock_hour, day_factor, ev_normal_shape, slot_of, EvSession, EventTrace, FeederTemplate,
    GroundTruthParams, OutageEvent, TraceRow, WeatherTrace, STEP_MIN,
};
use crate::error::{Error, Result};
use crate::metrics::{der_missing_power, GenerationProfile, SurgeComponents, SurgeWindow};
use crate::rng::Rng;

/// Probability that an EV defers charging to the restoration instant,
/// before the duration gain.
pub fn ev_propensity(params: &GroundTruthParams, hour: f64) -> f64 {
    let (a, b) = params.ev_evening_peak_hours;
    let centre = 0.5 * (a + b);
    let width = 0.5 * (b - a);
    let night = params.ev_night_propensity;
    night
        + (params.ev_peak_propensity - night) * bump(hour, centre, width)
        + (params.ev_midday_propensity - night).max(0.0) * bump(hour, 12.5, 1.5)
}

/// Propensity scaled by the outage-duration gain (saturating at 6 h).
pub(crate) fn ev_flag_probability(params: &GroundTruthParams, hour: f64, duration_h: f64) -> f64 {
    (ev_propensity(params, hour) * (1.0 + params.ev_duration_gain * duration_h.min(6.0))).min(1.0)
}

/// Post-restoration extra demand of one heat pump (kW).
pub(crate) fn hp_surge_kw(params: &GroundTruthParams, temp_c: f64, duration_h: f64) -> f64 {
    let recovery = 1.0 - (-duration_h / params.hp_recovery_tau_h).exp();
    let strip = 1.0 - (-duration_h / params.hp_strip_tau_h).exp();
    let ramp = params.hp_cold_slope * (params.hp_comfort_c - temp_c).max(0.0) * recovery;
    let step = if temp_c < params.hp_strip_heat_threshold_c {
        params.hp_strip_kw * strip
    } else {
        0.0
    };
    let cooling = params.hp_cool_slope * (temp_c - params.hp_cooling_c).max(0.0) * recovery;
    ramp + step + cooling
}

/// Steady HP demand per unit (kW) at an ambient temperature.
fn hp_base_kw(temp_c: f64) -> f64 {
    0.3 + 0.06 * (18.0 - temp_c).max(0.0) + 0.05 * (temp_c - 24.0).max(0.0)
}

/// Cold-load-pickup residual surge ratio.
pub(crate) fn clpu_ratio(params: &GroundTruthParams, temp_c: f64, duration_h: f64) -> f64 {
    let thermal = 1.0 + (15.0 - temp_c).max(0.0) / 15.0 + (temp_c - 25.0).max(0.0) / 10.0;
    params.clpu_base
        + params.clpu_gain * (1.0 - (-duration_h / params.clpu_decay_const).exp()) * thermal
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedEvent {
    /// Noise-free planted components.
    pub truth: SurgeComponents,
    /// Components carried by the emitted traces (truth plus noise).
    pub observed: SurgeComponents,
    pub trace: EventTrace,
    pub sessions: Vec<EvSession>,
    pub base_total_kw: f64,
}

/// Plant surge components for one event and emit traces that carry them.
///
/// Noise (on the EV, HP and residual ratios) is drawn after the truth is
/// recorded; the DER term is a deterministic function of the generation
/// profile. Draws for every charger are made whether or not it defers, so
/// events that differ only in duration share their per-charger uniforms.
pub fn plant_surge(
    event: &OutageEvent,
    feeder: &FeederTemplate,
    weather: &WeatherTrace,
    params: &GroundTruthParams,
    seed: u64,
    rng: &mut Rng,
) -> Result<PlantedEvent> {
    let outside = || Error::OutsideWeather {
        event_id: event.event_id,
    };
    if event.feeder_id != feeder.feeder_id {
        return Err(Error::invalid("event and feeder do not match"));
    }
    let res_step = weather.step_of(event.restoration_time).ok_or_else(outside)?;
    let window = SurgeWindow::default();
    let knots = ((window.length_min + 3.0 * params.der_delay.sigma) / STEP_MIN as f64).ceil() as usize + 1;
    if res_step + knots > weather.len() {
        return Err(outside());
    }
    let base_steps: Vec<usize> = window
        .baseline_starts(event)
        .into_iter()
        .map(|t| weather.step_of(t).ok_or_else(outside))
        .collect::<Result<_>>()?;

    let share = event.n_customers_affected as f64 / feeder.n_smart_meters.max(1) as f64;
    let n_ev = (share * feeder.n_ev_submeters as f64).round() as u32;
    let n_hp = (share * feeder.n_hp_submeters as f64).round() as u32;
    let der_cap = share * feeder.der_capacity_kw;
    let generation = |step: usize| der_cap * weather.ghi[step] / 1000.0 * params.der_derate;

    let mut base_rows = Vec::with_capacity(base_steps.len());
    let (mut b_tot, mut b_ev, mut b_hp) = (0.0, 0.0, 0.0);
    for &s in &base_steps {
        let t = weather.timestamp(s);
        let day = (t - weather.start).num_days();
        let other = share * feeder.base_profile[slot_of(t)] * day_factor(seed, feeder.feeder_id, day);
        let ev = n_ev as f64 * params.ev_base_kw * ev_normal_shape(clock_hour(t));
        let hp = n_hp as f64 * hp_base_kw(weather.temp_c[s]);
        let der = generation(s);
        let total = other + ev + hp - der;
        b_tot += total;
        b_ev += ev;
        b_hp += hp;
        base_rows.push(TraceRow::new(t, [total, ev, hp, der]));
    }
    let n_base = base_steps.len() as f64;
    let (b_tot, b_ev, b_hp) = (b_tot / n_base, b_ev / n_base, b_hp / n_base);
    if !(b_tot > 0.0) {
        return Err(Error::DegenerateBaseline(b_tot));
    }

    let hour = event.restoration_hour();
    let temp = weather.temp_c[res_step];
    let d = event.duration_h;

    let p_flag = ev_flag_probability(params, hour, d);
    let session_len = Exp::new(1.0 / 60.0).expect("positive rate");
    let mut sessions = Vec::new();
    for m in 0..n_ev {
        let u: f64 = rng.gen();
        let extra: f64 = session_len.sample(rng);
        if u < p_flag {
            sessions.push(EvSession {
                event_id: event.event_id,
                charger: m,
                power_kw: params.ev_charger_kw,
                session_min: 30.0 + extra,
            });
        }
    }
    let ev_kw: f64 = sessions.iter().map(|s| s.power_kw).sum();
    let s_ev = ev_kw / b_tot;
    let s_hp = n_hp as f64 * hp_surge_kw(params, temp, d) / b_tot;
    let gen_profile: Vec<f64> = (0..knots).map(|j| generation(res_step + j)).collect();
    let profile = GenerationProfile::new(STEP_MIN as f64, gen_profile.clone())?;
    let s_der = der_missing_power(&profile, &params.der_delay, window.length_min)?.kw / b_tot;
    let s_oth = clpu_ratio(params, temp, d);
    let truth = SurgeComponents::from_parts(s_ev, s_hp, s_der, s_oth);

    let observed = if params.noise_sd > 0.0 {
        let mut noise = || -> f64 {
            let z: f64 = StandardNormal.sample(rng);
            params.noise_sd * z
        };
        SurgeComponents::from_parts(s_ev + noise(), s_hp + noise(), s_der, s_oth + noise())
    } else {
        truth
    };

    let res_total = b_tot + observed.s_tot * b_tot;
    let res_ev = b_ev + observed.s_ev * b_tot;
    let res_hp = b_hp + observed.s_hp * b_tot;
    let mut rows = base_rows;
    for (j, c) in gen_profile.iter().enumerate() {
        rows.push(TraceRow::new(
            event.restoration_time + Duration::minutes(STEP_MIN * j as i64),
            [res_total, res_ev, res_hp, *c],
        ));
    }
    Ok(PlantedEvent {
        truth,
        observed,
        trace: EventTrace {
            event_id: event.event_id,
            rows,
        },
        sessions,
        base_total_kw: b_tot,
    })
}
