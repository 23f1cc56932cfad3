//! Surge mitigation: staggered EV restart, brief thermostat offsets and
//! accelerated DER reconnection, each summarised as a per-event factor.
//!
//! Conventions: `gamma_ev` and `gamma_hp` are *reductions* (1 removes the
//! component), `gamma_der` is the *remaining* share of missing DER power
//! (1 leaves it unchanged). [`apply`] encodes each direction.

use std::collections::HashMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{der_missing_power, EventRecord, missing_power, DelayDensity, DerDelayModel, GenerationProfile, SurgeComponents};
use crate::rng::{substream, Domain};
use crate::synth::{EvSession, EventTrace, SyntheticDataset};

/// Surge window, minutes.
pub const WINDOW_MIN: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvRestartPolicy {
    /// Restart delays are uniform on `[t1_min, t2_min]`.
    pub t1_min: f64,
    pub t2_min: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for EvRestartPolicy {
    fn default() -> Self {
        Self {
            t1_min: 0.0,
            t2_min: 15.0,
            trials: 1000,
            seed: 0,
        }
    }
}

impl EvRestartPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1_min >= 0.0 && self.t1_min <= self.t2_min && self.t2_min.is_finite()) || self.trials == 0 {
            return Err(Error::invalid("EV restart window needs 0 <= t1 <= t2 and trials >= 1"));
        }
        Ok(())
    }
}

/// Piecewise-constant charger power, `kw[i]` on `[i·step, (i+1)·step)`
/// minutes after restoration, zero afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargerProfile {
    pub step_min: f64,
    pub kw: Vec<f64>,
    cum: Vec<f64>,
}

impl ChargerProfile {
    pub fn new(step_min: f64, kw: Vec<f64>) -> Result<Self> {
        if !(step_min > 0.0) || kw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("charger profile needs a positive step and finite samples"));
        }
        let mut cum = Vec::with_capacity(kw.len() + 1);
        cum.push(0.0);
        for v in &kw {
            cum.push(cum.last().expect("non-empty") + v * step_min);
        }
        Ok(Self { step_min, kw, cum })
    }

    /// Constant `power_kw` for `duration_min`.
    pub fn session(power_kw: f64, duration_min: f64) -> Result<Self> {
        if !(duration_min >= 0.0) {
            return Err(Error::invalid("session duration must be >= 0"));
        }
        let full = duration_min.floor() as usize;
        let mut kw = vec![power_kw; full];
        let rest = duration_min - full as f64;
        if rest > 0.0 {
            kw.push(power_kw * rest);
        }
        Self::new(1.0, kw)
    }

    /// Energy delivered over `[0, x]` minutes (kW·min).
    pub fn energy_to(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let pos = x / self.step_min;
        let i = pos.floor() as usize;
        if i >= self.kw.len() {
            return *self.cum.last().expect("non-empty");
        }
        self.cum[i] + self.kw[i] * (x - i as f64 * self.step_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvFactor {
    pub gamma: f64,
    /// No EV load in the window; `gamma` is reported as 0.
    pub zero_load: bool,
}

/// Monte Carlo reduction of window-average EV load when every charger
/// restarts after an independent uniform delay.
pub fn gamma_ev(profiles: &[ChargerProfile], policy: &EvRestartPolicy) -> Result<EvFactor> {
    policy.validate()?;
    if profiles.is_empty() {
        return Err(Error::invalid("gamma_ev needs at least one charger profile"));
    }
    let undelayed: f64 = profiles.iter().map(|p| p.energy_to(WINDOW_MIN)).sum::<f64>() / WINDOW_MIN;
    if !(undelayed > 0.0) {
        return Ok(EvFactor {
            gamma: 0.0,
            zero_load: true,
        });
    }
    let (t1, w) = (policy.t1_min, policy.t2_min - policy.t1_min);
    let per_trial: Vec<f64> = (0..policy.trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(policy.seed, Domain::EvRestart, k as u64);
            profiles
                .iter()
                .map(|p| {
                    let tau = t1 + w * rng.gen::<f64>();
                    p.energy_to(WINDOW_MIN - tau)
                })
                .sum::<f64>()
                / WINDOW_MIN
        })
        .collect();
    let delayed = per_trial.iter().sum::<f64>() / policy.trials as f64;
    Ok(EvFactor {
        gamma: (1.0 - delayed / undelayed).clamp(0.0, 1.0),
        zero_load: false,
    })
}

/// Temperature regime of the indoor–outdoor difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Cold,
    Mild,
    Hot,
}

pub const REGIME_BREAK_C: f64 = 5.0;
pub const MIN_REGIME_POINTS: usize = 10;

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Cold, Regime::Mild, Regime::Hot];

    /// Cold below −5, hot above +5, mild in between (inclusive).
    pub fn of(delta_t: f64) -> Self {
        if delta_t < -REGIME_BREAK_C {
            Regime::Cold
        } else if delta_t > REGIME_BREAK_C {
            Regime::Hot
        } else {
            Regime::Mild
        }
    }

    fn idx(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeFit {
    pub beta: f64,
    pub alpha: f64,
    pub n: usize,
    /// Fewer than the minimum points; coefficients are the pooled fit.
    pub underpowered: bool,
}

/// Per-regime linear model of per-unit HP surge against the
/// outdoor-minus-setpoint difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseRegimeModel {
    pub cold: RegimeFit,
    pub mild: RegimeFit,
    pub hot: RegimeFit,
}

impl PiecewiseRegimeModel {
    pub fn regime(&self, r: Regime) -> &RegimeFit {
        match r {
            Regime::Cold => &self.cold,
            Regime::Mild => &self.mild,
            Regime::Hot => &self.hot,
        }
    }

    pub fn eval(&self, delta_t: f64) -> f64 {
        let f = self.regime(Regime::of(delta_t));
        f.beta * delta_t + f.alpha
    }
}

fn ols(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 1e-12 * n * (1.0 + mx * mx)) {
        return None;
    }
    let beta = sxy / sxx;
    Some((beta, my - beta * mx))
}

/// Ordinary least squares per regime with fixed breakpoints at ±5.
pub fn fit_piecewise(points: &[(f64, f64)]) -> Result<PiecewiseRegimeModel> {
    if points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::invalid("non-finite point in HP scatter"));
    }
    let pooled = ols(points).ok_or_else(|| Error::invalid("HP scatter needs at least two distinct temperature differences"))?;
    let mut by: [Vec<(f64, f64)>; 3] = Default::default();
    for p in points {
        by[Regime::of(p.0).idx()].push(*p);
    }
    let fit = |r: Regime| {
        let pts = &by[r.idx()];
        let own = if pts.len() >= MIN_REGIME_POINTS { ols(pts) } else { None };
        let (beta, alpha) = own.unwrap_or(pooled);
        RegimeFit {
            beta,
            alpha,
            n: pts.len(),
            underpowered: own.is_none(),
        }
    };
    Ok(PiecewiseRegimeModel {
        cold: fit(Regime::Cold),
        mild: fit(Regime::Mild),
        hot: fit(Regime::Hot),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermostatPolicy {
    /// Magnitude of the setpoint offset, moved toward a neutral difference.
    pub offset_c: f64,
    /// Indoor setpoint used to form `delta_t = outdoor − setpoint`.
    pub setpoint_c: f64,
}

impl Default for ThermostatPolicy {
    fn default() -> Self {
        Self {
            offset_c: 2.0,
            setpoint_c: 20.0,
        }
    }
}

impl ThermostatPolicy {
    /// The signed offset for a given difference: negative in the cold (the
    /// setback moves the difference toward zero), positive in the heat.
    pub fn delta_set(&self, delta_t: f64) -> f64 {
        if delta_t == 0.0 {
            0.0
        } else {
            self.offset_c.min(delta_t.abs()) * delta_t.signum()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpFactor {
    pub gamma: f64,
    /// The raw ratio fell outside `[0, 1]`.
    pub clamped: bool,
    /// `f(delta_t) <= 0`; `gamma` is reported as 0.
    pub degenerate: bool,
}

/// `1 − f(ΔT − ΔT_set) / f(ΔT)`.
pub fn gamma_hp(delta_t: f64, delta_set: f64, model: &PiecewiseRegimeModel) -> HpFactor {
    let denom = model.eval(delta_t);
    if !(denom > 0.0) {
        return HpFactor {
            gamma: 0.0,
            clamped: false,
            degenerate: true,
        };
    }
    let raw = 1.0 - model.eval(delta_t - delta_set) / denom;
    let gamma = raw.clamp(0.0, 1.0);
    HpFactor {
        gamma,
        clamped: gamma != raw,
        degenerate: false,
    }
}

/// Accelerated inverter reconnection: a delay density confined to the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerReconnectPolicy {
    pub density: DelayDensity,
}

impl DerReconnectPolicy {
    /// Uniform soft start on `[tau_min, 15 min]`.
    pub fn soft_start(tau_min: f64) -> Result<Self> {
        let p = Self {
            density: DelayDensity::Uniform {
                lo: tau_min,
                hi: WINDOW_MIN,
            },
        };
        p.density.validate()?;
        Ok(p)
    }

    /// The baseline behaviour, i.e. no mitigation.
    pub fn from_model(m: &DerDelayModel) -> Self {
        Self { density: m.density() }
    }
}

impl Default for DerReconnectPolicy {
    fn default() -> Self {
        Self::soft_start(0.5).expect("valid default")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerFactor {
    pub gamma: f64,
    /// No missing DER power under the baseline model; `gamma` is reported as 1.
    pub zero_missing: bool,
}

/// Ratio of missing DER power under the policy to that under the baseline
/// reconnection model, both from the same quadrature.
pub fn gamma_der(profile: &GenerationProfile, baseline: &DerDelayModel, policy: &DerReconnectPolicy) -> Result<DerFactor> {
    let base = der_missing_power(profile, baseline, WINDOW_MIN)?.kw;
    if !(base > 0.0) {
        return Ok(DerFactor {
            gamma: 1.0,
            zero_missing: true,
        });
    }
    let with = missing_power(profile, &policy.density, WINDOW_MIN)?.kw;
    Ok(DerFactor {
        gamma: (with / base).clamp(0.0, 1.0),
        zero_missing: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MitigationFactors {
    pub gamma_ev: f64,
    pub gamma_hp: f64,
    pub gamma_der: f64,
}

impl MitigationFactors {
    pub const NONE: Self = Self {
        gamma_ev: 0.0,
        gamma_hp: 0.0,
        gamma_der: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.gamma_ev) && unit(self.gamma_hp) && unit(self.gamma_der)) {
            return Err(Error::invalid("mitigation factors must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn apply(c: &SurgeComponents, f: &MitigationFactors) -> Result<SurgeComponents> {
    f.validate()?;
    Ok(SurgeComponents::from_parts(
        c.s_ev * (1.0 - f.gamma_ev),
        c.s_hp * (1.0 - f.gamma_hp),
        c.s_der * f.gamma_der,
        c.s_oth,
    ))
}

/// The three policies together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationPolicies {
    pub ev: EvRestartPolicy,
    pub thermostat: ThermostatPolicy,
    pub der: DerReconnectPolicy,
}

/// Factors for one event, with the flags behind them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventFactors {
    pub event_id: u64,
    pub factors: MitigationFactors,
    pub delta_t: f64,
    /// The event had no charging sessions; the fleet-wide EV factor is used.
    pub ev_from_fleet: bool,
    pub hp_clamped: bool,
    pub hp_degenerate: bool,
    pub der_zero_missing: bool,
}

/// `(outdoor − setpoint, per-unit HP surge kW)` for events with heat pumps.
pub fn hp_scatter(records: &[EventRecord], setpoint_c: f64) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter_map(|r| {
            let units = r.r_hp * r.n_customers as f64;
            (units >= 1.0).then(|| (r.temp_c - setpoint_c, r.s_hp * r.base_kw / units))
        })
        .collect()
}

fn session_profiles(sessions: &[&EvSession]) -> Result<Vec<ChargerProfile>> {
    sessions.iter().map(|s| ChargerProfile::session(s.power_kw, s.session_min)).collect()
}

/// Per-event factors for every record: EV from the event's own charging
/// sessions, HP from the fitted regime model at the event temperature, DER
/// from the event's post-restoration generation.
pub fn event_factors(
    data: &SyntheticDataset,
    records: &[EventRecord],
    der_model: &DerDelayModel,
    policies: &MitigationPolicies,
    hp_model: &PiecewiseRegimeModel,
) -> Result<Vec<EventFactors>> {
    let mut by_event: HashMap<u64, Vec<&EvSession>> = HashMap::new();
    for s in &data.ev_sessions {
        by_event.entry(s.event_id).or_default().push(s);
    }
    let all: Vec<&EvSession> = data.ev_sessions.iter().collect();
    let fleet = if all.is_empty() {
        EvFactor {
            gamma: 0.0,
            zero_load: true,
        }
    } else {
        gamma_ev(&session_profiles(&all)?, &policies.ev)?
    };
    let traces: HashMap<u64, &EventTrace> = data.traces.iter().map(|t| (t.event_id, t)).collect();
    records
        .par_iter()
        .map(|r| {
            let (ev, ev_from_fleet) = match by_event.get(&r.event_id) {
                Some(s) => (gamma_ev(&session_profiles(s)?, &policies.ev)?, false),
                None => (fleet, true),
            };
            let delta_t = r.temp_c - policies.thermostat.setpoint_c;
            let hp = gamma_hp(delta_t, policies.thermostat.delta_set(delta_t), hp_model);
            let gen: Vec<f64> = traces
                .get(&r.event_id)
                .map(|t| t.rows.iter().filter(|row| row.time >= r.restoration_time).map(|row| row.der_kw).collect())
                .unwrap_or_default();
            let profile = if gen.is_empty() {
                GenerationProfile::constant(0.0)
            } else {
                GenerationProfile::new(WINDOW_MIN, gen)?
            };
            let der = gamma_der(&profile, der_model, &policies.der)?;
            Ok(EventFactors {
                event_id: r.event_id,
                factors: MitigationFactors {
                    gamma_ev: ev.gamma,
                    gamma_hp: hp.gamma,
                    gamma_der: der.gamma,
                },
                delta_t,
                ev_from_fleet,
                hp_clamped: hp.clamped,
                hp_degenerate: hp.degenerate,
                der_zero_missing: der.zero_missing,
            })
        })
        .collect()
}
