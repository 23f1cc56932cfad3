//! Counterfactual city-wide restoration Monte Carlo.
//!
//! Historical events serve as templates. Their penetrations are rescaled to
//! a trajectory target, the estimator predicts their surge ratios under an
//! imposed outage duration, and portfolios of templates are drawn until
//! their combined baseline equals a share `alpha` of the system baseline.
//! Each draw's surge (GW) is compared with the restoration window's headroom.

use chrono::Duration;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{featurize, EventKey, SurgeEstimator};
use crate::metrics::{EventRecord, PenetrationRates, SurgeComponents};
use crate::mitigation::{apply, MitigationFactors};
use crate::rng::{substream, Domain};
use crate::stats::{mean, quantile_sorted};
use crate::synth::WeatherTrace;

const KW_PER_GW: f64 = 1e6;
/// Portfolios stop once within `PORTFOLIO_EPS · alpha` relative shortfall of the target.
pub const PORTFOLIO_EPS: f64 = 0.01;
const MAX_PORTFOLIO: usize = 10_000_000;
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub name: String,
    pub r_ev_target: f64,
    pub r_hp_target: f64,
    pub r_der_target: f64,
}

impl Trajectory {
    pub fn baseline() -> Self {
        Self {
            name: "baseline".into(),
            r_ev_target: 0.10,
            r_hp_target: 0.30,
            r_der_target: 0.10,
        }
    }

    pub fn policy() -> Self {
        Self {
            name: "policy".into(),
            r_ev_target: 0.30,
            r_hp_target: 0.40,
            r_der_target: 0.25,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(Self::baseline()),
            "policy" => Ok(Self::policy()),
            _ => Err(Error::invalid(format!("unknown trajectory {name:?} (expected baseline or policy)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.r_ev_target) && unit(self.r_hp_target) && unit(self.r_der_target)) {
            return Err(Error::invalid(format!("trajectory {}: targets must lie in [0, 1]", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowName {
    Night,
    Morning,
    Afternoon,
    Evening,
}

impl WindowName {
    pub fn label(self) -> &'static str {
        match self {
            WindowName::Night => "night",
            WindowName::Morning => "morning",
            WindowName::Afternoon => "afternoon",
            WindowName::Evening => "evening",
        }
    }
}

impl std::str::FromStr for WindowName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "night" | "n" => Ok(WindowName::Night),
            "morning" | "m" => Ok(WindowName::Morning),
            "afternoon" | "a" => Ok(WindowName::Afternoon),
            "evening" | "e" => Ok(WindowName::Evening),
            _ => Err(Error::invalid(format!("unknown restoration window {s:?}"))),
        }
    }
}

/// Restoration hours `[start, end)`, wrapping past midnight when `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestorationWindow {
    pub name: WindowName,
    pub start_hour: f64,
    pub end_hour: f64,
    pub headroom_gw: f64,
}

impl RestorationWindow {
    pub fn contains(&self, hour: f64) -> bool {
        if self.start_hour <= self.end_hour {
            hour >= self.start_hour && hour < self.end_hour
        } else {
            hour >= self.start_hour || hour < self.end_hour
        }
    }

    fn span(&self) -> f64 {
        (self.end_hour - self.start_hour).rem_euclid(24.0)
    }
}

pub fn default_windows() -> Vec<RestorationWindow> {
    let w = |name, start_hour, end_hour, headroom_gw| RestorationWindow {
        name,
        start_hour,
        end_hour,
        headroom_gw,
    };
    vec![
        w(WindowName::Night, 22.0, 6.0, 1.2),
        w(WindowName::Morning, 6.0, 12.0, 0.9),
        w(WindowName::Afternoon, 12.0, 18.0, 0.8),
        w(WindowName::Evening, 18.0, 22.0, 0.5),
    ]
}

/// Windows must partition the day and carry positive headroom.
pub fn validate_windows(ws: &[RestorationWindow]) -> Result<()> {
    for w in ws {
        if !(w.headroom_gw > 0.0) || !(0.0..24.0).contains(&w.start_hour) || !(0.0..=24.0).contains(&w.end_hour) {
            return Err(Error::invalid(format!(
                "window {}: hours must lie in [0, 24) and headroom must be > 0",
                w.name.label()
            )));
        }
    }
    let total: f64 = ws.iter().map(|w| w.span()).sum();
    let covered = (0..96).all(|q| ws.iter().filter(|w| w.contains(q as f64 * 0.25)).count() == 1);
    if (total - 24.0).abs() > 1e-9 || !covered {
        return Err(Error::invalid("restoration windows must partition the 24 h day"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TempBin {
    Any,
    /// Below 0 °C.
    Cold,
    /// 0–15 °C.
    Cool,
    /// 15–25 °C.
    Mild,
    /// Above 25 °C.
    Hot,
}

impl TempBin {
    pub fn contains(self, t: f64) -> bool {
        match self {
            TempBin::Any => true,
            TempBin::Cold => t < 0.0,
            TempBin::Cool => (0.0..15.0).contains(&t),
            TempBin::Mild => (15.0..=25.0).contains(&t),
            TempBin::Hot => t > 25.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TempBin::Any => "any",
            TempBin::Cold => "cold",
            TempBin::Cool => "cool",
            TempBin::Mild => "mild",
            TempBin::Hot => "hot",
        }
    }
}

/// A historical event reused as a portfolio building block.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub event_id: u64,
    pub restoration_time: chrono::NaiveDateTime,
    pub hour: f64,
    pub temp_c: f64,
    pub base_kw: f64,
    pub rates: PenetrationRates,
}

pub fn templates_from_records(records: &[EventRecord]) -> Vec<Template> {
    records
        .iter()
        .map(|r| Template {
            event_id: r.event_id,
            restoration_time: r.restoration_time,
            hour: r.hour,
            temp_c: r.temp_c,
            base_kw: r.base_kw,
            rates: PenetrationRates {
                r_ev: r.r_ev,
                r_hp: r.r_hp,
                r_der: r.r_der,
            },
        })
        .collect()
}

/// Mean historical penetrations over the templates.
pub fn fleet_means(templates: &[Template]) -> Result<PenetrationRates> {
    if templates.is_empty() {
        return Err(Error::invalid("no templates"));
    }
    let m = |f: fn(&PenetrationRates) -> f64| mean(&templates.iter().map(|t| f(&t.rates)).collect::<Vec<_>>());
    Ok(PenetrationRates {
        r_ev: m(|r| r.r_ev),
        r_hp: m(|r| r.r_hp),
        r_der: m(|r| r.r_der),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescaled {
    pub rates: PenetrationRates,
    /// Components clipped at 1, in `[ev, hp, der]` order.
    pub clipped: [bool; 3],
}

/// `r' = r · target / fleet_mean`, clipped to `[0, 1]`.
pub fn rescale_penetration(rates: &PenetrationRates, fleet: &PenetrationRates, traj: &Trajectory) -> Result<Rescaled> {
    traj.validate()?;
    let one = |r: f64, f: f64, target: f64| -> Result<(f64, bool)> {
        if !(f > 0.0) {
            return Err(Error::invalid("fleet-mean penetration must be > 0 to rescale"));
        }
        let v = r * target / f;
        Ok((v.clamp(0.0, 1.0), v > 1.0))
    };
    let (ev, ce) = one(rates.r_ev, fleet.r_ev, traj.r_ev_target)?;
    let (hp, ch) = one(rates.r_hp, fleet.r_hp, traj.r_hp_target)?;
    let (der, cd) = one(rates.r_der, fleet.r_der, traj.r_der_target)?;
    Ok(Rescaled {
        rates: PenetrationRates {
            r_ev: ev,
            r_hp: hp,
            r_der: der,
        },
        clipped: [ce, ch, cd],
    })
}

/// Template indices with weights; only the last weight can be below 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    pub entries: Vec<(usize, f64)>,
    pub base_kw: f64,
}

/// Draw templates with replacement until the combined baseline reaches
/// `[alpha·S·(1 − eps·alpha), alpha·S]`; an overshooting template is scaled down.
pub fn sample_portfolio<R: rand::Rng>(base_kw: &[f64], alpha: f64, system_base_gw: f64, rng: &mut R) -> Result<Portfolio> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("α ∈ (0,1]"));
    }
    if base_kw.is_empty() || base_kw.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(Error::invalid("templates need positive finite baselines"));
    }
    if !(system_base_gw > 0.0 && system_base_gw.is_finite()) {
        return Err(Error::invalid("system baseline must be > 0"));
    }
    let target = alpha * system_base_gw * KW_PER_GW;
    let mut entries = Vec::new();
    let mut cum = 0.0;
    while cum < target * (1.0 - PORTFOLIO_EPS * alpha) {
        if entries.len() >= MAX_PORTFOLIO {
            return Err(Error::invalid("target baseline is out of reach of the template sizes"));
        }
        let i = rng.gen_range(0..base_kw.len());
        let b = base_kw[i];
        if cum + b > target {
            let w = (target - cum) / b;
            entries.push((i, w));
            cum = target;
            break;
        }
        entries.push((i, 1.0));
        cum += b;
    }
    Ok(Portfolio { entries, base_kw: cum })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub mean_gw: f64,
    pub median_gw: f64,
    pub p95_gw: f64,
    /// 2.5 % and 97.5 % Monte Carlo quantiles.
    pub lo_gw: f64,
    pub hi_gw: f64,
    pub exceedance_prob: f64,
    pub headroom_gw: f64,
    pub n_draws: usize,
    pub n_templates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub trajectory: Trajectory,
    pub window: WindowName,
    pub temp_bin: TempBin,
    /// Imposed outage duration of every template, hours.
    pub duration_h: f64,
    pub alpha: f64,
    pub n_draws: usize,
    pub seed: u64,
}

/// System-level settings shared by all scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionSettings {
    pub system_base_gw: f64,
    pub windows: Vec<RestorationWindow>,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self {
            system_base_gw: 2.8,
            windows: default_windows(),
        }
    }
}

impl ProjectionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.system_base_gw > 0.0 && self.system_base_gw.is_finite()) {
            return Err(Error::invalid("system_base_gw must be > 0"));
        }
        validate_windows(&self.windows)
    }

    pub fn window(&self, name: WindowName) -> Result<&RestorationWindow> {
        self.windows
            .iter()
            .find(|w| w.name == name)
            .ok_or_else(|| Error::invalid(format!("no {} window configured", name.label())))
    }
}

/// Predicted components of every template under a trajectory and an
/// imposed duration; the per-template inputs of every draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSurges {
    pub components: Vec<SurgeComponents>,
    /// Templates with at least one penetration clipped at 1.
    pub n_clipped: usize,
}

pub fn template_surges(
    model: &SurgeEstimator,
    templates: &[Template],
    weather: &WeatherTrace,
    traj: &Trajectory,
    duration_h: f64,
) -> Result<TemplateSurges> {
    if !(duration_h > 0.0 && duration_h.is_finite()) {
        return Err(Error::invalid("scenario duration must be > 0"));
    }
    let fleet = fleet_means(templates)?;
    let rescaled = templates
        .iter()
        .map(|t| rescale_penetration(&t.rates, &fleet, traj))
        .collect::<Result<Vec<_>>>()?;
    let feats = templates
        .par_iter()
        .zip(&rescaled)
        .map(|(t, r)| {
            featurize(
                &EventKey {
                    restoration_time: t.restoration_time,
                    duration_h,
                    rates: r.rates,
                },
                weather,
                model.config.seq_len,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let pred = model.predict(&feats)?;
    Ok(TemplateSurges {
        components: pred.iter().map(|p| SurgeComponents::from_parts(p[0], p[1], p[2], p[3])).collect(),
        n_clipped: rescaled.iter().filter(|r| r.clipped.iter().any(|c| *c)).count(),
    })
}

/// Indices of templates restored inside `window` at temperatures in `bin`.
pub fn select_templates(templates: &[Template], window: &RestorationWindow, bin: TempBin) -> Result<Vec<usize>> {
    let idx: Vec<usize> = templates
        .iter()
        .enumerate()
        .filter(|(_, t)| window.contains(t.hour) && bin.contains(t.temp_c))
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyStratum(format!(
            "no templates restored in the {} window at {} temperatures",
            window.name.label(),
            bin.label()
        )));
    }
    Ok(idx)
}

/// Surge in kW of each selected template, optionally mitigated.
pub fn stratum_surges_kw(
    templates: &[Template],
    surges: &TemplateSurges,
    selected: &[usize],
    factors: Option<&[MitigationFactors]>,
) -> Result<Vec<f64>> {
    selected
        .iter()
        .map(|&i| {
            let c = match factors {
                Some(f) => apply(&surges.components[i], &f[i])?,
                None => surges.components[i],
            };
            Ok(c.s_tot * templates[i].base_kw)
        })
        .collect()
}

/// Surge (GW) of the portfolio of every `alpha` from one template sequence.
///
/// Equivalent to calling [`sample_portfolio`] once per alpha with identical
/// generator state, since smaller portfolios are prefixes of larger ones.
/// `order` sorts `alphas` ascending.
fn portfolio_surges<R: rand::Rng>(
    base_kw: &[f64],
    surge_kw: &[f64],
    alphas: &[f64],
    order: &[usize],
    system_base_gw: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = vec![0.0; alphas.len()];
    let mut next = 0;
    let (mut cum, mut surge) = (0.0, 0.0);
    while next < order.len() {
        let k = order[next];
        let target = alphas[k] * system_base_gw * KW_PER_GW;
        if cum >= target * (1.0 - PORTFOLIO_EPS * alphas[k]) {
            out[k] = surge / KW_PER_GW;
            next += 1;
            continue;
        }
        let i = rng.gen_range(0..base_kw.len());
        let b = base_kw[i];
        // Every pending portfolio this template would overshoot ends here.
        while next < order.len() {
            let k = order[next];
            let target = alphas[k] * system_base_gw * KW_PER_GW;
            if cum + b <= target {
                break;
            }
            out[k] = (surge + (target - cum) / b * surge_kw[i]) / KW_PER_GW;
            next += 1;
        }
        cum += b;
        surge += surge_kw[i];
    }
    out
}

/// Monte Carlo over portfolios for several `alpha`s under common random
/// numbers: draw `d` uses the same template sequence for every `alpha`.
pub fn simulate(
    base_kw: &[f64],
    surge_kw: &[f64],
    alphas: &[f64],
    system_base_gw: f64,
    headroom_gw: f64,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<ProjectionResult>> {
    if n_draws < MIN_DRAWS {
        return Err(Error::invalid(format!("n_draws must be >= {MIN_DRAWS}")));
    }
    if base_kw.len() != surge_kw.len() {
        return Err(Error::Shape {
            what: "template surges",
            expected: base_kw.len(),
            got: surge_kw.len(),
        });
    }
    if headroom_gw.is_nan() {
        return Err(Error::invalid("headroom must be a number"));
    }
    // Validate every alpha and the template set once, up front.
    for &a in alphas {
        sample_portfolio(base_kw, a, system_base_gw, &mut substream(seed, Domain::Portfolio, 0))?;
    }
    let mut order: Vec<usize> = (0..alphas.len()).collect();
    order.sort_by(|&a, &b| alphas[a].total_cmp(&alphas[b]));
    let draws: Vec<Vec<f64>> = (0..n_draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = substream(seed, Domain::Portfolio, d as u64);
            portfolio_surges(base_kw, surge_kw, alphas, &order, system_base_gw, &mut rng)
        })
        .collect();
    Ok((0..alphas.len())
        .map(|k| {
            let mut v: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            let m = mean(&v);
            let exceed = v.iter().filter(|x| **x > headroom_gw).count();
            v.sort_by(f64::total_cmp);
            ProjectionResult {
                mean_gw: m,
                median_gw: quantile_sorted(&v, 0.5),
                p95_gw: quantile_sorted(&v, 0.95),
                lo_gw: quantile_sorted(&v, 0.025),
                hi_gw: quantile_sorted(&v, 0.975),
                exceedance_prob: exceed as f64 / n_draws as f64,
                headroom_gw,
                n_draws,
                n_templates: base_kw.len(),
            }
        })
        .collect())
}

/// One scenario cell end to end.
pub fn project(
    scenario: &ScenarioConfig,
    templates: &[Template],
    weather: &WeatherTrace,
    model: &SurgeEstimator,
    settings: &ProjectionSettings,
    factors: Option<&[MitigationFactors]>,
) -> Result<ProjectionResult> {
    settings.validate()?;
    let window = settings.window(scenario.window)?;
    let selected = select_templates(templates, window, scenario.temp_bin)?;
    let surges = template_surges(model, templates, weather, &scenario.trajectory, scenario.duration_h)?;
    let base: Vec<f64> = selected.iter().map(|&i| templates[i].base_kw).collect();
    let kw = stratum_surges_kw(templates, &surges, &selected, factors)?;
    let r = simulate(
        &base,
        &kw,
        &[scenario.alpha],
        settings.system_base_gw,
        window.headroom_gw,
        scenario.n_draws,
        scenario.seed,
    )?;
    Ok(r[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub durations_h: Vec<f64>,
    pub alphas: Vec<f64>,
    pub temp_bin: TempBin,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            durations_h: vec![1.0, 2.0, 3.0],
            alphas: vec![0.05, 0.10, 0.15, 0.20, 0.25, 0.30],
            temp_bin: TempBin::Any,
            n_draws: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub trajectory: String,
    pub window: WindowName,
    pub duration_h: f64,
    pub alpha: f64,
    pub mitigated: bool,
    pub result: ProjectionResult,
}

/// Every window × duration × alpha cell, unmitigated and (if factors are
/// given) mitigated, all under common random numbers.
pub fn grid(
    traj: &Trajectory,
    templates: &[Template],
    weather: &WeatherTrace,
    model: &SurgeEstimator,
    settings: &ProjectionSettings,
    cfg: &GridConfig,
    factors: Option<&[MitigationFactors]>,
) -> Result<Vec<GridRow>> {
    settings.validate()?;
    if let Some(f) = factors {
        if f.len() != templates.len() {
            return Err(Error::Shape {
                what: "mitigation factors",
                expected: templates.len(),
                got: f.len(),
            });
        }
    }
    let mut rows = Vec::new();
    for &d in &cfg.durations_h {
        let surges = template_surges(model, templates, weather, traj, d)?;
        for w in &settings.windows {
            let selected = select_templates(templates, w, cfg.temp_bin)?;
            let base: Vec<f64> = selected.iter().map(|&i| templates[i].base_kw).collect();
            let variants: Vec<Option<&[MitigationFactors]>> = match factors {
                Some(f) => vec![None, Some(f)],
                None => vec![None],
            };
            for fac in variants {
                let kw = stratum_surges_kw(templates, &surges, &selected, fac)?;
                let res = simulate(&base, &kw, &cfg.alphas, settings.system_base_gw, w.headroom_gw, cfg.n_draws, cfg.seed)?;
                for (a, r) in cfg.alphas.iter().zip(res) {
                    rows.push(GridRow {
                        trajectory: traj.name.clone(),
                        window: w.name,
                        duration_h: d,
                        alpha: *a,
                        mitigated: fac.is_some(),
                        result: r,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Shift a restoration time so an imposed duration starts earlier; exposed
/// for callers building their own counterfactual events.
pub fn outage_start(restoration: chrono::NaiveDateTime, duration_h: f64) -> chrono::NaiveDateTime {
    restoration - Duration::seconds((duration_h * 3600.0).round() as i64)
}
