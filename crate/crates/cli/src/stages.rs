//! One function per subcommand. Stages read upstream artifacts from the
//! output directory and write their own next to them.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use surge_core::causal::{ate, fit_records};
use surge_core::empirics::{
    adjacent_band_test, band_stats, bootstrap_band_compare, default_grid, default_threshold, exceedance_curve,
    observations, percentile_threshold_analysis, PenetrationBands, SubsetFilter,
};
use surge_core::error::Error;
use surge_core::estimator::{self, build_dataset, SurgeEstimator};
use surge_core::metrics::{compute_surges, read_records, write_records, EventRecord};
use surge_core::mitigation::{apply, event_factors, fit_piecewise, hp_scatter, MitigationFactors, MitigationPolicies};
use surge_core::projection::{
    grid, project, templates_from_records, ProjectionResult, ScenarioConfig, TempBin, Template, WindowName,
};
use surge_core::stats::quantile_sorted;
use surge_core::synth::io::Table;
use surge_core::synth::{gen_city_with, read_dataset, write_dataset, SyntheticDataset};

use crate::config::{pointer, ConfigError, RunConfig};
use crate::out::{f, opt, require, write_csv, write_json, Layout};

pub struct Ctx {
    pub cfg: RunConfig,
    pub layout: Layout,
}

impl Ctx {
    fn dataset(&self) -> Result<SyntheticDataset> {
        let p = self.layout.dataset();
        require(&p.join("events.csv"), "synth")?;
        Ok(read_dataset(&p)?)
    }

    fn records(&self) -> Result<Vec<EventRecord>> {
        let p = self.layout.surges();
        require(&p, "metrics")?;
        Ok(read_records(&p)?)
    }

    fn model(&self, path: Option<&Path>) -> Result<SurgeEstimator> {
        let p = path.map(Path::to_path_buf).unwrap_or_else(|| self.layout.model());
        require(&p, "train")?;
        Ok(SurgeEstimator::load(&p)?)
    }
}

fn note(msg: impl AsRef<str>) {
    eprintln!("surge: {}", msg.as_ref());
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let data = gen_city_with(&ctx.cfg.synth, ctx.cfg.seed)?;
    std::fs::create_dir_all(ctx.layout.dataset())?;
    write_dataset(&data, &ctx.layout.dataset())?;
    note(format!(
        "synth: {} feeders, {} events -> {}",
        data.feeders.len(),
        data.events.len(),
        ctx.layout.dataset().display()
    ));
    Ok(())
}

pub fn metrics(ctx: &Ctx) -> Result<()> {
    let data = ctx.dataset()?;
    let recs = compute_surges(&data, &ctx.cfg.metrics.window, &ctx.cfg.der_delay())?;
    write_records(&ctx.layout.surges(), &recs)?;
    note(format!("metrics: {} events -> {}", recs.len(), ctx.layout.surges().display()));
    Ok(())
}

pub fn empirics(ctx: &Ctx) -> Result<()> {
    let recs = ctx.records()?;
    let cfg = &ctx.cfg.empirics;
    let (mut bands_rows, mut tests, mut thresholds, mut exceed, mut boot) = (vec![], vec![], vec![], vec![], vec![]);
    for &asset in &cfg.assets {
        let a = asset.name().to_string();
        let obs = observations(&recs, asset);
        let bands = PenetrationBands::default_for(asset);
        for s in band_stats(&obs, &bands)? {
            bands_rows.push(vec![
                a.clone(),
                bands.label(s.band),
                f(s.lo),
                f(s.hi),
                s.count.to_string(),
                opt(s.mean),
                opt(s.median),
                opt(s.p95),
            ]);
        }
        for t in adjacent_band_test(&obs, &bands)? {
            tests.push(vec![
                a.clone(),
                bands.label(t.lo_band),
                bands.label(t.hi_band),
                t.n_lo.to_string(),
                t.n_hi.to_string(),
                opt(t.u),
                opt(t.p),
                t.underpowered.to_string(),
            ]);
        }
        match percentile_threshold_analysis(&obs, &bands, &cfg.percentiles) {
            Ok(rows) => {
                for r in rows {
                    thresholds.push(vec![
                        a.clone(),
                        f(r.q),
                        f(r.threshold),
                        r.degenerate.to_string(),
                        bands.label(r.band),
                        r.n.to_string(),
                        opt(r.prob_below),
                    ]);
                }
            }
            Err(e) => note(format!("empirics: {a}: thresholds skipped: {e}")),
        }
        if let Some(th) = default_threshold(&obs, &bands) {
            for b in exceedance_curve(&obs, th, &default_grid(&bands, cfg.exceedance_bins))? {
                exceed.push(vec![
                    a.clone(),
                    f(th),
                    f(b.lo),
                    f(b.hi),
                    b.n.to_string(),
                    b.exceed.to_string(),
                    opt(b.prob),
                    opt(b.ci_lo),
                    opt(b.ci_hi),
                ]);
            }
        }
        let last = bands.len() - 1;
        let mut pairs: Vec<(usize, usize)> = (0..last).map(|b| (b, b + 1)).collect();
        pairs.push((0, last));
        for name in SubsetFilter::presets_for(asset) {
            let filter = SubsetFilter::preset(name)?;
            for &(lo, hi) in &pairs {
                match bootstrap_band_compare(&obs, &bands, lo, hi, &filter, &cfg.bootstrap) {
                    Ok(r) => {
                        let mut est = r.estimates.clone();
                        est.sort_by(f64::total_cmp);
                        boot.push(vec![
                            a.clone(),
                            name.to_string(),
                            bands.label(lo),
                            bands.label(hi),
                            f(r.mean),
                            f(quantile_sorted(&est, 0.025)),
                            f(quantile_sorted(&est, 0.975)),
                            est.len().to_string(),
                        ]);
                    }
                    Err(Error::EmptyStratum(m)) => note(format!(
                        "empirics: {a}/{name}: {} vs {} skipped: {m}",
                        bands.label(lo),
                        bands.label(hi)
                    )),
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    let l = &ctx.layout;
    write_csv(
        &l.file("empirics_bands.csv"),
        &["asset", "band", "lo", "hi", "count", "mean", "median", "p95"],
        bands_rows,
    )?;
    write_csv(
        &l.file("empirics_tests.csv"),
        &["asset", "lo_band", "hi_band", "n_lo", "n_hi", "u", "p", "underpowered"],
        tests,
    )?;
    write_csv(
        &l.file("empirics_thresholds.csv"),
        &["asset", "q", "threshold", "degenerate", "band", "n", "prob_below"],
        thresholds,
    )?;
    write_csv(
        &l.file("empirics_exceedance.csv"),
        &["asset", "threshold", "lo", "hi", "n", "exceed", "prob", "ci_lo", "ci_hi"],
        exceed,
    )?;
    write_csv(
        &l.file("empirics_bootstrap.csv"),
        &["asset", "filter", "lo_band", "hi_band", "mean", "lo", "hi", "iterations"],
        boot,
    )?;
    note("empirics: bands, tests, thresholds, exceedance and bootstrap tables written");
    Ok(())
}

pub fn causal(ctx: &Ctx) -> Result<()> {
    let recs = ctx.records()?;
    let cfg = &ctx.cfg.causal;
    let (mut ates, mut effects) = (vec![], vec![]);
    for &asset in &cfg.assets {
        let a = asset.name();
        let model = fit_records(&recs, asset, &cfg.forest)?;
        model.save(&ctx.layout.file(&format!("causal_{a}.bin")))?;
        let r = ate(&model, cfg.scale)?;
        ates.push(vec![
            a.to_string(),
            recs.len().to_string(),
            f(r.scale),
            f(r.ate_mean),
            f(r.std_err),
            f(r.ci_lo),
            f(r.ci_hi),
        ]);
        for (rec, e) in recs.iter().zip(&r.local_effects) {
            effects.push(vec![a.to_string(), rec.event_id.to_string(), f(*e)]);
        }
        note(format!(
            "causal: {a}: effect per {} = {} [{}, {}]",
            f(cfg.scale),
            f(r.ate_mean),
            f(r.ci_lo),
            f(r.ci_hi)
        ));
    }
    write_csv(
        &ctx.layout.file("causal_ate.csv"),
        &["asset", "n", "scale", "ate", "std_err", "ci_lo", "ci_hi"],
        ates,
    )?;
    write_csv(&ctx.layout.file("causal_effects.csv"), &["asset", "event_id", "effect"], effects)
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let data = ctx.dataset()?;
    let recs = ctx.records()?;
    let e = &ctx.cfg.estimator;
    let ds = build_dataset(&recs, &data.weather, e.model.seq_len)?;
    let (model, report) = match estimator::train(&ds, &e.model, &e.train) {
        Ok(r) => r,
        Err(Error::Diverged { epoch, last_good }) => {
            let p = ctx.layout.file("model_last_good.bin");
            last_good.save(&p)?;
            bail!("training diverged at epoch {epoch}; last finite model saved to {}", p.display());
        }
        Err(err) => return Err(err.into()),
    };
    model.save(&ctx.layout.model())?;
    write_json(&ctx.layout.file("train_report.json"), &report)?;
    for h in &report.test {
        note(format!("train: {} head test R² {}", h.head, f(h.r2)));
    }
    Ok(())
}

pub fn sweep(ctx: &Ctx) -> Result<()> {
    let model = ctx.model(None)?;
    let mut rows = vec![];
    for spec in &ctx.cfg.sweep.axes {
        let axis = serde_json::to_value(spec.axis)?.as_str().unwrap_or_default().to_string();
        for r in estimator::sweep(&model, &ctx.cfg.sweep.base, spec.axis, &spec.values)? {
            rows.push(vec![
                axis.clone(),
                f(r.value),
                f(r.s_ev),
                f(r.s_hp),
                f(r.s_der),
                f(r.s_oth),
                f(r.s_ev + r.s_hp + r.s_der + r.s_oth),
            ]);
        }
    }
    write_csv(
        &ctx.layout.file("sweep.csv"),
        &["axis", "value", "s_ev", "s_hp", "s_der", "s_oth", "s_tot"],
        rows,
    )
}

const FACTOR_COLS: [&str; 14] = [
    "event_id",
    "gamma_ev",
    "gamma_hp",
    "gamma_der",
    "delta_t",
    "ev_from_fleet",
    "hp_clamped",
    "hp_degenerate",
    "der_zero_missing",
    "s_ev_mitigated",
    "s_hp_mitigated",
    "s_der_mitigated",
    "s_oth",
    "s_tot_mitigated",
];

pub fn load_policies(path: &Path) -> Result<MitigationPolicies> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        ConfigError(format!("{}: at {}: {}", path.display(), pointer(e.path()), e.inner()))
            .into()
    })
}

pub fn mitigate(ctx: &Ctx, policies: &MitigationPolicies, out: Option<&Path>) -> Result<()> {
    let data = ctx.dataset()?;
    let recs = ctx.records()?;
    let hp_model = fit_piecewise(&hp_scatter(&recs, policies.thermostat.setpoint_c))?;
    let factors = event_factors(&data, &recs, &ctx.cfg.der_delay(), policies, &hp_model)?;
    let mut rows = Vec::with_capacity(factors.len());
    for (r, e) in recs.iter().zip(&factors) {
        let m = apply(&r.components(), &e.factors)?;
        rows.push(vec![
            e.event_id.to_string(),
            f(e.factors.gamma_ev),
            f(e.factors.gamma_hp),
            f(e.factors.gamma_der),
            f(e.delta_t),
            e.ev_from_fleet.to_string(),
            e.hp_clamped.to_string(),
            e.hp_degenerate.to_string(),
            e.der_zero_missing.to_string(),
            f(m.s_ev),
            f(m.s_hp),
            f(m.s_der),
            f(m.s_oth),
            f(m.s_tot),
        ]);
    }
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| ctx.layout.factors());
    write_csv(&path, &FACTOR_COLS, rows)?;
    #[derive(Serialize)]
    struct Fit<'a> {
        policies: &'a MitigationPolicies,
        hp_regimes: surge_core::mitigation::PiecewiseRegimeModel,
    }
    write_json(
        &ctx.layout.file("mitigation_fit.json"),
        &Fit {
            policies,
            hp_regimes: hp_model,
        },
    )?;
    note(format!("mitigate: factors for {} events -> {}", factors.len(), path.display()));
    Ok(())
}

/// Factors aligned with `templates`, read from the mitigation artifact.
fn read_factors(path: &Path, templates: &[Template]) -> Result<Vec<MitigationFactors>> {
    require(path, "mitigate")?;
    let t = Table::read(path, &FACTOR_COLS)?;
    let mut by_id = HashMap::new();
    for i in 0..t.rows.len() {
        let id: u64 = t.get(i, 0)?;
        by_id.insert(
            id,
            MitigationFactors {
                gamma_ev: t.get(i, 1)?,
                gamma_hp: t.get(i, 2)?,
                gamma_der: t.get(i, 3)?,
            },
        );
    }
    templates
        .iter()
        .map(|tp| {
            by_id
                .get(&tp.event_id)
                .copied()
                .with_context(|| format!("{}: no factors for event {}", path.display(), tp.event_id))
        })
        .collect()
}

pub struct ProjectArgs {
    pub trajectory: Option<String>,
    pub window: Option<WindowName>,
    pub temp_bin: Option<TempBin>,
    pub duration_h: Option<f64>,
    pub alpha: Option<f64>,
    pub draws: Option<usize>,
    pub seed: Option<u64>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mitigated: bool,
}

impl ProjectArgs {
    /// Everything from the config's scenario block.
    pub fn defaults() -> Self {
        Self {
            trajectory: None,
            window: None,
            temp_bin: None,
            duration_h: None,
            alpha: None,
            draws: None,
            seed: None,
            model: None,
            out: None,
            mitigated: false,
        }
    }
}

pub fn project_one(ctx: &Ctx, a: &ProjectArgs) -> Result<()> {
    let d = &ctx.cfg.projection.scenario;
    let alpha = a.alpha.unwrap_or(d.alpha);
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(ConfigError("--alpha: α ∈ (0,1]".into()).into());
    }
    let n_draws = a.draws.unwrap_or(d.n_draws);
    if n_draws < surge_core::projection::MIN_DRAWS {
        return Err(ConfigError(format!("--draws: must be >= {}", surge_core::projection::MIN_DRAWS)).into());
    }
    let traj_name = a.trajectory.clone().unwrap_or_else(|| d.trajectory.clone());
    let trajectory = ctx
        .cfg
        .projection
        .trajectory(&traj_name)
        .map_err(|e| ConfigError(format!("--trajectory: {e}")))?;
    let scenario = ScenarioConfig {
        trajectory,
        window: a.window.unwrap_or(d.window),
        temp_bin: a.temp_bin.unwrap_or(d.temp_bin),
        duration_h: a.duration_h.unwrap_or(d.duration_h),
        alpha,
        n_draws,
        seed: a.seed.unwrap_or(d.seed),
    };
    let model = ctx.model(a.model.as_deref())?;
    let data = ctx.dataset()?;
    let templates = templates_from_records(&ctx.records()?);
    let factors = if a.mitigated {
        Some(read_factors(&ctx.layout.factors(), &templates)?)
    } else {
        None
    };
    let res = project(
        &scenario,
        &templates,
        &data.weather,
        &model,
        &ctx.cfg.projection.settings,
        factors.as_deref(),
    )?;
    #[derive(Serialize)]
    struct Out<'a> {
        scenario: &'a ScenarioConfig,
        system_base_gw: f64,
        mitigated: bool,
        result: ProjectionResult,
    }
    let path = a.out.clone().unwrap_or_else(|| ctx.layout.file("projection.json"));
    write_json(
        &path,
        &Out {
            scenario: &scenario,
            system_base_gw: ctx.cfg.projection.settings.system_base_gw,
            mitigated: a.mitigated,
            result: res,
        },
    )?;
    note(format!(
        "project: {} {} α={} mean {} GW [{}, {}], exceedance {}",
        scenario.trajectory.name,
        scenario.window.label(),
        f(alpha),
        f(res.mean_gw),
        f(res.lo_gw),
        f(res.hi_gw),
        f(res.exceedance_prob)
    ));
    Ok(())
}

pub fn report(ctx: &Ctx) -> Result<()> {
    let model = ctx.model(None)?;
    let data = ctx.dataset()?;
    let templates = templates_from_records(&ctx.records()?);
    let factors = read_factors(&ctx.layout.factors(), &templates)?;
    let p = &ctx.cfg.projection;
    #[derive(Serialize)]
    struct Cell {
        low: f64,
        mean: f64,
        high: f64,
    }
    #[derive(Serialize)]
    struct Row {
        trajectory: String,
        window: &'static str,
        duration_h: f64,
        alpha: f64,
        mitigated: bool,
        cell: Cell,
        median_gw: f64,
        p95_gw: f64,
        exceedance_prob: f64,
        headroom_gw: f64,
        n_draws: usize,
        n_templates: usize,
    }
    let mut rows = Vec::new();
    for traj in &p.trajectories {
        for g in grid(traj, &templates, &data.weather, &model, &p.settings, &p.grid, Some(&factors))? {
            let r = g.result;
            rows.push(Row {
                trajectory: g.trajectory,
                window: g.window.label(),
                duration_h: g.duration_h,
                alpha: g.alpha,
                mitigated: g.mitigated,
                cell: Cell {
                    low: r.lo_gw,
                    mean: r.mean_gw,
                    high: r.hi_gw,
                },
                median_gw: r.median_gw,
                p95_gw: r.p95_gw,
                exceedance_prob: r.exceedance_prob,
                headroom_gw: r.headroom_gw,
                n_draws: r.n_draws,
                n_templates: r.n_templates,
            });
        }
    }
    let csv_rows = rows
        .iter()
        .map(|r| {
            vec![
                r.trajectory.clone(),
                r.window.to_string(),
                f(r.duration_h),
                f(r.alpha),
                r.mitigated.to_string(),
                f(r.cell.low),
                f(r.cell.mean),
                f(r.cell.high),
                f(r.median_gw),
                f(r.p95_gw),
                f(r.exceedance_prob),
                f(r.headroom_gw),
                r.n_draws.to_string(),
                r.n_templates.to_string(),
            ]
        })
        .collect();
    write_csv(
        &ctx.layout.file("projection_table.csv"),
        &[
            "trajectory",
            "window",
            "duration_h",
            "alpha",
            "mitigated",
            "low_gw",
            "mean_gw",
            "high_gw",
            "median_gw",
            "p95_gw",
            "exceedance_prob",
            "headroom_gw",
            "n_draws",
            "n_templates",
        ],
        csv_rows,
    )?;
    #[derive(Serialize)]
    struct Table<'a> {
        system_base_gw: f64,
        rows: &'a [Row],
    }
    write_json(
        &ctx.layout.file("projection_table.json"),
        &Table {
            system_base_gw: p.settings.system_base_gw,
            rows: &rows,
        },
    )?;
    note(format!("report: {} cells -> projection_table.csv", rows.len()));
    Ok(())
}
