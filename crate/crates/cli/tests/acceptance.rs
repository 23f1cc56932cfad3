//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs under `cargo test`; print-outs are always shown.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;
use surge_core::causal::{ate, fit, CausalSample, ForestConfig};
use surge_core::empirics::{
    bootstrap_band_compare, mann_whitney_greater, observations, percentile_threshold_analysis, band_stats, Asset,
    BootstrapConfig, Obs, PenetrationBands, SubsetFilter,
};
use surge_core::estimator::{build_dataset, grad_check, train, GradCheckConfig, ModelConfig, SurgeEstimator, TrainConfig};
use surge_core::metrics::{
    compute_surges, der_missing_power, DerDelayModel, EventRecord, GenerationProfile, SurgeWindow,
};
use surge_core::mitigation::{
    event_factors, fit_piecewise, gamma_der, gamma_ev, gamma_hp, hp_scatter, ChargerProfile, DerReconnectPolicy,
    EvRestartPolicy, MitigationFactors, MitigationPolicies, PiecewiseRegimeModel, RegimeFit,
};
use surge_core::projection::{
    select_templates, simulate, stratum_surges_kw, template_surges, templates_from_records,
    ProjectionSettings, TempBin, Template, Trajectory, WindowName,
};
use surge_core::rng::{substream, Domain};
use surge_core::synth::{gen_city, GroundTruthParams, SyntheticDataset};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// City, surge records and trained estimator shared by criteria 5–8.
struct Shared {
    data: SyntheticDataset,
    records: Vec<EventRecord>,
    model: SurgeEstimator,
}

// ---------------------------------------------------------------- 1

fn decomposition_identity() -> Outcome {
    let t0 = Instant::now();
    let params = GroundTruthParams::default();
    let data = gen_city(40, 1000, params.clone(), 11).unwrap();
    let recs = compute_surges(&data, &SurgeWindow::default(), &params.der_delay).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let worst = recs
        .iter()
        .map(|r| (r.s_tot - (r.s_ev + r.s_hp + r.s_der + r.s_oth)).abs())
        .fold(0.0, f64::max);
    outcome(
        recs.len() == 1000 && worst <= 1e-12 && secs < 5.0,
        format!("{} events, max |s_tot - sum| = {worst:.1e} (tol 1e-12), {secs:.2} s (limit 5 s)", recs.len()),
    )
}

// ---------------------------------------------------------------- 2

fn truncnorm_pdf(t: f64, m: &DerDelayModel) -> f64 {
    if t < m.tau_min {
        return 0.0;
    }
    let z = (t - m.mu) / m.sigma;
    let mass = 0.5 * erfc((m.tau_min - m.mu) / (m.sigma * std::f64::consts::SQRT_2));
    (-0.5 * z * z).exp() / (m.sigma * (2.0 * std::f64::consts::PI).sqrt()) / mass
}

fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

fn lerp_profile(kw: &[f64], step: f64, t: f64) -> f64 {
    let x = (t / step).max(0.0);
    let i = (x.floor() as usize).min(kw.len() - 1);
    if i + 1 >= kw.len() {
        return kw[kw.len() - 1];
    }
    kw[i] + (kw[i + 1] - kw[i]) * (x - i as f64)
}

fn der_quadrature() -> Outcome {
    let window = 15.0;
    let mut rng = substream(2, Domain::Misc, 0);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let model = DerDelayModel {
            mu: rng.gen_range(2.0..25.0),
            sigma: rng.gen_range(1.0..10.0),
            tau_min: rng.gen_range(0.0..12.0),
        };
        let kw: Vec<f64> = (0..rng.gen_range(2..7)).map(|_| rng.gen_range(50.0..500.0)).collect();
        let profile = GenerationProfile::new(15.0, kw.clone()).unwrap();
        let got = der_missing_power(&profile, &model, window).unwrap().raw_kw;
        let reconnected = trapezoid(
            |t| lerp_profile(&kw, 15.0, t) * truncnorm_pdf(t, &model),
            model.tau_min,
            window,
            200_000,
        );
        let want = kw[0] - reconnected;
        worst = worst.max((got - want).abs() / want.abs().max(1e-12));
    }
    let mut worst_const = 0.0_f64;
    for _ in 0..20 {
        let model = DerDelayModel {
            mu: rng.gen_range(2.0..25.0),
            sigma: rng.gen_range(1.0..10.0),
            tau_min: rng.gen_range(0.0..12.0),
        };
        let c = rng.gen_range(10.0..1000.0);
        let phi = |x: f64| 0.5 * erfc(-(x - model.mu) / (model.sigma * std::f64::consts::SQRT_2));
        let q = (phi(window) - phi(model.tau_min)) / (1.0 - phi(model.tau_min));
        let got = der_missing_power(&GenerationProfile::constant(c), &model, window).unwrap().kw;
        worst_const = worst_const.max((got - c * (1.0 - q)).abs() / c);
    }
    outcome(
        worst <= 1e-6 && worst_const <= 1e-8,
        format!(
            "50 random cases: max rel err vs trapezoid {worst:.1e} (tol 1e-6); constant C(1-q): max rel err {worst_const:.1e} (tol 1e-8)"
        ),
    )
}

// ---------------------------------------------------------------- 3

/// `Y = effect·X + g(Z) + noise` with X confounded through temperature and hour.
fn planted(n: usize, seed: u64, effect: f64) -> Vec<CausalSample> {
    let mut rng = substream(seed, Domain::Misc, 1234);
    (0..n)
        .map(|_| {
            let temp: f64 = rng.gen_range(-20.0..38.0);
            let dur: f64 = rng.gen_range(0.25..12.0);
            let nc: f64 = rng.gen_range(100.0..1500.0);
            let hour: f64 = rng.gen_range(0.0..24.0);
            let a = 2.0 * std::f64::consts::PI * hour / 24.0;
            let u: f64 = StandardNormal.sample(&mut rng);
            let x = (0.25 + 0.005 * (15.0 - temp) + 0.08 * a.sin() + 0.08 * u).clamp(0.0, 1.0);
            let g = 0.4 * (1.0 - (-dur / 2.0f64).exp()) + 0.015 * (15.0 - temp).max(0.0) + 0.1 * a.cos();
            let e: f64 = StandardNormal.sample(&mut rng);
            CausalSample {
                x,
                y: effect * x + g + 0.1 * e,
                z: vec![temp, dur, nc, hour, a.sin(), a.cos()],
            }
        })
        .collect()
}

fn causal_recovery() -> Outcome {
    let (mut in_band, mut cover, mut cover_null) = (0, 0, 0);
    let mut slowest = 0.0_f64;
    let mut worst_dev = 0.0_f64;
    for seed in 0..20u64 {
        let cfg = ForestConfig {
            seed,
            ..Default::default()
        };
        let t0 = Instant::now();
        let m = fit(&planted(5000, seed, 1.5), &cfg).unwrap();
        let a = ate(&m, 0.1).unwrap();
        slowest = slowest.max(t0.elapsed().as_secs_f64());
        let t0 = Instant::now();
        let m0 = fit(&planted(5000, seed + 100, 0.0), &cfg).unwrap();
        let a0 = ate(&m0, 0.1).unwrap();
        slowest = slowest.max(t0.elapsed().as_secs_f64());
        worst_dev = worst_dev.max((a.ate_mean - 0.15).abs());
        in_band += ((a.ate_mean - 0.15).abs() <= 0.05) as usize;
        cover += (a.ci_lo <= 0.15 && 0.15 <= a.ci_hi) as usize;
        cover_null += (a0.ci_lo <= 0.0 && 0.0 <= a0.ci_hi) as usize;
    }
    outcome(
        in_band == 20 && cover >= 18 && cover_null >= 18 && slowest < 120.0,
        format!(
            "ATE within 0.15±0.05 in {in_band}/20 (max dev {worst_dev:.3}); CI covers 0.15 in {cover}/20 (need 18); null CI covers 0 in {cover_null}/20 (need 18); slowest fit {slowest:.1} s (limit 120 s)"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn gradient_check() -> Outcome {
    let full = grad_check(&GradCheckConfig {
        n_probes: 20,
        ..Default::default()
    })
    .unwrap();
    let lin = grad_check(&GradCheckConfig {
        n_probes: 20,
        linear_only: true,
        ..Default::default()
    })
    .unwrap();
    outcome(
        full.max_rel_err < 1e-4 && lin.max_rel_err < 1e-8,
        format!(
            "20 probes: max rel err {:.1e} at {} (tol 1e-4); linear ablation {:.1e} (tol 1e-8)",
            full.max_rel_err, full.worst_tensor, lin.max_rel_err
        ),
    )
}

// ---------------------------------------------------------------- 5

fn estimator_skill() -> (Outcome, Shared) {
    let params = GroundTruthParams::default();
    let data = gen_city(200, 10_000, params.clone(), 1).unwrap();
    let records = compute_surges(&data, &SurgeWindow::default(), &params.der_delay).unwrap();
    let mc = ModelConfig {
        seq_len: 8,
        d_model: 32,
        layers: 2,
        heads: 4,
        hidden: 32,
        ffn_dim: 64,
        dropout: 0.1,
        seed: 1,
    };
    let t0 = Instant::now();
    let ds = build_dataset(&records, &data.weather, mc.seq_len).unwrap();
    let (model, rep) = train(&ds, &mc, &TrainConfig { seed: 1, ..Default::default() }).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let r2 = |h: &str| rep.test.iter().find(|s| s.head == h).map_or(f64::NAN, |s| s.r2);
    let (ev, hp, der, oth) = (r2("ev"), r2("hp"), r2("der"), r2("oth"));
    let pass = hp >= 0.80 && ev >= 0.75 && der >= 0.75 && oth >= 0.60 && secs < 900.0;
    (
        outcome(
            pass,
            format!(
                "10000 events, test R²: hp {hp:.3} (≥0.80), ev {ev:.3} (≥0.75), der {der:.3} (≥0.75), oth {oth:.3} (≥0.60); {} epochs in {secs:.0} s (limit 900 s)",
                rep.epochs_run
            ),
        ),
        Shared { data, records, model },
    )
}

// ---------------------------------------------------------------- 6

fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

fn empirics_calibration(shared: &Shared) -> Outcome {
    let mut rng = substream(6, Domain::Misc, 0);
    let bands = PenetrationBands::default_for(Asset::Ev);
    let mut obs: Vec<Obs> = (0..400).map(|_| Obs::new(0.07, rng.gen())).collect();
    obs.extend((0..400).map(|_| Obs::new(0.15, rng.gen())));
    let boot = bootstrap_band_compare(
        &obs,
        &bands,
        0,
        1,
        &SubsetFilter::all(),
        &BootstrapConfig {
            iterations: 1000,
            pair_draws: 2000,
            seed: 1,
        },
    )
    .unwrap();
    let boot_ok = (boot.mean - 0.5).abs() <= 0.02;

    let reps = 1000;
    let pvals: Vec<f64> = (0..reps)
        .map(|_| {
            let lo: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
            let hi: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
            mann_whitney_greater(&lo, &hi).unwrap().1
        })
        .collect();
    let d = ks_uniform(pvals);
    let d_crit = 1.358 / (reps as f64).sqrt();
    let ks_ok = d < d_crit;

    let mut order_ok = true;
    let mut notes = Vec::new();
    for asset in [Asset::Ev, Asset::Hp] {
        let o = observations(&shared.records, asset);
        let b = PenetrationBands::default_for(asset);
        let p95: Vec<f64> = band_stats(&o, &b).unwrap().iter().map(|s| s.p95.unwrap_or(f64::NAN)).collect();
        let p95_up = p95.windows(2).all(|w| w[1] > w[0]);
        let rows = percentile_threshold_analysis(&o, &b, &[70.0, 80.0, 90.0]).unwrap();
        let mut below_down = true;
        for q in [70.0, 80.0, 90.0] {
            let p: Vec<f64> = rows.iter().filter(|r| r.q == q).map(|r| r.prob_below.unwrap_or(f64::NAN)).collect();
            below_down &= p.windows(2).all(|w| w[1] < w[0]);
        }
        order_ok &= p95_up && below_down;
        notes.push(format!(
            "{}: p95 increasing {}, P(s<t_q) decreasing {}",
            asset.name(),
            p95_up,
            below_down
        ));
    }
    outcome(
        boot_ok && ks_ok && order_ok,
        format!(
            "same-distribution bootstrap mean {:.4} (0.5±0.02, B=1000); MWU null KS D={d:.4} < {d_crit:.4}: {ks_ok}; planted {}",
            boot.mean,
            notes.join("; ")
        ),
    )
}

// ---------------------------------------------------------------- 7 & 8

const ALPHAS: [f64; 6] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30];
const DRAWS: usize = 5000;

struct Scenario {
    templates: Vec<Template>,
    factors: Vec<MitigationFactors>,
    settings: ProjectionSettings,
}

fn scenario(shared: &Shared) -> Scenario {
    let templates = templates_from_records(&shared.records);
    let policies = MitigationPolicies::default();
    let hp_model = fit_piecewise(&hp_scatter(&shared.records, policies.thermostat.setpoint_c)).unwrap();
    let factors = event_factors(
        &shared.data,
        &shared.records,
        &GroundTruthParams::default().der_delay,
        &policies,
        &hp_model,
    )
    .unwrap()
    .into_iter()
    .map(|e| e.factors)
    .collect();
    Scenario {
        templates,
        factors,
        settings: ProjectionSettings::default(),
    }
}

struct Cell {
    trajectory: String,
    window: WindowName,
    bin: TempBin,
    duration_h: f64,
    plain: Vec<surge_core::projection::ProjectionResult>,
    mitigated: Vec<surge_core::projection::ProjectionResult>,
}

fn run_cells(shared: &Shared, sc: &Scenario) -> (Vec<Cell>, f64, bool) {
    let mut cells = Vec::new();
    let mut slowest_cell = 0.0_f64;
    let mut inf_zero = true;
    for traj in [Trajectory::baseline(), Trajectory::policy()] {
        for d in [1.0, 2.0, 3.0] {
            let surges = template_surges(&shared.model, &sc.templates, &shared.data.weather, &traj, d).unwrap();
            for w in &sc.settings.windows {
                for bin in [TempBin::Any, TempBin::Cold, TempBin::Cool, TempBin::Mild, TempBin::Hot] {
                    let Ok(sel) = select_templates(&sc.templates, w, bin) else { continue };
                    let base: Vec<f64> = sel.iter().map(|&i| sc.templates[i].base_kw).collect();
                    let plain_kw = stratum_surges_kw(&sc.templates, &surges, &sel, None).unwrap();
                    let mit_kw = stratum_surges_kw(&sc.templates, &surges, &sel, Some(&sc.factors)).unwrap();
                    let s = sc.settings.system_base_gw;
                    let t0 = Instant::now();
                    let plain = simulate(&base, &plain_kw, &ALPHAS, s, w.headroom_gw, DRAWS, 7).unwrap();
                    slowest_cell = slowest_cell.max(t0.elapsed().as_secs_f64() / ALPHAS.len() as f64);
                    let mitigated = simulate(&base, &mit_kw, &ALPHAS, s, w.headroom_gw, DRAWS, 7).unwrap();
                    if bin == TempBin::Any {
                        let inf = simulate(&base, &plain_kw, &ALPHAS, s, f64::INFINITY, DRAWS, 7).unwrap();
                        inf_zero &= inf.iter().all(|r| r.exceedance_prob == 0.0);
                    }
                    cells.push(Cell {
                        trajectory: traj.name.clone(),
                        window: w.name,
                        bin,
                        duration_h: d,
                        plain,
                        mitigated,
                    });
                }
            }
        }
    }
    (cells, slowest_cell, inf_zero)
}

/// Evening policy cell at α = 0.30, 2 h, all temperatures.
fn evening(shared: &Shared, sc: &Scenario, factors: Option<&[MitigationFactors]>) -> Vec<surge_core::projection::ProjectionResult> {
    let surges = template_surges(&shared.model, &sc.templates, &shared.data.weather, &Trajectory::policy(), 2.0).unwrap();
    let w = sc.settings.window(WindowName::Evening).unwrap();
    let sel = select_templates(&sc.templates, w, TempBin::Any).unwrap();
    let base: Vec<f64> = sel.iter().map(|&i| sc.templates[i].base_kw).collect();
    let kw = stratum_surges_kw(&sc.templates, &surges, &sel, factors).unwrap();
    simulate(&base, &kw, &ALPHAS, sc.settings.system_base_gw, w.headroom_gw, DRAWS, 7).unwrap()
}

/// Scale the system baseline so the unmitigated evening policy cell at
/// α = 0.30 has its 95th percentile at the headroom, then nudge upward
/// until its exceedance is positive.
fn tune_system_base(shared: &Shared, sc: &mut Scenario) -> f64 {
    let head = sc.settings.window(WindowName::Evening).unwrap().headroom_gw;
    let r = evening(shared, sc, None);
    sc.settings.system_base_gw *= head / r[5].p95_gw;
    for _ in 0..50 {
        if evening(shared, sc, None)[5].exceedance_prob > 0.0 {
            break;
        }
        sc.settings.system_base_gw *= 1.002;
    }
    sc.settings.system_base_gw
}

fn projection_monotonicity(cells: &[Cell], slowest: f64, inf_zero: bool, s: f64) -> Outcome {
    let mut bad = Vec::new();
    for c in cells {
        for (tag, rs) in [("plain", &c.plain), ("mitigated", &c.mitigated)] {
            let mono = rs.windows(2).all(|w| w[1].exceedance_prob >= w[0].exceedance_prob && w[1].mean_gw > w[0].mean_gw);
            let bounded = rs.iter().all(|r| r.lo_gw <= r.mean_gw && r.mean_gw <= r.hi_gw);
            if !(mono && bounded) {
                bad.push(format!("{} {} {} {}h {tag}", c.trajectory, c.window.label(), c.bin.label(), c.duration_h));
            }
        }
    }
    outcome(
        bad.is_empty() && inf_zero && slowest < 60.0,
        format!(
            "{} cells × 6 α (system base {s:.3} GW): non-decreasing exceedance and increasing mean in all: {}{}; infinite headroom → 0: {inf_zero}; slowest cell {slowest:.2} s for {DRAWS} draws (limit 60 s)",
            cells.len() * 2,
            bad.is_empty(),
            if bad.is_empty() { String::new() } else { format!(" (violations: {})", bad.join(", ")) }
        ),
    )
}

fn mitigation_correctness(shared: &Shared, sc: &Scenario, cells: &[Cell]) -> Outcome {
    let fleet: Vec<ChargerProfile> = (0..100).map(|_| ChargerProfile::session(7.2, 120.0).unwrap()).collect();
    let g_ev = gamma_ev(
        &fleet,
        &EvRestartPolicy {
            trials: 10_000,
            ..Default::default()
        },
    )
    .unwrap()
    .gamma;
    let fit = |beta, alpha| RegimeFit {
        beta,
        alpha,
        n: 10,
        underpowered: false,
    };
    let m = PiecewiseRegimeModel {
        cold: fit(-0.05, 0.2),
        mild: fit(0.0, 0.1),
        hot: fit(0.03, 0.0),
    };
    let g_hp = gamma_hp(-15.0, -2.0, &m).gamma;
    let hand = 1.0 - 0.85 / 0.95;
    let base = DerDelayModel::default();
    let g_der = gamma_der(&GenerationProfile::constant(300.0), &base, &DerReconnectPolicy::from_model(&base))
        .unwrap()
        .gamma;

    let mut worse = Vec::new();
    for c in cells {
        for (p, q) in c.plain.iter().zip(&c.mitigated) {
            if q.mean_gw > p.mean_gw {
                worse.push(format!("{} {} {} {}h", c.trajectory, c.window.label(), c.bin.label(), c.duration_h));
            }
        }
    }
    let plain = evening(shared, sc, None);
    let mit = evening(shared, sc, Some(&sc.factors));
    let exc = |r: &[surge_core::projection::ProjectionResult], a: usize| r[a].exceedance_prob;
    let tuned = exc(&plain, 5) > 0.0;
    let reduced = exc(&mit, 5) < exc(&plain, 5);
    let low_alpha_zero = (0..4).all(|a| exc(&plain, a) == 0.0 && exc(&mit, a) == 0.0);
    let pass = (g_ev - 0.5).abs() <= 0.001
        && (g_hp - hand).abs() <= 1e-6
        && (g_der - 1.0).abs() <= 1e-9
        && worse.is_empty()
        && tuned
        && reduced
        && low_alpha_zero;
    outcome(
        pass,
        format!(
            "γ_ev {g_ev:.4} (0.5±0.001); γ_hp {g_hp:.7} (1-0.85/0.95 ≈ 0.1053, ±1e-6); identity γ_der {g_der:.12} (1±1e-9); mitigated mean ≤ plain in all cells: {}; evening policy α=0.30 exceedance {:.4} → {:.4} mitigated; α ≤ 0.20 zero exceedance: {low_alpha_zero}",
            worse.is_empty(),
            exc(&plain, 5),
            exc(&mit, 5)
        ),
    )
}

// ---------------------------------------------------------------- 9

const PIPELINE: &str = r#"{
  "seed": 5,
  "synth": {"n_feeders": 25, "n_events": 500},
  "empirics": {"bootstrap": {"iterations": 200, "pair_draws": 300}},
  "causal": {"forest": {"n_trees": 60, "nuisance_trees": 10}},
  "estimator": {
    "model": {"seq_len": 6, "d_model": 8, "layers": 1, "heads": 2, "hidden": 8, "ffn_dim": 16},
    "train": {"epochs": 4}
  },
  "projection": {"grid": {"n_draws": 300}, "scenario": {"n_draws": 300}},
  "mitigation": {"ev": {"trials": 100}}
}"#;

fn tree(dir: &Path, root: &Path, out: &mut Vec<String>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            tree(&p, root, out);
        } else {
            out.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
        }
    }
    out.sort();
}

fn strip_timestamp(b: Vec<u8>) -> Vec<u8> {
    String::from_utf8(b)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("created_unix"))
        .collect::<Vec<_>>()
        .join("\n")
        .into_bytes()
}

fn end_to_end_determinism() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("run.json"), PIPELINE).unwrap();
    for run in ["first", "second"] {
        let o = Command::new(env!("CARGO_BIN_EXE_surge"))
            .current_dir(d.path())
            .env_remove("SURGE_OUT_DIR")
            .args(["--config", "run.json", "--out-dir", run, "pipeline"])
            .output()
            .unwrap();
        if !o.status.success() {
            return outcome(false, format!("pipeline failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
    }
    let (a, b) = (d.path().join("first"), d.path().join("second"));
    let (mut fa, mut fb) = (vec![], vec![]);
    tree(&a, &a, &mut fa);
    tree(&b, &b, &mut fb);
    let mut differ = Vec::new();
    if fa != fb {
        differ.push("file lists".to_string());
    }
    for f in &fa {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap_or_default());
        let same = if f == "manifest.json" {
            strip_timestamp(x) == strip_timestamp(y)
        } else {
            x == y
        };
        if !same {
            differ.push(f.clone());
        }
    }
    outcome(
        differ.is_empty(),
        format!(
            "two pipeline runs, {} artifacts compared byte for byte (manifest timestamp excluded): {}",
            fa.len(),
            if differ.is_empty() { "identical".into() } else { format!("differ in {}", differ.join(", ")) }
        ),
    )
}

fn main() {
    // `cargo test -- <filter>` passes arguments; this target runs everything.
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome, t: Instant| {
        println!(
            "[{}] {n}. {name}: {} ({:.0} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        results.push((n, name, o));
    };
    let t = Instant::now();
    report(1, "decomposition identity", decomposition_identity(), t);
    let t = Instant::now();
    report(2, "DER quadrature", der_quadrature(), t);
    let t = Instant::now();
    report(3, "causal recovery", causal_recovery(), t);
    let t = Instant::now();
    report(4, "transformer gradient check", gradient_check(), t);
    let t = Instant::now();
    let (o5, shared) = estimator_skill();
    report(5, "estimator skill", o5, t);
    let t = Instant::now();
    report(6, "empirics calibration", empirics_calibration(&shared), t);
    let t = Instant::now();
    let mut sc = scenario(&shared);
    let s = tune_system_base(&shared, &mut sc);
    let (cells, slowest, inf_zero) = run_cells(&shared, &sc);
    report(7, "projection monotonicity", projection_monotonicity(&cells, slowest, inf_zero, s), t);
    let t = Instant::now();
    report(8, "mitigation correctness", mitigation_correctness(&shared, &sc, &cells), t);
    let t = Instant::now();
    report(9, "end-to-end determinism", end_to_end_determinism(), t);

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
