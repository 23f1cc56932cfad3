//! Planted EV surge against an independently derived expectation.

use surge_core::metrics::{compute_surges, SurgeWindow};
use surge_core::synth::{gen_city, GroundTruthParams};

/// Gaussian bump on the 24 h clock, nearest-image distance.
fn clock_bump(hour: f64, centre: f64, width: f64) -> f64 {
    let d = [-24.0, 0.0, 24.0]
        .iter()
        .map(|k| (hour - centre + k).abs())
        .fold(f64::INFINITY, f64::min);
    (-(d * d) / (2.0 * width * width)).exp()
}

fn deferral_probability(p: &GroundTruthParams, hour: f64, duration_h: f64) -> f64 {
    let (a, b) = p.ev_evening_peak_hours;
    let base = p.ev_night_propensity
        + (p.ev_peak_propensity - p.ev_night_propensity) * clock_bump(hour, (a + b) / 2.0, (b - a) / 2.0)
        + (p.ev_midday_propensity - p.ev_night_propensity).max(0.0) * clock_bump(hour, 12.5, 1.5);
    let gain = 1.0 + p.ev_duration_gain * duration_h.min(6.0);
    (base * gain).min(1.0)
}

#[test]
fn mean_planted_ev_surge_matches_expectation() {
    let params = GroundTruthParams::default();
    let data = gen_city(50, 2000, params.clone(), 1).unwrap();
    let records = compute_surges(&data, &SurgeWindow::default(), &params.der_delay).unwrap();

    let mut expected = 0.0;
    let mut planted = 0.0;
    for ((event, truth), rec) in data.events.iter().zip(&data.ground_truth).zip(&records) {
        let feeder = data.feeder(event.feeder_id).unwrap();
        let share = event.n_customers_affected as f64 / feeder.n_smart_meters as f64;
        let chargers = (share * feeder.n_ev_submeters as f64).round();
        let p = deferral_probability(&params, event.restoration_hour(), event.duration_h);
        expected += chargers * p * params.ev_charger_kw / rec.base_kw;
        planted += truth.s_ev;
    }
    let n = data.events.len() as f64;
    let (expected, planted) = (expected / n, planted / n);
    assert!(expected > 0.0);
    let rel = (planted / expected - 1.0).abs();
    assert!(rel < 0.10, "planted {planted} vs expected {expected} ({rel})");
}

#[test]
fn diurnal_curve_peaks_in_the_evening() {
    let p = GroundTruthParams::default();
    // Average propensity over the day by midpoint integration on a fine grid.
    let n = 24 * 60;
    let day_mean: f64 = (0..n).map(|i| deferral_probability(&p, (i as f64 + 0.5) / 60.0, 0.0)).sum::<f64>() / n as f64;
    let evening = deferral_probability(&p, 19.5, 0.0);
    assert!(evening > 2.0 * day_mean);
    for h in [19.5, 3.0, 12.5] {
        let lib = surge_core::synth::ev_propensity(&p, h);
        assert!((lib - deferral_probability(&p, h, 0.0)).abs() < 1e-12);
    }
}
