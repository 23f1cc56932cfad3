//! Small statistics helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Nearest-rank percentile of an ascending slice, `q` in (0, 100].
pub fn nearest_rank_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let n = sorted.len();
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Nearest-rank percentile; sorts a copy.
pub fn nearest_rank(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    nearest_rank_sorted(&v, q)
}

/// Linear-interpolated quantile (type 7), `p` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Wilson score interval for `k` successes out of `n` at 95%.
pub fn wilson95(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let denom = 1.0 + z * z / n_f;
    let centre = (p + z * z / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(x)
}

pub fn std_normal_sf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sf(x)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Regression skill metrics of predictions against targets.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Skill {
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Target variance was zero, so `r2` is reported as 0.
    pub degenerate: bool,
}

pub fn skill(pred: &[f64], target: &[f64]) -> Skill {
    assert_eq!(pred.len(), target.len());
    let n = target.len() as f64;
    let m = mean(target);
    let mut sse = 0.0;
    let mut sst = 0.0;
    let mut sae = 0.0;
    for (p, t) in pred.iter().zip(target) {
        sse += (p - t) * (p - t);
        sst += (t - m) * (t - m);
        sae += (p - t).abs();
    }
    let degenerate = sst <= f64::EPSILON * n;
    Skill {
        r2: if degenerate { 0.0 } else { 1.0 - sse / sst },
        rmse: (sse / n).sqrt(),
        mae: sae / n,
        degenerate,
    }
}
