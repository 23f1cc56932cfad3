//! Delay densities and the missing-DER-power integral.
//!
//! The same engine serves the surge metric and the accelerated-reconnection
//! mitigation factor, so an identical policy maps to an identical number.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{std_normal_cdf, std_normal_pdf, std_normal_sf};

/// Subinterval cap for adaptive Simpson (2^16 leaves).
pub const MAX_DEPTH: u32 = 16;

/// Relative (to integrand scale) absolute tolerance of the quadrature.
pub const REL_TOL: f64 = 1e-8;

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Reconnection delay density over minutes after restoration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayDensity {
    /// Normal(mu, sigma) truncated to `[lo, hi]`; `hi` may be infinite.
    TruncatedNormal { mu: f64, sigma: f64, lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl DelayDensity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DelayDensity::TruncatedNormal { mu, sigma, lo, hi } => {
                if !(sigma > 0.0) || !mu.is_finite() {
                    return Err(Error::invalid("truncated normal needs finite mu and sigma > 0"));
                }
                if !(lo >= 0.0) || !(hi > lo) {
                    return Err(Error::invalid(format!("bad support [{lo}, {hi}]")));
                }
                if self.normaliser() <= 0.0 {
                    return Err(Error::invalid("truncated normal support carries no mass"));
                }
            }
            DelayDensity::Uniform { lo, hi } => {
                if !(lo >= 0.0) || !(hi > lo) || !hi.is_finite() {
                    return Err(Error::invalid(format!("bad uniform support [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            DelayDensity::TruncatedNormal { lo, hi, .. } | DelayDensity::Uniform { lo, hi } => {
                (lo, hi)
            }
        }
    }

    fn normaliser(&self) -> f64 {
        match *self {
            DelayDensity::TruncatedNormal { mu, sigma, lo, hi } => {
                std_cdf_between((lo - mu) / sigma, (hi - mu) / sigma)
            }
            DelayDensity::Uniform { lo, hi } => hi - lo,
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        let (lo, hi) = self.support();
        if t < lo || t > hi {
            return 0.0;
        }
        match *self {
            DelayDensity::TruncatedNormal { mu, sigma, .. } => {
                std_normal_pdf((t - mu) / sigma) / (sigma * self.normaliser())
            }
            DelayDensity::Uniform { lo, hi } => 1.0 / (hi - lo),
        }
    }

    /// Probability mass on `[a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = self.support();
        let a = a.max(lo);
        let b = b.min(hi);
        if b <= a {
            return 0.0;
        }
        match *self {
            DelayDensity::TruncatedNormal { mu, sigma, .. } => {
                std_cdf_between((a - mu) / sigma, (b - mu) / sigma) / self.normaliser()
            }
            DelayDensity::Uniform { lo, hi } => (b - a) / (hi - lo),
        }
    }

    /// Largest density value, used to scale the quadrature tolerance.
    pub fn peak(&self) -> f64 {
        match *self {
            DelayDensity::TruncatedNormal { mu, lo, hi, .. } => self.pdf(mu.clamp(lo, hi)),
            DelayDensity::Uniform { lo, hi } => 1.0 / (hi - lo),
        }
    }
}

/// Phi(b) - Phi(a), computed on the side that keeps precision.
fn std_cdf_between(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

/// Truncated-normal inverter reconnection delay on `[tau_min, inf)`, minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerDelayModel {
    pub mu: f64,
    pub sigma: f64,
    pub tau_min: f64,
}

impl Default for DerDelayModel {
    fn default() -> Self {
        Self {
            mu: 15.0,
            sigma: 5.0,
            tau_min: 5.0,
        }
    }
}

impl DerDelayModel {
    pub fn density(&self) -> DelayDensity {
        DelayDensity::TruncatedNormal {
            mu: self.mu,
            sigma: self.sigma,
            lo: self.tau_min,
            hi: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("DER delay sigma must be > 0"));
        }
        if !(self.tau_min >= 0.0) {
            return Err(Error::invalid("DER delay tau_min must be >= 0"));
        }
        self.density().validate()
    }
}

/// Potential DER generation `C_e` as a piecewise-linear function of minutes
/// after restoration, from samples spaced `step_min` apart starting at 0.
/// Held constant past the last sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationProfile {
    pub step_min: f64,
    pub kw: Vec<f64>,
}

impl GenerationProfile {
    pub fn new(step_min: f64, kw: Vec<f64>) -> Result<Self> {
        if kw.is_empty() || !(step_min > 0.0) {
            return Err(Error::invalid("generation profile needs samples and a positive step"));
        }
        if kw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("generation profile has non-finite samples"));
        }
        Ok(Self { step_min, kw })
    }

    pub fn constant(kw: f64) -> Self {
        Self {
            step_min: 15.0,
            kw: vec![kw, kw],
        }
    }

    /// Minutes covered by the samples.
    pub fn span_min(&self) -> f64 {
        (self.kw.len() - 1) as f64 * self.step_min
    }

    pub fn at(&self, t_min: f64) -> f64 {
        if t_min <= 0.0 {
            return self.kw[0];
        }
        let x = t_min / self.step_min;
        let i = x.floor() as usize;
        if i + 1 >= self.kw.len() {
            return *self.kw.last().expect("non-empty");
        }
        let w = x - i as f64;
        self.kw[i] * (1.0 - w) + self.kw[i + 1] * w
    }

    fn scale(&self) -> f64 {
        self.kw.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn knots_between(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        (1..self.kw.len())
            .map(move |i| i as f64 * self.step_min)
            .filter(move |&k| k > a && k < b)
    }
}

/// Missing DER power over a window: the generation at restoration minus the
/// delay-weighted generation of inverters reconnecting inside the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerMissing {
    /// Missing power, floored at zero.
    pub kw: f64,
    /// `C(0) - integral`, before flooring. Negative only when generation
    /// ramps up from (near) zero inside the window.
    pub raw_kw: f64,
    /// The density puts no mass inside the window (`tau_min >= window`).
    pub no_mass_in_window: bool,
}

/// `C(0) - integral over [lo, window] of C(t) p(t) dt`.
pub fn missing_power(
    profile: &GenerationProfile,
    density: &DelayDensity,
    window_min: f64,
) -> Result<DerMissing> {
    density.validate()?;
    if !(window_min > 0.0) {
        return Err(Error::invalid("surge window length must be > 0"));
    }
    let c0 = profile.at(0.0);
    let (lo, hi) = density.support();
    if lo >= window_min {
        return Ok(DerMissing {
            kw: c0.max(0.0),
            raw_kw: c0,
            no_mass_in_window: true,
        });
    }
    let upper = window_min.min(hi);
    let scale = profile.scale() * density.peak();
    if scale == 0.0 {
        return Ok(DerMissing {
            kw: c0.max(0.0),
            raw_kw: c0,
            no_mass_in_window: false,
        });
    }
    let tol = REL_TOL * scale;
    let integrand = |t: f64| profile.at(t) * density.pdf(t);
    // Split at profile knots so each piece is smooth.
    let mut edges = vec![lo];
    edges.extend(profile.knots_between(lo, upper));
    edges.push(upper);
    let pieces = (edges.len() - 1) as f64;
    let reconnected: f64 = edges
        .windows(2)
        .map(|w| adaptive_simpson(&integrand, w[0], w[1], tol / pieces))
        .sum();
    let raw_kw = c0 - reconnected;
    Ok(DerMissing {
        kw: raw_kw.max(0.0),
        raw_kw,
        no_mass_in_window: false,
    })
}

/// `missing_power` for the truncated-normal reconnection model.
pub fn der_missing_power(
    profile: &GenerationProfile,
    model: &DerDelayModel,
    window_min: f64,
) -> Result<DerMissing> {
    model.validate()?;
    missing_power(profile, &model.density(), window_min)
}
