//! Tail statistics of surge ratios across penetration bands: band summaries,
//! exceedance curves, bootstrap cross-band comparisons, adjacent-band rank
//! tests and percentile-threshold checks.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EventRecord;
use crate::rng::{substream, Domain};
use crate::stats::{mean, nearest_rank, nearest_rank_sorted, std_normal_sf, wilson95};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Asset {
    Ev,
    Hp,
    Der,
}

impl Asset {
    pub const ALL: [Asset; 3] = [Asset::Ev, Asset::Hp, Asset::Der];

    pub fn name(self) -> &'static str {
        match self {
            Asset::Ev => "ev",
            Asset::Hp => "hp",
            Asset::Der => "der",
        }
    }

    pub fn rate(self, r: &EventRecord) -> f64 {
        match self {
            Asset::Ev => r.r_ev,
            Asset::Hp => r.r_hp,
            Asset::Der => r.r_der,
        }
    }

    /// The asset's own surge component.
    pub fn surge(self, r: &EventRecord) -> f64 {
        match self {
            Asset::Ev => r.s_ev,
            Asset::Hp => r.s_hp,
            Asset::Der => r.s_der,
        }
    }
}

impl std::str::FromStr for Asset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ev" => Ok(Asset::Ev),
            "hp" => Ok(Asset::Hp),
            "der" => Ok(Asset::Der),
            _ => Err(Error::invalid(format!("unknown asset {s:?} (ev, hp, der)"))),
        }
    }
}

/// One event seen through one asset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obs {
    pub rate: f64,
    pub surge: f64,
    pub hour: f64,
    pub duration_h: f64,
    pub temp_c: f64,
    pub ghi: f64,
}

impl Obs {
    pub fn new(rate: f64, surge: f64) -> Self {
        Self {
            rate,
            surge,
            hour: 0.0,
            duration_h: 0.0,
            temp_c: 0.0,
            ghi: 0.0,
        }
    }
}

pub fn observations(records: &[EventRecord], asset: Asset) -> Vec<Obs> {
    records
        .iter()
        .map(|r| Obs {
            rate: asset.rate(r),
            surge: asset.surge(r),
            hour: r.hour,
            duration_h: r.duration_h,
            temp_c: r.temp_c,
            ghi: r.ghi,
        })
        .collect()
}

/// Four (or more) contiguous penetration bands `[e_i, e_{i+1})`, the last
/// one closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenetrationBands {
    pub edges: Vec<f64>,
}

impl PenetrationBands {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        let b = Self { edges };
        b.validate()?;
        Ok(b)
    }

    pub fn default_for(asset: Asset) -> Self {
        let edges = match asset {
            Asset::Ev => vec![0.05, 0.10, 0.20, 0.35, 0.50],
            Asset::Hp => vec![0.05, 0.25, 0.45, 0.65, 0.85],
            Asset::Der => vec![0.05, 0.10, 0.15, 0.25, 0.35],
        };
        Self { edges }
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() < 2 {
            return Err(Error::invalid("penetration bands need at least two edges"));
        }
        if self.edges.windows(2).any(|w| !(w[1] > w[0])) || self.edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("band edges must be finite and strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self, band: usize) -> (f64, f64) {
        (self.edges[band], self.edges[band + 1])
    }

    pub fn band_of(&self, rate: f64) -> Option<usize> {
        let last = self.len() - 1;
        (0..self.len()).find(|&b| {
            let (lo, hi) = self.bounds(b);
            rate >= lo && (rate < hi || (b == last && rate <= hi))
        })
    }

    /// "B2 (10–20%)".
    pub fn label(&self, band: usize) -> String {
        let (lo, hi) = self.bounds(band);
        format!("B{} ({}–{}%)", band + 1, pct(lo), pct(hi))
    }

    fn members<'a>(&self, obs: &'a [Obs], band: usize) -> Vec<&'a Obs> {
        obs.iter().filter(|o| self.band_of(o.rate) == Some(band)).collect()
    }
}

fn pct(x: f64) -> String {
    let p = (x * 1000.0).round() / 10.0;
    if p.fract() == 0.0 {
        format!("{}", p as i64)
    } else {
        format!("{p}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandStats {
    pub band: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub p95: Option<f64>,
    pub empty: bool,
}

pub fn band_stats(obs: &[Obs], bands: &PenetrationBands) -> Result<Vec<BandStats>> {
    bands.validate()?;
    Ok((0..bands.len())
        .map(|b| {
            let mut v: Vec<f64> = bands.members(obs, b).iter().map(|o| o.surge).collect();
            v.sort_by(f64::total_cmp);
            let (lo, hi) = bands.bounds(b);
            let empty = v.is_empty();
            BandStats {
                band: b,
                lo,
                hi,
                count: v.len(),
                mean: (!empty).then(|| mean(&v)),
                median: (!empty).then(|| nearest_rank_sorted(&v, 50.0)),
                p95: (!empty).then(|| nearest_rank_sorted(&v, 95.0)),
                empty,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceedanceBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub exceed: usize,
    /// `None` for an empty bin.
    pub prob: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

/// Binned `P(s > threshold | r)` with Wilson 95% intervals. `grid` holds the
/// bin edges (same membership rule as bands).
pub fn exceedance_curve(obs: &[Obs], threshold: f64, grid: &[f64]) -> Result<Vec<ExceedanceBin>> {
    if !threshold.is_finite() {
        return Err(Error::invalid("exceedance threshold must be finite"));
    }
    let bins = PenetrationBands::new(grid.to_vec())?;
    let mut counts = vec![(0usize, 0usize); bins.len()];
    for o in obs {
        if let Some(b) = bins.band_of(o.rate) {
            counts[b].0 += 1;
            if o.surge > threshold {
                counts[b].1 += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, (n, k))| {
            let (lo, hi) = bins.bounds(b);
            let ci = (n > 0).then(|| wilson95(k, n));
            ExceedanceBin {
                lo,
                hi,
                n,
                exceed: k,
                prob: (n > 0).then(|| k as f64 / n as f64),
                ci_lo: ci.map(|c| c.0),
                ci_hi: ci.map(|c| c.1),
            }
        })
        .collect())
}

/// Evenly spaced grid of `n_bins` bins over the span of the bands.
pub fn default_grid(bands: &PenetrationBands, n_bins: usize) -> Vec<f64> {
    let lo = bands.edges[0];
    let hi = *bands.edges.last().expect("validated bands");
    (0..=n_bins)
        .map(|i| lo + (hi - lo) * i as f64 / n_bins as f64)
        .collect()
}

/// Default exceedance threshold: pooled 80th percentile of the in-band surges.
pub fn default_threshold(obs: &[Obs], bands: &PenetrationBands) -> Option<f64> {
    let v: Vec<f64> = obs
        .iter()
        .filter(|o| bands.band_of(o.rate).is_some())
        .map(|o| o.surge)
        .collect();
    (!v.is_empty()).then(|| nearest_rank(&v, 80.0))
}

/// Event subset used to compare bands under comparable conditions.
/// Hour windows may wrap midnight (`hour_from > hour_to`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsetFilter {
    pub name: String,
    /// Restoration hour in `[hour_from, hour_to]` (inclusive, may wrap).
    pub hours: Option<(f64, f64)>,
    pub min_duration_h: Option<f64>,
    pub max_temp_c: Option<f64>,
    pub min_temp_c: Option<f64>,
    pub min_ghi: Option<f64>,
    /// When set, cross-band pairs are drawn within the same GHI bin.
    pub ghi_bins: Option<Vec<(f64, f64)>>,
}

pub fn fahrenheit_to_celsius(f: f64) -> f64 {
    (f - 32.0) * 5.0 / 9.0
}

impl SubsetFilter {
    pub fn all() -> Self {
        Self {
            name: "all".into(),
            ..Default::default()
        }
    }

    /// Named comparable-conditions presets.
    pub fn preset(name: &str) -> Result<Self> {
        let long = Some(4.0);
        let f = match name {
            "all" => Self::all(),
            "night_long" => Self {
                hours: Some((18.0, 6.0)),
                min_duration_h: long,
                ..Default::default()
            },
            "day_long" => Self {
                hours: Some((8.0, 16.0)),
                min_duration_h: long,
                ..Default::default()
            },
            "cold_long" => Self {
                max_temp_c: Some(fahrenheit_to_celsius(50.0)),
                min_duration_h: long,
                ..Default::default()
            },
            "hot_long" => Self {
                min_temp_c: Some(fahrenheit_to_celsius(80.0)),
                min_duration_h: long,
                ..Default::default()
            },
            "daytime" => Self {
                min_ghi: Some(200.0),
                ..Default::default()
            },
            "matched_irradiance" => Self {
                min_ghi: Some(200.0),
                ghi_bins: Some(vec![(200.0, 400.0), (400.0, 700.0), (700.0, 1000.0), (1000.0, 1400.0)]),
                ..Default::default()
            },
            _ => return Err(Error::invalid(format!("unknown subset preset {name:?}"))),
        };
        Ok(Self {
            name: name.to_string(),
            ..f
        })
    }

    /// Presets shown for each asset, unconditional first.
    pub fn presets_for(asset: Asset) -> [&'static str; 3] {
        match asset {
            Asset::Ev => ["all", "night_long", "day_long"],
            Asset::Hp => ["all", "cold_long", "hot_long"],
            Asset::Der => ["all", "daytime", "matched_irradiance"],
        }
    }

    pub fn accepts(&self, o: &Obs) -> bool {
        if let Some((a, b)) = self.hours {
            let inside = if a <= b {
                o.hour >= a && o.hour <= b
            } else {
                o.hour >= a || o.hour <= b
            };
            if !inside {
                return false;
            }
        }
        self.min_duration_h.map_or(true, |d| o.duration_h >= d)
            && self.max_temp_c.map_or(true, |t| o.temp_c <= t)
            && self.min_temp_c.map_or(true, |t| o.temp_c >= t)
            && self.min_ghi.map_or(true, |g| o.ghi >= g)
    }

    /// GHI bin index; the last bin is closed.
    fn ghi_bin(&self, ghi: f64) -> Option<usize> {
        let bins = self.ghi_bins.as_ref()?;
        bins.iter()
            .position(|&(lo, hi)| ghi >= lo && ghi < hi)
            .or_else(|| bins.last().filter(|b| ghi == b.1).map(|_| bins.len() - 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub pair_draws: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            pair_draws: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub lo_band: usize,
    pub hi_band: usize,
    pub filter: String,
    /// Per-iteration `P(s_hi > s_lo)`, ties counted as 1/2.
    pub estimates: Vec<f64>,
    pub mean: f64,
}

/// Bootstrap estimate of `P(s_hi > s_lo)` between two bands under a filter.
///
/// Each iteration resamples both bands with replacement and draws
/// `pair_draws` cross-band pairs. Draws are made in band order of the lower
/// edge, so swapping the labels maps every estimate `m` to exactly `1 - m`.
pub fn bootstrap_band_compare(
    obs: &[Obs],
    bands: &PenetrationBands,
    lo_band: usize,
    hi_band: usize,
    filter: &SubsetFilter,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    bands.validate()?;
    if lo_band >= bands.len() || hi_band >= bands.len() || lo_band == hi_band {
        return Err(Error::invalid("bootstrap needs two distinct existing bands"));
    }
    if cfg.iterations < 100 {
        return Err(Error::invalid("bootstrap needs at least 100 iterations"));
    }
    if cfg.pair_draws == 0 {
        return Err(Error::invalid("pair_draws must be >= 1"));
    }
    let pick = |b: usize| -> Result<Vec<Obs>> {
        let v: Vec<Obs> = bands
            .members(obs, b)
            .into_iter()
            .filter(|o| filter.accepts(o))
            .filter(|o| filter.ghi_bins.is_none() || filter.ghi_bin(o.ghi).is_some())
            .copied()
            .collect();
        if v.is_empty() {
            return Err(Error::EmptyStratum(format!(
                "band {} has no events under filter {:?}",
                bands.label(b),
                filter.name
            )));
        }
        Ok(v)
    };
    let lo = pick(lo_band)?;
    let hi = pick(hi_band)?;
    // Canonical order: first = band with the smaller lower edge.
    let swapped = bands.edges[hi_band] < bands.edges[lo_band];
    let (first, second) = if swapped { (&hi, &lo) } else { (&lo, &hi) };

    let estimates: Vec<f64> = (0..cfg.iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = substream(cfg.seed, Domain::Bootstrap, it as u64);
            let a: Vec<Obs> = (0..first.len()).map(|_| first[rng.gen_range(0..first.len())]).collect();
            let b: Vec<Obs> = (0..second.len()).map(|_| second[rng.gen_range(0..second.len())]).collect();
            let wins = match &filter.ghi_bins {
                None => {
                    let mut w = 0.0;
                    for _ in 0..cfg.pair_draws {
                        let x = a[rng.gen_range(0..a.len())].surge;
                        let y = b[rng.gen_range(0..b.len())].surge;
                        w += pair_score(y, x);
                    }
                    Some(w)
                }
                Some(bins) => matched_wins(filter, bins.len(), &a, &b, cfg.pair_draws, &mut rng),
            };
            // Score is "second beats first"; flip for the caller's labels.
            let m = wins.map_or(0.5, |w| w / cfg.pair_draws as f64);
            if swapped {
                1.0 - m
            } else {
                m
            }
        })
        .collect();
    let m = mean(&estimates);
    Ok(BootstrapResult {
        lo_band,
        hi_band,
        filter: filter.name.clone(),
        estimates,
        mean: m,
    })
}

fn pair_score(hi: f64, lo: f64) -> f64 {
    if hi > lo {
        1.0
    } else if hi == lo {
        0.5
    } else {
        0.0
    }
}

/// Pairs drawn within a common GHI bin, bins weighted by their pair count.
/// `None` when the resampled bands share no bin.
fn matched_wins(
    filter: &SubsetFilter,
    n_bins: usize,
    a: &[Obs],
    b: &[Obs],
    draws: usize,
    rng: &mut crate::rng::Rng,
) -> Option<f64> {
    let mut ga: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    let mut gb: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for o in a {
        ga[filter.ghi_bin(o.ghi)?].push(o.surge);
    }
    for o in b {
        gb[filter.ghi_bin(o.ghi)?].push(o.surge);
    }
    let weights: Vec<f64> = (0..n_bins).map(|k| (ga[k].len() * gb[k].len()) as f64).collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return None;
    }
    let mut w = 0.0;
    for _ in 0..draws {
        let mut u = rng.gen::<f64>() * total;
        let mut k = n_bins - 1;
        for (i, wt) in weights.iter().enumerate() {
            if u < *wt {
                k = i;
                break;
            }
            u -= wt;
        }
        while weights[k] == 0.0 {
            k -= 1;
        }
        let x = ga[k][rng.gen_range(0..ga[k].len())];
        let y = gb[k][rng.gen_range(0..gb[k].len())];
        w += pair_score(y, x);
    }
    Some(w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTest {
    pub lo_band: usize,
    pub hi_band: usize,
    pub n_lo: usize,
    pub n_hi: usize,
    /// Mann–Whitney U of the higher band (pairs where it is larger, ties 1/2).
    pub u: Option<f64>,
    /// One-sided p-value for "higher band larger".
    pub p: Option<f64>,
    pub underpowered: bool,
}

pub const MIN_TEST_N: usize = 20;

/// One-sided Mann–Whitney U test, normal approximation with tie and
/// continuity corrections. Returns `(U_hi, p)`.
pub fn mann_whitney_greater(lo: &[f64], hi: &[f64]) -> Option<(f64, f64)> {
    let (n1, n2) = (hi.len(), lo.len());
    if n1 == 0 || n2 == 0 {
        return None;
    }
    let mut all: Vec<(f64, bool)> = hi.iter().map(|&v| (v, true)).chain(lo.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_sum_hi = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_hi += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let (f1, f2, nf) = (n1 as f64, n2 as f64, n as f64);
    let u = rank_sum_hi - f1 * (f1 + 1.0) / 2.0;
    let mu = f1 * f2 / 2.0;
    let var = f1 * f2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)).max(1.0));
    let p = if var <= 0.0 {
        1.0
    } else {
        std_normal_sf((u - mu - 0.5) / var.sqrt())
    };
    Some((u, p.clamp(0.0, 1.0)))
}

pub fn adjacent_band_test(obs: &[Obs], bands: &PenetrationBands) -> Result<Vec<RankTest>> {
    bands.validate()?;
    let groups: Vec<Vec<f64>> = (0..bands.len())
        .map(|b| bands.members(obs, b).iter().map(|o| o.surge).collect())
        .collect();
    Ok((0..bands.len() - 1)
        .map(|b| {
            let (lo, hi) = (&groups[b], &groups[b + 1]);
            let r = mann_whitney_greater(lo, hi);
            RankTest {
                lo_band: b,
                hi_band: b + 1,
                n_lo: lo.len(),
                n_hi: hi.len(),
                u: r.map(|x| x.0),
                p: r.map(|x| x.1),
                underpowered: lo.len() < MIN_TEST_N || hi.len() < MIN_TEST_N,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub q: f64,
    pub threshold: f64,
    /// No pooled value lies strictly below the threshold.
    pub degenerate: bool,
    pub band: usize,
    pub n: usize,
    pub prob_below: Option<f64>,
}

pub const MIN_POOLED_N: usize = 100;

/// Per band `P(s < t_q)` where `t_q` is the pooled q-th percentile.
pub fn percentile_threshold_analysis(
    obs: &[Obs],
    bands: &PenetrationBands,
    qs: &[f64],
) -> Result<Vec<ThresholdRow>> {
    bands.validate()?;
    let pooled: Vec<&Obs> = obs.iter().filter(|o| bands.band_of(o.rate).is_some()).collect();
    if pooled.len() < MIN_POOLED_N {
        return Err(Error::invalid(format!(
            "percentile thresholds need at least {MIN_POOLED_N} in-band events, got {}",
            pooled.len()
        )));
    }
    let values: Vec<f64> = pooled.iter().map(|o| o.surge).collect();
    let mut rows = Vec::new();
    for &q in qs {
        if !(q > 0.0 && q < 100.0) {
            return Err(Error::invalid(format!("percentile {q} outside (0, 100)")));
        }
        let t = nearest_rank(&values, q);
        let degenerate = !values.iter().any(|&v| v < t);
        for b in 0..bands.len() {
            let m = bands.members(obs, b);
            let below = m.iter().filter(|o| o.surge < t).count();
            rows.push(ThresholdRow {
                q,
                threshold: t,
                degenerate,
                band: b,
                n: m.len(),
                prob_below: (!m.is_empty()).then(|| below as f64 / m.len() as f64),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use rand_distr::{Distribution, Exp};

    fn uniform_band(rng: &mut Rng, rate: f64, n: usize) -> Vec<Obs> {
        (0..n).map(|_| Obs::new(rate, rng.gen())).collect()
    }

    #[test]
    fn band_membership_is_half_open_with_closed_top() {
        let b = PenetrationBands::default_for(Asset::Ev);
        assert_eq!(b.band_of(0.05), Some(0));
        assert_eq!(b.band_of(0.10), Some(1));
        assert_eq!(b.band_of(0.50), Some(3));
        assert_eq!(b.band_of(0.04), None);
        assert_eq!(b.band_of(0.51), None);
        assert_eq!(b.label(1), "B2 (10–20%)");
        assert!(PenetrationBands::new(vec![0.1, 0.1]).is_err());
    }

    #[test]
    fn singleton_band_has_equal_median_and_p95() {
        let b = PenetrationBands::default_for(Asset::Ev);
        let s = band_stats(&[Obs::new(0.07, 0.3)], &b).unwrap();
        assert_eq!(s[0].median, Some(0.3));
        assert_eq!(s[0].p95, Some(0.3));
        assert!(s[1].empty);
    }

    #[test]
    fn uniform_p95_matches_order_statistics() {
        let mut rng = substream(5, Domain::Misc, 0);
        let obs = uniform_band(&mut rng, 0.07, 1001);
        let s = band_stats(&obs, &PenetrationBands::default_for(Asset::Ev)).unwrap();
        assert!((s[0].p95.unwrap() - 0.95).abs() <= 0.02);
    }

    #[test]
    fn exceedance_curve_boundaries() {
        let mut rng = substream(6, Domain::Misc, 0);
        let obs: Vec<Obs> = (0..500).map(|_| Obs::new(rng.gen_range(0.05..0.5), rng.gen())).collect();
        let grid = default_grid(&PenetrationBands::default_for(Asset::Ev), 9);
        for bin in exceedance_curve(&obs, 2.0, &grid).unwrap() {
            assert_eq!(bin.prob, Some(0.0));
        }
        for bin in exceedance_curve(&obs, -1.0, &grid).unwrap() {
            assert_eq!(bin.prob, Some(1.0));
            assert!(bin.ci_lo.unwrap() <= 1.0 && bin.ci_hi.unwrap() >= 1.0 - 1e-12);
        }
        for bin in exceedance_curve(&obs, 0.5, &grid).unwrap() {
            let p = bin.prob.unwrap();
            assert!(bin.ci_lo.unwrap() <= p && p <= bin.ci_hi.unwrap());
        }
    }

    #[test]
    fn identical_bands_give_one_half() {
        let mut rng = substream(7, Domain::Misc, 0);
        let mut obs = uniform_band(&mut rng, 0.07, 400);
        obs.extend(uniform_band(&mut rng, 0.15, 400));
        let b = PenetrationBands::default_for(Asset::Ev);
        let cfg = BootstrapConfig {
            iterations: 1000,
            pair_draws: 2000,
            seed: 1,
        };
        let r = bootstrap_band_compare(&obs, &b, 0, 1, &SubsetFilter::all(), &cfg).unwrap();
        assert!((r.mean - 0.5).abs() <= 0.02, "{}", r.mean);
        assert!(r.estimates.iter().all(|e| (0.0..=1.0).contains(e)));
    }

    #[test]
    fn swapping_labels_complements_every_estimate() {
        let mut rng = substream(8, Domain::Misc, 0);
        let mut obs = uniform_band(&mut rng, 0.07, 60);
        obs.extend((0..50).map(|_| Obs::new(0.4, rng.gen::<f64>() + 0.2)));
        let b = PenetrationBands::default_for(Asset::Ev);
        let cfg = BootstrapConfig {
            iterations: 200,
            pair_draws: 300,
            seed: 3,
        };
        let f = SubsetFilter::all();
        let a = bootstrap_band_compare(&obs, &b, 0, 3, &f, &cfg).unwrap();
        let s = bootstrap_band_compare(&obs, &b, 3, 0, &f, &cfg).unwrap();
        for (x, y) in a.estimates.iter().zip(&s.estimates) {
            assert!((x + y - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dominated_band_is_detected() {
        let mut rng = substream(9, Domain::Misc, 0);
        let mut obs = uniform_band(&mut rng, 0.07, 300);
        obs.extend((0..300).map(|_| Obs::new(0.15, rng.gen::<f64>() + 1.0)));
        let b = PenetrationBands::default_for(Asset::Ev);
        let cfg = BootstrapConfig {
            iterations: 100,
            pair_draws: 500,
            seed: 2,
        };
        let r = bootstrap_band_compare(&obs, &b, 0, 1, &SubsetFilter::all(), &cfg).unwrap();
        assert!(r.mean > 0.95);
    }

    #[test]
    fn empty_filtered_band_is_named() {
        let obs = vec![Obs::new(0.07, 1.0), Obs::new(0.15, 2.0)];
        let b = PenetrationBands::default_for(Asset::Ev);
        let f = SubsetFilter::preset("night_long").unwrap();
        let err = bootstrap_band_compare(&obs, &b, 0, 1, &f, &BootstrapConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("B1") && msg.contains("night_long"), "{msg}");
        assert!(bootstrap_band_compare(&obs, &b, 0, 1, &SubsetFilter::all(), &BootstrapConfig {
            iterations: 99,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn matched_pairs_stay_within_ghi_bins() {
        // Higher band only wins because it sits in a brighter bin; matching removes that.
        let mut obs = Vec::new();
        for i in 0..200 {
            let bright = i % 2 == 0;
            let ghi = if bright { 900.0 } else { 300.0 };
            let s = if bright { 1.0 } else { 0.0 };
            obs.push(Obs { ghi, ..Obs::new(0.07, s) });
            if bright || i % 10 == 1 {
                obs.push(Obs { ghi, ..Obs::new(0.12, s) });
            }
        }
        let b = PenetrationBands::default_for(Asset::Der);
        let cfg = BootstrapConfig {
            iterations: 100,
            pair_draws: 400,
            seed: 4,
        };
        let raw = bootstrap_band_compare(&obs, &b, 0, 1, &SubsetFilter::preset("daytime").unwrap(), &cfg).unwrap();
        let matched =
            bootstrap_band_compare(&obs, &b, 0, 1, &SubsetFilter::preset("matched_irradiance").unwrap(), &cfg)
                .unwrap();
        assert!(raw.mean > 0.6);
        assert!((matched.mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn presets_follow_the_stated_conditions() {
        let f = SubsetFilter::preset("night_long").unwrap();
        let o = |hour, d| Obs { hour, duration_h: d, ..Obs::new(0.1, 0.0) };
        assert!(f.accepts(&o(5.0, 4.0)) && f.accepts(&o(19.0, 6.0)));
        assert!(!f.accepts(&o(12.0, 5.0)) && !f.accepts(&o(20.0, 3.75)));
        let cold = SubsetFilter::preset("cold_long").unwrap();
        assert!((cold.max_temp_c.unwrap() - 10.0).abs() < 1e-12);
        assert!(SubsetFilter::preset("nope").is_err());
    }

    #[test]
    fn rank_test_power_and_underpowered_flag() {
        let mut rng = substream(10, Domain::Misc, 0);
        let exp = Exp::new(1.0).unwrap();
        let lo: Vec<f64> = (0..200).map(|_| exp.sample(&mut rng)).collect();
        let hi: Vec<f64> = (0..200).map(|_| exp.sample(&mut rng) + 0.5).collect();
        let (_, p) = mann_whitney_greater(&lo, &hi).unwrap();
        assert!(p < 1e-6, "{p}");

        let obs: Vec<Obs> = (0..5)
            .map(|i| Obs::new(0.07, i as f64))
            .chain((0..5).map(|i| Obs::new(0.15, i as f64)))
            .collect();
        let t = adjacent_band_test(&obs, &PenetrationBands::default_for(Asset::Ev)).unwrap();
        assert!(t[0].underpowered);
        assert!(t[1].underpowered && t[1].p.is_none());
    }

    #[test]
    fn rank_statistic_matches_pair_count() {
        let lo = [1.0, 2.0, 2.0, 5.0];
        let hi = [2.0, 3.0, 6.0];
        let brute: f64 = hi.iter().map(|&h| lo.iter().map(|&l| pair_score(h, l)).sum::<f64>()).sum();
        let (u, _) = mann_whitney_greater(&lo, &hi).unwrap();
        assert_eq!(u, brute);
    }

    #[test]
    fn thresholds_on_identical_bands_and_degenerate_values() {
        let mut rng = substream(11, Domain::Misc, 0);
        let mut obs = Vec::new();
        for rate in [0.07, 0.15, 0.25, 0.4] {
            obs.extend(uniform_band(&mut rng, rate, 2000));
        }
        let b = PenetrationBands::default_for(Asset::Ev);
        for r in percentile_threshold_analysis(&obs, &b, &[70.0, 80.0, 90.0]).unwrap() {
            let q = r.q / 100.0;
            let tol = 4.5 * (q * (1.0 - q) / r.n as f64).sqrt() + 1.0 / r.n as f64;
            assert!((r.prob_below.unwrap() - q).abs() < tol, "{r:?}");
            assert!(!r.degenerate);
        }
        let flat: Vec<Obs> = (0..200).map(|_| Obs::new(0.07, 1.0)).collect();
        let rows = percentile_threshold_analysis(&flat, &b, &[90.0]).unwrap();
        assert!(rows[0].degenerate);
        assert!(percentile_threshold_analysis(&flat[..50], &b, &[90.0]).is_err());
    }
}
