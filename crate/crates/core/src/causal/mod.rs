//! Honest causal forest for a continuous treatment (asset penetration) with
//! cross-fitting, locally centred outcomes and half-sample confidence
//! intervals.
//!
//! Fit:
//! 1. Samples are split into `n_folds` folds.
//! 2. `E[Y|Z]` and `E[X|Z]` are estimated out of fold by regression forests;
//!    trees see the residuals.
//! 3. For each fold, `n_trees / n_folds` trees are grown on the *other*
//!    folds, in little bags of `ci_group_size` trees sharing one half-sample.
//!    Each tree splits its subsample into a structure part (chooses splits)
//!    and an estimation part (fills the leaves).
//!
//! A training point's effect uses only the trees grown without its fold;
//! fresh points use every tree.

mod tree;

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::empirics::Asset;
use crate::error::{Error, Result};
use crate::metrics::EventRecord;
use crate::rng::{substream, Domain};

pub use tree::{Criterion, Moments, Tree};
use tree::{grow, Columns, GrowParams};

#[derive(Debug, Clone, PartialEq)]
pub struct CausalSample {
    /// Treatment: penetration as a fraction.
    pub x: f64,
    /// Outcome: surge ratio.
    pub y: f64,
    /// Confounders.
    pub z: Vec<f64>,
}

/// Confounder columns built from a surge record.
pub fn confounder_names(asset: Asset) -> Vec<&'static str> {
    let mut v = vec!["temp_c", "duration_h", "n_customers", "hour", "hour_sin", "hour_cos"];
    if asset == Asset::Der {
        v.push("ghi");
    }
    v
}

pub fn confounders(r: &EventRecord, asset: Asset) -> Vec<f64> {
    let a = 2.0 * std::f64::consts::PI * r.hour / 24.0;
    let mut z = vec![r.temp_c, r.duration_h, r.n_customers as f64, r.hour, a.sin(), a.cos()];
    if asset == Asset::Der {
        z.push(r.ghi);
    }
    z
}

pub fn samples_from_records(records: &[EventRecord], asset: Asset) -> Vec<CausalSample> {
    records
        .iter()
        .map(|r| CausalSample {
            x: asset.rate(r),
            y: asset.surge(r),
            z: confounders(r, asset),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Per-tree subsample, as a fraction of the fold's training rows. Drawn
    /// from the tree's half-sample, so at most 0.5.
    pub subsample_fraction: f64,
    /// Minimum structure rows per child.
    pub min_leaf: usize,
    /// Share of each tree's subsample that chooses splits.
    pub honesty_fraction: f64,
    pub n_folds: usize,
    pub max_depth: usize,
    /// Candidate features per split; `None` = ceil(sqrt(dim)).
    pub mtry: Option<usize>,
    /// Trees per little bag (half-sample group).
    pub ci_group_size: usize,
    /// Trees per fold of each nuisance regression forest.
    pub nuisance_trees: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            subsample_fraction: 0.5,
            min_leaf: 10,
            honesty_fraction: 0.5,
            n_folds: 5,
            max_depth: 20,
            mtry: None,
            ci_group_size: 2,
            nuisance_trees: 50,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if self.n_trees == 0 {
            return Err(Error::invalid("n_trees must be >= 1"));
        }
        if !frac(self.subsample_fraction) || self.subsample_fraction > 0.5 {
            return Err(Error::invalid("subsample_fraction must lie in (0, 0.5]"));
        }
        if !frac(self.honesty_fraction) {
            return Err(Error::invalid("honesty_fraction must lie in (0, 1)"));
        }
        if self.n_folds < 2 {
            return Err(Error::invalid("n_folds must be >= 2"));
        }
        if self.min_leaf == 0 || self.max_depth == 0 || self.ci_group_size < 2 || self.nuisance_trees == 0 {
            return Err(Error::invalid(
                "min_leaf, max_depth and nuisance_trees must be >= 1; ci_group_size >= 2",
            ));
        }
        if self.mtry == Some(0) {
            return Err(Error::invalid("mtry must be >= 1"));
        }
        Ok(())
    }

    fn trees_per_fold(&self) -> usize {
        let per = self.n_trees.div_ceil(self.n_folds);
        per.div_ceil(self.ci_group_size) * self.ci_group_size
    }
}

pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestTree {
    /// Fold held out from this tree's training rows.
    pub fold: u32,
    /// Little-bag group (global index).
    pub group: u32,
    pub tree: Tree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub asset: String,
    pub feature_names: Vec<String>,
    /// Training confounders (row-major) and fold of each training row.
    pub train_z: Vec<Vec<f64>>,
    pub train_fold: Vec<u32>,
    pub z_min: Vec<f64>,
    pub z_max: Vec<f64>,
    pub trees: Vec<ForestTree>,
}

/// Row indices used by each tree, for provenance checks.
#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    pub structure: Vec<Vec<u32>>,
    pub estimation: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalEffect {
    pub tau: f64,
    /// Query lies outside the training bounding box.
    pub extrapolated: bool,
}

pub fn fit(samples: &[CausalSample], config: &ForestConfig) -> Result<ForestModel> {
    fit_traced(samples, config).map(|(m, _)| m)
}

pub fn fit_traced(samples: &[CausalSample], config: &ForestConfig) -> Result<(ForestModel, FitTrace)> {
    config.validate()?;
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(Error::invalid(format!("causal forest needs at least {MIN_SAMPLES} samples, got {n}")));
    }
    if n < 2 * config.min_leaf {
        return Err(Error::invalid(format!(
            "{n} samples cannot fill two leaves of min_leaf {}",
            config.min_leaf
        )));
    }
    let dim = samples[0].z.len();
    if dim == 0 {
        return Err(Error::invalid("no confounders"));
    }
    for s in samples {
        if s.z.len() != dim {
            return Err(Error::Shape {
                what: "confounder vector",
                expected: dim,
                got: s.z.len(),
            });
        }
        if !s.x.is_finite() || !s.y.is_finite() || s.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("causal samples must be finite"));
        }
        if !(0.0..=1.0).contains(&s.x) {
            return Err(Error::invalid(format!("treatment {} outside [0, 1]", s.x)));
        }
    }
    let x0 = samples[0].x;
    if samples.iter().all(|s| s.x == x0) {
        return Err(Error::invalid("no treatment variation"));
    }

    let zc: Vec<Vec<f64>> = (0..dim).map(|d| samples.iter().map(|s| s.z[d]).collect()).collect();
    let x: Vec<f64> = samples.iter().map(|s| s.x).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.y).collect();

    let k = config.n_folds.min(n);
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut substream(config.seed, Domain::Folds, 0));
    let mut fold = vec![0u32; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i as usize] = (pos % k) as u32;
    }

    let y_hat = cross_fit_mean(&zc, &y, &fold, k, config, 0);
    let x_hat = cross_fit_mean(&zc, &x, &fold, k, config, 1);
    let yr: Vec<f64> = y.iter().zip(&y_hat).map(|(a, b)| a - b).collect();
    let xr: Vec<f64> = x.iter().zip(&x_hat).map(|(a, b)| a - b).collect();
    let cols = Columns { z: &zc, x: &xr, y: &yr };

    let per_fold = config.trees_per_fold();
    let groups_per_fold = per_fold / config.ci_group_size;
    let mtry = config.mtry.unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize);
    let params = GrowParams {
        min_leaf: config.min_leaf,
        max_depth: config.max_depth,
        mtry,
        criterion: Criterion::Slope,
    };

    let jobs: Vec<(u32, u32, usize)> = (0..k as u32)
        .flat_map(|f| {
            (0..groups_per_fold).flat_map(move |g| {
                let group = f * groups_per_fold as u32 + g as u32;
                (0..config.ci_group_size).map(move |t| (f, group, t))
            })
        })
        .collect();

    let built: Vec<(ForestTree, Vec<u32>, Vec<u32>)> = jobs
        .par_iter()
        .map(|&(f, group, t)| {
            let train: Vec<u32> = (0..n as u32).filter(|&i| fold[i as usize] != f).collect();
            let mut grng = substream(config.seed, Domain::Forest, (1 << 40) | group as u64);
            let mut half = train.clone();
            half.shuffle(&mut grng);
            half.truncate(train.len() / 2);
            let tree_id = group as u64 * config.ci_group_size as u64 + t as u64;
            let mut rng = substream(config.seed, Domain::Forest, tree_id);
            let m = ((config.subsample_fraction * train.len() as f64).round() as usize).clamp(2, half.len());
            let mut sub = half;
            sub.shuffle(&mut rng);
            sub.truncate(m);
            let n_struct = ((config.honesty_fraction * m as f64).round() as usize).clamp(1, m - 1);
            let estimation = sub.split_off(n_struct);
            let structure = sub;
            let tree = grow(&cols, structure.clone(), &estimation, &params, &mut rng);
            (ForestTree { fold: f, group, tree }, structure, estimation)
        })
        .collect();

    let mut trace = FitTrace::default();
    let mut trees = Vec::with_capacity(built.len());
    for (t, s, e) in built {
        trees.push(t);
        trace.structure.push(s);
        trace.estimation.push(e);
    }

    let z_min = zc.iter().map(|c| c.iter().cloned().fold(f64::INFINITY, f64::min)).collect();
    let z_max = zc.iter().map(|c| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
    let model = ForestModel {
        config: *config,
        asset: String::new(),
        feature_names: (0..dim).map(|d| format!("z{d}")).collect(),
        train_z: samples.iter().map(|s| s.z.clone()).collect(),
        train_fold: fold,
        z_min,
        z_max,
        trees,
    };
    Ok((model, trace))
}

/// Fit on surge records for one asset, recording the confounder names.
pub fn fit_records(records: &[EventRecord], asset: Asset, config: &ForestConfig) -> Result<ForestModel> {
    let mut m = fit(&samples_from_records(records, asset), config)?;
    m.asset = asset.name().to_string();
    m.feature_names = confounder_names(asset).into_iter().map(String::from).collect();
    Ok(m)
}

/// Out-of-fold regression-forest estimate of `E[target | Z]`.
fn cross_fit_mean(
    zc: &[Vec<f64>],
    target: &[f64],
    fold: &[u32],
    k: usize,
    config: &ForestConfig,
    which: u64,
) -> Vec<f64> {
    let n = target.len();
    let dim = zc.len();
    let zeros = vec![0.0; n];
    let cols = Columns { z: zc, x: &zeros, y: target };
    let params = GrowParams {
        min_leaf: 5,
        max_depth: config.max_depth,
        mtry: dim,
        criterion: Criterion::Mean,
    };
    let jobs: Vec<(u32, usize)> = (0..k as u32)
        .flat_map(|f| (0..config.nuisance_trees).map(move |t| (f, t)))
        .collect();
    let trees: Vec<(u32, Tree)> = jobs
        .par_iter()
        .map(|&(f, t)| {
            let train: Vec<u32> = (0..n as u32).filter(|&i| fold[i as usize] != f).collect();
            let id = ((which * k as u64 + f as u64) << 32) | t as u64;
            let mut rng = substream(config.seed, Domain::Nuisance, id);
            let mut sub = train;
            sub.shuffle(&mut rng);
            sub.truncate((sub.len() / 2).max(1));
            let tree = grow(&cols, sub.clone(), &sub, &params, &mut rng);
            (f, tree)
        })
        .collect();
    let mut pred = vec![0.0; n];
    let mut count = vec![0.0; n];
    for (f, tree) in &trees {
        for i in 0..n {
            if fold[i] != *f {
                continue;
            }
            let z: Vec<f64> = (0..dim).map(|d| zc[d][i]).collect();
            let m = tree.leaf(&z).m;
            pred[i] += m.sy / m.n;
            count[i] += 1.0;
        }
    }
    pred.iter().zip(&count).map(|(p, c)| p / c).collect()
}

/// Pooled leaf moments over a set of trees, then the slope.
fn pooled_tau<'a>(trees: impl Iterator<Item = &'a ForestTree>, z: &[f64]) -> Option<f64> {
    let (mut mx, mut my, mut mxx, mut mxy, mut c) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for t in trees {
        let m = t.tree.leaf(z).m;
        if m.n == 0.0 {
            continue;
        }
        mx += m.sx / m.n;
        my += m.sy / m.n;
        mxx += m.sxx / m.n;
        mxy += m.sxy / m.n;
        c += 1.0;
    }
    if c == 0.0 {
        return None;
    }
    let (mx, my, mxx, mxy) = (mx / c, my / c, mxx / c, mxy / c);
    let v = mxx - mx * mx;
    (v > 1e-15).then(|| (mxy - mx * my) / v)
}

impl ForestModel {
    pub fn dim(&self) -> usize {
        self.z_min.len()
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Shape {
                what: "confounder vector",
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    fn extrapolated(&self, z: &[f64]) -> bool {
        z.iter()
            .zip(self.z_min.iter().zip(&self.z_max))
            .any(|(v, (lo, hi))| v < lo || v > hi)
    }

    /// Effect per unit treatment at a fresh point, from all trees.
    pub fn local_effect(&self, z: &[f64]) -> Result<LocalEffect> {
        self.check_dim(z)?;
        Ok(LocalEffect {
            tau: pooled_tau(self.trees.iter(), z).unwrap_or(0.0),
            extrapolated: self.extrapolated(z),
        })
    }

    /// Cross-fitted effect of training row `i`: only trees that held out its fold.
    pub fn training_effect(&self, i: usize) -> f64 {
        let f = self.train_fold[i];
        pooled_tau(self.trees.iter().filter(|t| t.fold == f), &self.train_z[i]).unwrap_or(0.0)
    }

    /// Indices of the trees that contribute to training row `i`.
    pub fn contributing_trees(&self, i: usize) -> Vec<usize> {
        let f = self.train_fold[i];
        (0..self.trees.len()).filter(|&t| self.trees[t].fold == f).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = binio::Writer::new(MAGIC, VERSION);
        let c = &self.config;
        w.u64(c.n_trees as u64);
        w.f64(c.subsample_fraction);
        w.u64(c.min_leaf as u64);
        w.f64(c.honesty_fraction);
        w.u64(c.n_folds as u64);
        w.u64(c.max_depth as u64);
        w.u64(c.mtry.map_or(0, |m| m as u64));
        w.u64(c.ci_group_size as u64);
        w.u64(c.nuisance_trees as u64);
        w.u64(c.seed);
        w.str(&self.asset);
        w.u64(self.feature_names.len() as u64);
        for s in &self.feature_names {
            w.str(s);
        }
        w.f64s(&self.z_min);
        w.f64s(&self.z_max);
        w.u64(self.train_z.len() as u64);
        for (z, f) in self.train_z.iter().zip(&self.train_fold) {
            w.u32(*f);
            for v in z {
                w.f64(*v);
            }
        }
        w.u64(self.trees.len() as u64);
        for t in &self.trees {
            w.u32(t.fold);
            w.u32(t.group);
            w.u64(t.tree.nodes.len() as u64);
            for nd in &t.tree.nodes {
                w.u32(nd.feature);
                w.f64(nd.threshold);
                w.u32(nd.left);
                w.u32(nd.right);
                for v in [nd.m.n, nd.m.sx, nd.m.sy, nd.m.sxx, nd.m.sxy] {
                    w.f64(v);
                }
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = binio::Reader::new(bytes, MAGIC)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported forest version {version}")));
        }
        let config = ForestConfig {
            n_trees: r.u64()? as usize,
            subsample_fraction: r.f64()?,
            min_leaf: r.u64()? as usize,
            honesty_fraction: r.f64()?,
            n_folds: r.u64()? as usize,
            max_depth: r.u64()? as usize,
            mtry: match r.u64()? {
                0 => None,
                m => Some(m as usize),
            },
            ci_group_size: r.u64()? as usize,
            nuisance_trees: r.u64()? as usize,
            seed: r.u64()?,
        };
        let asset = r.str()?;
        let nf = r.len(8)?;
        let feature_names = (0..nf).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let z_min = r.f64s()?;
        let z_max = r.f64s()?;
        let dim = z_min.len();
        if z_max.len() != dim || feature_names.len() != dim {
            return Err(Error::Format("inconsistent forest dimensions".into()));
        }
        let n = r.len(4 + 8 * dim)?;
        let mut train_z = Vec::with_capacity(n);
        let mut train_fold = Vec::with_capacity(n);
        for _ in 0..n {
            train_fold.push(r.u32()?);
            train_z.push((0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        let nt = r.len(16)?;
        let mut trees = Vec::with_capacity(nt);
        for _ in 0..nt {
            let fold = r.u32()?;
            let group = r.u32()?;
            let nn = r.len(60)?;
            let mut nodes = Vec::with_capacity(nn);
            for _ in 0..nn {
                let feature = r.u32()?;
                let threshold = r.f64()?;
                let left = r.u32()?;
                let right = r.u32()?;
                let m = Moments {
                    n: r.f64()?,
                    sx: r.f64()?,
                    sy: r.f64()?,
                    sxx: r.f64()?,
                    sxy: r.f64()?,
                };
                let leaf = feature == tree::LEAF;
                let ok = leaf || ((feature as usize) < dim && (left as usize) < nn && (right as usize) < nn);
                if !ok {
                    return Err(Error::Format("corrupt tree node".into()));
                }
                nodes.push(tree::Node {
                    feature,
                    threshold,
                    left,
                    right,
                    m,
                });
            }
            // Children must come after parents so lookups terminate.
            for (i, nd) in nodes.iter().enumerate() {
                if !nd.is_leaf() && (nd.left as usize <= i || nd.right as usize <= i) {
                    return Err(Error::Format("corrupt tree ordering".into()));
                }
            }
            trees.push(ForestTree {
                fold,
                group,
                tree: Tree { nodes },
            });
        }
        r.finish()?;
        Ok(Self {
            config,
            asset,
            feature_names,
            train_z,
            train_fold,
            z_min,
            z_max,
            trees,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

const MAGIC: &[u8] = b"SGCF1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AteResult {
    pub scale: f64,
    /// Per-sample effects, multiplied by `scale`.
    pub local_effects: Vec<f64>,
    pub ate_mean: f64,
    pub std_err: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Half-sample variance of a group-level statistic: between-group spread
/// minus the within-group Monte Carlo noise.
fn half_sample_variance(group_stats: &[f64], tree_stats: &[Vec<f64>]) -> f64 {
    let g = group_stats.len() as f64;
    if g < 2.0 {
        return 0.0;
    }
    let mean = group_stats.iter().sum::<f64>() / g;
    let between = group_stats.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (g - 1.0);
    let within = tree_stats
        .iter()
        .map(|ts| {
            let l = ts.len() as f64;
            let m = ts.iter().sum::<f64>() / l;
            ts.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (l * (l - 1.0))
        })
        .sum::<f64>()
        / g;
    let v = between - within;
    if v > 0.0 {
        v
    } else {
        between
    }
}

/// Mean effect of a set of points, per tree group and per tree.
fn group_means(model: &ForestModel, trees: &[usize], points: &[&[f64]]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut groups: Vec<(u32, Vec<usize>)> = Vec::new();
    for &t in trees {
        let g = model.trees[t].group;
        match groups.last_mut() {
            Some((id, v)) if *id == g => v.push(t),
            _ => groups.push((g, vec![t])),
        }
    }
    let per: Vec<(f64, Vec<f64>)> = groups
        .par_iter()
        .map(|(_, ts)| {
            let mut gsum = 0.0;
            let mut tsum = vec![0.0; ts.len()];
            for z in points {
                gsum += pooled_tau(ts.iter().map(|&t| &model.trees[t]), z).unwrap_or(0.0);
                for (j, &t) in ts.iter().enumerate() {
                    tsum[j] += pooled_tau(std::iter::once(&model.trees[t]), z).unwrap_or(0.0);
                }
            }
            let n = points.len() as f64;
            (gsum / n, tsum.into_iter().map(|s| s / n).collect())
        })
        .collect();
    per.into_iter().unzip()
}

/// Average effect over the training rows (cross-fitted), scaled.
pub fn ate(model: &ForestModel, scale: f64) -> Result<AteResult> {
    if !scale.is_finite() {
        return Err(Error::invalid("scale must be finite"));
    }
    let n = model.train_z.len();
    let tau: Vec<f64> = (0..n).into_par_iter().map(|i| model.training_effect(i)).collect();
    let folds = model.train_fold.iter().max().map_or(0, |m| *m as usize + 1);
    let mut sd_sum = 0.0;
    for f in 0..folds as u32 {
        let pts: Vec<&[f64]> = (0..n)
            .filter(|&i| model.train_fold[i] == f)
            .map(|i| model.train_z[i].as_slice())
            .collect();
        if pts.is_empty() {
            continue;
        }
        let trees: Vec<usize> = (0..model.trees.len()).filter(|&t| model.trees[t].fold == f).collect();
        let (g, t) = group_means(model, &trees, &pts);
        let w = pts.len() as f64 / n as f64;
        sd_sum += w * half_sample_variance(&g, &t).sqrt();
    }
    Ok(finish_ate(tau, scale, sd_sum))
}

/// Average effect over fresh points, using every tree.
pub fn ate_on(model: &ForestModel, points: &[Vec<f64>], scale: f64) -> Result<AteResult> {
    if points.is_empty() {
        return Err(Error::invalid("no points"));
    }
    for z in points {
        model.check_dim(z)?;
    }
    let tau: Vec<f64> = points
        .par_iter()
        .map(|z| pooled_tau(model.trees.iter(), z).unwrap_or(0.0))
        .collect();
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let all: Vec<usize> = (0..model.trees.len()).collect();
    let (g, t) = group_means(model, &all, &refs);
    Ok(finish_ate(tau, scale, half_sample_variance(&g, &t).sqrt()))
}

fn finish_ate(tau: Vec<f64>, scale: f64, sd: f64) -> AteResult {
    let n = tau.len() as f64;
    let mean_tau = tau.iter().sum::<f64>() / n;
    let ate_mean = scale * mean_tau;
    let std_err = scale.abs() * sd;
    AteResult {
        scale,
        local_effects: tau.iter().map(|t| scale * t).collect(),
        ate_mean,
        std_err,
        ci_lo: ate_mean - 1.959963984540054 * std_err,
        ci_hi: ate_mean + 1.959963984540054 * std_err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    /// y = tau(z) x + g(z) + noise with x confounded by z.
    fn planted(n: usize, seed: u64, tau: impl Fn(&[f64]) -> f64) -> Vec<CausalSample> {
        let mut rng = substream(seed, Domain::Misc, 99);
        (0..n)
            .map(|_| {
                let temp: f64 = rng.gen_range(-15.0..35.0);
                let dur: f64 = rng.gen_range(0.25..8.0);
                let hour: f64 = rng.gen_range(0.0..24.0);
                let z = vec![temp, dur, hour];
                let e: f64 = StandardNormal.sample(&mut rng);
                let x = (0.3 + 0.006 * temp + 0.1 * e).clamp(0.0, 1.0);
                let g = 0.02 * (15.0 - temp).max(0.0) + 0.1 * dur.sqrt();
                let eps: f64 = StandardNormal.sample(&mut rng);
                CausalSample {
                    x,
                    y: tau(&z) * x + g + 0.1 * eps,
                    z,
                }
            })
            .collect()
    }

    fn quick() -> ForestConfig {
        ForestConfig {
            n_trees: 100,
            nuisance_trees: 50,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn input_contracts() {
        let s = planted(49, 1, |_| 1.0);
        assert!(fit(&s, &quick()).is_err());
        let mut s = planted(200, 1, |_| 1.0);
        for v in &mut s {
            v.x = 0.3;
        }
        let err = fit(&s, &quick()).unwrap_err();
        assert!(err.to_string().contains("no treatment variation"));
        let s = planted(60, 1, |_| 1.0);
        assert!(fit(&s, &ForestConfig { min_leaf: 31, ..quick() }).is_err());
    }

    #[test]
    fn constant_effect_is_recovered_and_flat() {
        let s = planted(2000, 2, |_| 1.5);
        let m = fit(&s, &quick()).unwrap();
        let taus: Vec<f64> = (0..s.len()).map(|i| m.training_effect(i)).collect();
        let mean = taus.iter().sum::<f64>() / taus.len() as f64;
        let sd = (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / taus.len() as f64).sqrt();
        assert!((mean - 1.5).abs() < 0.2, "mean {mean}");
        assert!(sd < 0.15 * 1.5, "sd {sd}");
    }

    #[test]
    fn heterogeneous_sign_pattern_is_recovered() {
        let s = planted(1000, 3, |z| if z[0] < 0.0 { 1.0 } else { 0.2 });
        let m = fit(&s, &quick()).unwrap();
        let cold = m.local_effect(&[-8.0, 2.0, 12.0]).unwrap().tau;
        let warm = m.local_effect(&[20.0, 2.0, 12.0]).unwrap().tau;
        assert!(cold > warm, "{cold} vs {warm}");
        assert!(m.local_effect(&[60.0, 2.0, 12.0]).unwrap().extrapolated);
        assert!(!m.local_effect(&[20.0, 2.0, 12.0]).unwrap().extrapolated);
        assert!(m.local_effect(&[20.0, 2.0]).is_err());
    }

    #[test]
    fn cross_fit_trees_never_saw_the_point() {
        let s = planted(300, 4, |_| 1.0);
        let (m, trace) = fit_traced(&s, &quick()).unwrap();
        for i in 0..s.len() {
            for t in m.contributing_trees(i) {
                assert!(!trace.structure[t].contains(&(i as u32)));
                assert!(!trace.estimation[t].contains(&(i as u32)));
            }
        }
        for t in 0..m.trees.len() {
            let st = &trace.structure[t];
            assert!(trace.estimation[t].iter().all(|e| !st.contains(e)));
        }
    }

    #[test]
    fn deterministic_and_serialisable() {
        let s = planted(300, 5, |_| 1.0);
        let a = fit(&s, &quick()).unwrap();
        let b = fit(&s, &quick()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let back = ForestModel::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        let mut bad = a.to_bytes();
        bad[0] = b'X';
        assert!(ForestModel::from_bytes(&bad).is_err());
        assert!(ForestModel::from_bytes(&a.to_bytes()[..100]).is_err());
    }

    #[test]
    fn ate_is_linear_in_scale_and_shift_invariant() {
        let s = planted(400, 6, |_| 1.0);
        let m = fit(&s, &quick()).unwrap();
        let a = ate(&m, 0.1).unwrap();
        let b = ate(&m, 0.2).unwrap();
        assert_eq!(b.ate_mean, 2.0 * a.ate_mean);
        assert!(a.ci_lo <= a.ate_mean && a.ate_mean <= a.ci_hi);

        let shifted: Vec<CausalSample> = s
            .iter()
            .map(|v| CausalSample {
                y: v.y + 3.0,
                ..v.clone()
            })
            .collect();
        let m2 = fit(&shifted, &quick()).unwrap();
        for i in 0..s.len() {
            assert!((m.training_effect(i) - m2.training_effect(i)).abs() < 1e-10);
        }
    }
}
