use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{featurize, EventFeatures, EventKey, Normalizer, FEATURE_DIM};
use super::net::{Net, N_HEADS_OUT};
use super::{ModelConfig, SurgeEstimator, HEAD_NAMES};
use crate::error::{Error, Result};
use crate::metrics::{EventRecord, PenetrationRates};
use crate::rng::{substream, Domain};
use crate::stats::skill;
use crate::synth::WeatherTrace;

const MIN_EVENTS: usize = 200;
/// Samples per gradient work unit; partial sums are added in a fixed order.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of the training split held out for early stopping.
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            patience: 8,
            val_fraction: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        if !(self.lr > 0.0 && frac(self.beta1) && frac(self.beta2) && self.eps > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::invalid("need lr > 0, beta1/beta2 in (0, 1), eps > 0, clip_norm > 0"));
        }
        if !(frac(self.val_fraction) && frac(self.test_fraction)) {
            return Err(Error::invalid("val_fraction and test_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Featurised events with their measured component ratios.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub event_ids: Vec<u64>,
    pub features: Vec<EventFeatures>,
    /// `[s_ev, s_hp, s_der, s_oth]`.
    pub targets: Vec<[f64; 4]>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

pub fn build_dataset(records: &[EventRecord], weather: &WeatherTrace, seq_len: usize) -> Result<Dataset> {
    let features = records
        .par_iter()
        .map(|r| {
            featurize(
                &EventKey {
                    restoration_time: r.restoration_time,
                    duration_h: r.duration_h,
                    rates: PenetrationRates {
                        r_ev: r.r_ev,
                        r_hp: r.r_hp,
                        r_der: r.r_der,
                    },
                },
                weather,
                seq_len,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        event_ids: records.iter().map(|r| r.event_id).collect(),
        features,
        targets: records.iter().map(|r| [r.s_ev, r.s_hp, r.s_der, r.s_oth]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSkill {
    pub head: String,
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_fit: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Per-epoch mean training loss (standardised targets, dropout on).
    pub train_loss: Vec<f64>,
    /// Per-epoch validation loss (standardised targets, eval mode).
    pub val_loss: Vec<f64>,
    pub test: Vec<HeadSkill>,
    pub test_event_ids: Vec<u64>,
}

struct Prepared {
    x: Vec<Vec<f64>>,
    y: Vec<[f64; 4]>,
}

fn batch_loss_grad(
    net: &Net,
    params: &[f64],
    data: &Prepared,
    feats: &[EventFeatures],
    batch: &[usize],
    dropout: Option<(u64, u64)>,
    rate: f64,
) -> (f64, Vec<f64>) {
    let b = batch.len() as f64;
    let t = net.dims.t;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut g = vec![0.0; net.size];
            let mut l = 0.0;
            for (j, &i) in chunk.iter().enumerate() {
                let x = ArrayView2::from_shape((t, FEATURE_DIM), &data.x[i]).expect("shape");
                let mut rng = dropout.map(|(seed, base)| substream(seed, Domain::Training, base + (c * CHUNK + j) as u64));
                let (o, cache) = net.forward(params, x, &feats[i].valid, rng.as_mut().map(|r| (r, rate)));
                let y = data.y[i];
                let mut dout = [0.0; N_HEADS_OUT];
                for k in 0..N_HEADS_OUT {
                    let e = o[k] - y[k];
                    l += e * e;
                    dout[k] = 2.0 * e / b;
                }
                net.backward(params, &cache, &dout, &mut g);
            }
            (l, g)
        })
        .collect();
    let mut grad = vec![0.0; net.size];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, v) in grad.iter_mut().zip(g) {
            *a += v;
        }
    }
    (loss / b, grad)
}

fn eval_loss(net: &Net, params: &[f64], data: &Prepared, feats: &[EventFeatures], idx: &[usize]) -> f64 {
    let t = net.dims.t;
    let s: f64 = idx
        .par_iter()
        .map(|&i| {
            let x = ArrayView2::from_shape((t, FEATURE_DIM), &data.x[i]).expect("shape");
            let (o, _) = net.forward(params, x, &feats[i].valid, None);
            (0..N_HEADS_OUT).map(|k| (o[k] - data.y[i][k]).powi(2)).sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    s / idx.len().max(1) as f64
}

fn moments(ys: &[[f64; 4]]) -> ([f64; 4], [f64; 4]) {
    let n = ys.len() as f64;
    let mean: [f64; 4] = std::array::from_fn(|k| ys.iter().map(|y| y[k]).sum::<f64>() / n);
    let std = std::array::from_fn(|k| {
        let v = (ys.iter().map(|y| (y[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt();
        if v > 1e-12 {
            v
        } else {
            1.0
        }
    });
    (mean, std)
}

/// Train with Adam on a seeded 80/20 split, early-stopping on a validation
/// slice of the training split, and report test-split skill per head.
pub fn train(ds: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<(SurgeEstimator, TrainReport)> {
    model.validate()?;
    cfg.validate()?;
    let n = ds.len();
    if n < MIN_EVENTS {
        return Err(Error::invalid(format!("training needs at least {MIN_EVENTS} events, got {n}")));
    }
    if ds.features.len() != n || ds.event_ids.len() != n {
        return Err(Error::Shape {
            what: "dataset columns",
            expected: n,
            got: ds.features.len(),
        });
    }
    if ds.targets.iter().any(|y| y.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("non-finite training target"));
    }
    let scratch = SurgeEstimator::zeros(*model)?;
    for f in &ds.features {
        scratch.check(f)?;
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut substream(cfg.seed, Domain::Training, 0));
    let n_test = ((n as f64) * cfg.test_fraction).round() as usize;
    let (train_all, test) = perm.split_at(n - n_test);
    let n_val = ((train_all.len() as f64) * cfg.val_fraction).round().max(1.0) as usize;
    let (fit, val) = train_all.split_at(train_all.len() - n_val);

    let normalizer = Normalizer::fit(fit.iter().map(|&i| &ds.features[i]));
    let (tm, ts) = moments(&fit.iter().map(|&i| ds.targets[i]).collect::<Vec<_>>());
    let mut est = SurgeEstimator::new(*model, normalizer, tm, ts)?;
    let net = est.net();
    let data = Prepared {
        x: ds.features.par_iter().map(|f| est.normalizer.apply(f)).collect(),
        y: ds.targets.iter().map(|y| std::array::from_fn(|k| (y[k] - tm[k]) / ts[k])).collect(),
    };

    let mut params = est.params.clone();
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut m1 = vec![0.0; net.size];
    let mut m2 = vec![0.0; net.size];
    let mut step = 0i32;
    let mut train_loss = Vec::new();
    let mut val_loss = Vec::new();
    let mut wait = 0;
    let diverged = |epoch: usize, best: &[f64], est: &SurgeEstimator| Error::Diverged {
        epoch,
        last_good: Box::new(SurgeEstimator {
            params: best.to_vec(),
            ..est.clone()
        }),
    };

    let mut order = fit.to_vec();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut substream(cfg.seed, Domain::Training, 1 + epoch as u64));
        let mut sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let base = ((epoch as u64) << 32) | (bi * cfg.batch_size) as u64;
            let (l, mut g) = batch_loss_grad(&net, &params, &data, &ds.features, batch, Some((model.seed ^ cfg.seed, base)), model.dropout);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !l.is_finite() || !norm.is_finite() {
                return Err(diverged(epoch, &best, &est));
            }
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                g.iter_mut().for_each(|v| *v *= s);
            }
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for i in 0..net.size {
                m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
                m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                params[i] -= cfg.lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + cfg.eps);
            }
            sum += l * batch.len() as f64;
        }
        train_loss.push(sum / fit.len() as f64);
        let v = eval_loss(&net, &params, &data, &ds.features, val);
        val_loss.push(v);
        if !v.is_finite() {
            return Err(diverged(epoch, &best, &est));
        }
        if v < best_val {
            best_val = v;
            best.copy_from_slice(&params);
            best_epoch = epoch;
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                break;
            }
        }
    }
    est.params = best;

    let test_feats: Vec<EventFeatures> = test.iter().map(|&i| ds.features[i].clone()).collect();
    let pred = est.predict(&test_feats)?;
    let test_skill = (0..N_HEADS_OUT)
        .map(|k| {
            let p: Vec<f64> = pred.iter().map(|v| v[k]).collect();
            let y: Vec<f64> = test.iter().map(|&i| ds.targets[i][k]).collect();
            let s = skill(&p, &y);
            HeadSkill {
                head: HEAD_NAMES[k].to_string(),
                r2: s.r2,
                rmse: s.rmse,
                mae: s.mae,
                degenerate: s.degenerate,
            }
        })
        .collect();
    let report = TrainReport {
        n_fit: fit.len(),
        n_val: val.len(),
        n_test: test.len(),
        epochs_run: train_loss.len(),
        best_epoch,
        train_loss,
        val_loss,
        test: test_skill,
        test_event_ids: test.iter().map(|&i| ds.event_ids[i]).collect(),
    };
    Ok((est, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::Rng as _;

    fn toy(n: usize, constant: bool) -> (Dataset, ModelConfig) {
        let cfg = ModelConfig {
            seq_len: 4,
            d_model: 8,
            layers: 1,
            heads: 2,
            hidden: 8,
            ffn_dim: 16,
            dropout: 0.0,
            seed: 1,
        };
        let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let w = WeatherTrace::generate(start, 20, 2);
        let mut rng = substream(9, Domain::Misc, 0);
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..n {
            let step = rng.gen_range(8..w.len());
            let key = EventKey {
                restoration_time: w.timestamp(step),
                duration_h: rng.gen_range(0.25..6.0),
                rates: PenetrationRates {
                    r_ev: rng.gen_range(0.05..0.5),
                    r_hp: rng.gen_range(0.05..0.8),
                    r_der: rng.gen_range(0.05..0.3),
                },
            };
            let f = featurize(&key, &w, 4).unwrap();
            let y = if constant {
                [0.3, 0.3, 0.3, 0.3]
            } else {
                let r = key.rates;
                [r.r_ev * key.duration_h.min(6.0) / 3.0, r.r_hp, 0.1 * r.r_der, 0.2]
            };
            features.push(f);
            targets.push(y);
        }
        (
            Dataset {
                event_ids: (0..n as u64).collect(),
                features,
                targets,
            },
            cfg,
        )
    }

    #[test]
    fn learns_a_smooth_target() {
        let (ds, m) = toy(600, false);
        let (_, rep) = train(&ds, &m, &TrainConfig { epochs: 30, seed: 2, ..Default::default() }).unwrap();
        assert!(rep.test[0].r2 > 0.8, "{:?}", rep.test);
        assert!(rep.test[1].r2 > 0.8, "{:?}", rep.test);
        assert!(rep.test[3].degenerate);
        assert_eq!(rep.n_fit + rep.n_val + rep.n_test, 600);
    }

    #[test]
    fn constant_targets_are_flagged_and_fit() {
        let (ds, m) = toy(300, true);
        let (est, rep) = train(&ds, &m, &TrainConfig { epochs: 3, seed: 1, ..Default::default() }).unwrap();
        for h in &rep.test {
            assert!(h.degenerate && h.r2 == 0.0);
            assert!(h.rmse < 1e-3, "{h:?}");
        }
        assert_eq!(est.target_std, [1.0; 4]);
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, m) = toy(250, false);
        let m = ModelConfig { dropout: 0.1, ..m };
        let c = TrainConfig { epochs: 2, seed: 4, ..Default::default() };
        let (a, ra) = train(&ds, &m, &c).unwrap();
        let (b, rb) = train(&ds, &m, &c).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ra, rb);
    }

    #[test]
    fn divergence_returns_last_good_model() {
        let (ds, m) = toy(250, false);
        let c = TrainConfig {
            epochs: 5,
            lr: 1e200,
            ..Default::default()
        };
        match train(&ds, &m, &c) {
            Err(Error::Diverged { epoch, last_good }) => {
                assert!(epoch < 5);
                assert!(last_good.params.iter().all(|v| v.is_finite()));
            }
            other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
        }
    }

    #[test]
    fn small_datasets_are_rejected() {
        let (ds, m) = toy(150, false);
        assert!(train(&ds, &m, &TrainConfig::default()).is_err());
    }
}
