//! Multi-task sequence estimator of the four surge components.
//!
//! Each event becomes a short sequence of weather/calendar steps ending at
//! restoration (see [`features`]); a small pre-norm transformer encoder pools
//! it into one embedding that feeds four regression heads (EV, HP, DER,
//! residual). Backprop is hand-written in [`net`] and verified by
//! [`grad_check`].

use std::path::Path;

use chrono::{Duration, NaiveDateTime, Timelike};
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::metrics::PenetrationRates;
use crate::rng::{substream, Domain};

pub mod features;
mod gradcheck;
pub mod net;
mod train;

pub use features::{calendar, constant_weather, featurize, EventFeatures, EventKey, Normalizer, FEATURE_DIM, FEATURE_NAMES};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, TensorError};
pub use train::{build_dataset, train, Dataset, HeadSkill, TrainConfig, TrainReport};

use net::{Dims, Net, N_HEADS_OUT};

pub const HEAD_NAMES: [&str; N_HEADS_OUT] = ["ev", "hp", "der", "oth"];
const MAGIC: &[u8] = b"SGTX1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Steps of 15 min ending at restoration.
    pub seq_len: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// Hidden width of each output head.
    pub hidden: usize,
    /// Hidden width of the position-wise feed-forward block.
    pub ffn_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 32,
            d_model: 64,
            layers: 2,
            heads: 4,
            hidden: 64,
            ffn_dim: 128,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.d_model == 0 || self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.ffn_dim == 0 {
            return Err(Error::invalid("seq_len, d_model, layers, heads, hidden and ffn_dim must be >= 1"));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    fn dims(&self) -> Dims {
        Dims {
            t: self.seq_len,
            d_in: FEATURE_DIM,
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            ffn: self.ffn_dim,
            hidden: self.hidden,
        }
    }
}

/// Trained model: weights plus the normalisation it was trained under.
/// Heads predict standardised targets; outputs are mapped back with
/// `target_mean + target_std * head`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurgeEstimator {
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub target_mean: [f64; N_HEADS_OUT],
    pub target_std: [f64; N_HEADS_OUT],
    pub params: Vec<f64>,
}

impl SurgeEstimator {
    /// Freshly initialised weights.
    pub fn new(config: ModelConfig, normalizer: Normalizer, target_mean: [f64; 4], target_std: [f64; 4]) -> Result<Self> {
        config.validate()?;
        let net = Net::new(config.dims());
        let params = net.init(&mut substream(config.seed, Domain::Init, 0));
        Ok(Self {
            config,
            normalizer,
            target_mean,
            target_std,
            params,
        })
    }

    /// All weights and biases zero, identity normalisation.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = Net::new(config.dims()).size;
        Ok(Self {
            config,
            normalizer: Normalizer::identity(),
            target_mean: [0.0; 4],
            target_std: [1.0; 4],
            params: vec![0.0; n],
        })
    }

    pub fn net(&self) -> Net {
        Net::new(self.config.dims())
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn check(&self, f: &EventFeatures) -> Result<()> {
        let t = self.config.seq_len;
        if f.t != t || f.valid.len() != t {
            return Err(Error::Shape {
                what: "sequence length",
                expected: t,
                got: f.valid.len(),
            });
        }
        if f.values.len() != t * FEATURE_DIM {
            return Err(Error::Shape {
                what: "feature dimension",
                expected: FEATURE_DIM,
                got: f.values.len() / t,
            });
        }
        if f.n_valid() == 0 {
            return Err(Error::invalid("event has no non-pad steps"));
        }
        Ok(())
    }

    fn head_outputs(&self, net: &Net, f: &EventFeatures) -> [f64; 4] {
        let x = self.normalizer.apply(f);
        let view = ArrayView2::from_shape((f.t, FEATURE_DIM), &x).expect("checked shape");
        net.forward(&self.params, view, &f.valid, None).0
    }

    /// Eval-mode predictions `[s_ev, s_hp, s_der, s_oth]` per event.
    pub fn predict(&self, batch: &[EventFeatures]) -> Result<Vec<[f64; 4]>> {
        for f in batch {
            self.check(f)?;
        }
        let net = self.net();
        Ok(batch
            .par_iter()
            .map(|f| {
                let o = self.head_outputs(&net, f);
                std::array::from_fn(|k| self.target_mean[k] + self.target_std[k] * o[k])
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = Writer::new(MAGIC, VERSION);
        for v in [c.seq_len, c.d_model, c.layers, c.heads, c.hidden, c.ffn_dim] {
            w.u64(v as u64);
        }
        w.f64(c.dropout);
        w.u64(c.seed);
        w.u64(FEATURE_DIM as u64);
        w.f64s(&self.normalizer.mean);
        w.f64s(&self.normalizer.std);
        w.f64s(&self.target_mean);
        w.f64s(&self.target_std);
        w.f64s(&self.params);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::new(buf, MAGIC)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported estimator version {version}")));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u64()? as usize;
        }
        let config = ModelConfig {
            seq_len: dims[0],
            d_model: dims[1],
            layers: dims[2],
            heads: dims[3],
            hidden: dims[4],
            ffn_dim: dims[5],
            dropout: r.f64()?,
            seed: r.u64()?,
        };
        config.validate().map_err(|e| Error::Format(e.to_string()))?;
        let d_in = r.u64()? as usize;
        if d_in != FEATURE_DIM {
            return Err(Error::Format(format!(
                "model expects {d_in} features per step, this build produces {FEATURE_DIM}"
            )));
        }
        let mean = r.f64s()?;
        let std = r.f64s()?;
        let tm = r.f64s()?;
        let ts = r.f64s()?;
        let params = r.f64s()?;
        r.finish()?;
        let expected = Net::new(config.dims()).size;
        if mean.len() != FEATURE_DIM || std.len() != FEATURE_DIM || tm.len() != 4 || ts.len() != 4 || params.len() != expected {
            return Err(Error::Format("tensor sizes do not match the stored configuration".into()));
        }
        Ok(Self {
            config,
            normalizer: Normalizer { mean, std },
            target_mean: tm.try_into().expect("len 4"),
            target_std: ts.try_into().expect("len 4"),
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// Sum over heads of the batch-mean squared error.
pub fn loss(pred: &[[f64; 4]], target: &[[f64; 4]]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape {
            what: "batch size",
            expected: target.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = pred.len() as f64;
    Ok((0..N_HEADS_OUT)
        .map(|k| pred.iter().zip(target).map(|(p, t)| (p[k] - t[k]).powi(2)).sum::<f64>() / n)
        .sum())
}

/// Covariates of a hypothetical event with constant weather.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPoint {
    pub restoration_time: NaiveDateTime,
    pub duration_h: f64,
    pub temp_c: f64,
    pub ghi: f64,
    pub precip_water_mm: f64,
    pub r_ev: f64,
    pub r_hp: f64,
    pub r_der: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DurationH,
    Hour,
    TempC,
    Ghi,
    REv,
    RHp,
    RDer,
}

impl ScenarioPoint {
    pub fn with(&self, axis: SweepAxis, v: f64) -> Result<Self> {
        if !v.is_finite() {
            return Err(Error::invalid("sweep value must be finite"));
        }
        let mut p = *self;
        match axis {
            SweepAxis::DurationH => p.duration_h = v,
            SweepAxis::Hour => {
                if !(0.0..24.0).contains(&v) {
                    return Err(Error::invalid("hour must lie in [0, 24)"));
                }
                let slot = (v * 4.0).floor() as i64;
                let midnight = self.restoration_time - Duration::seconds(self.restoration_time.num_seconds_from_midnight() as i64);
                p.restoration_time = midnight + Duration::minutes(15 * slot);
            }
            SweepAxis::TempC => p.temp_c = v,
            SweepAxis::Ghi => p.ghi = v,
            SweepAxis::REv => p.r_ev = v,
            SweepAxis::RHp => p.r_hp = v,
            SweepAxis::RDer => p.r_der = v,
        }
        Ok(p)
    }

    pub fn features(&self, t: usize) -> Result<EventFeatures> {
        let w = constant_weather(self.restoration_time, t, self.temp_c, self.ghi, self.precip_water_mm);
        featurize(
            &EventKey {
                restoration_time: self.restoration_time,
                duration_h: self.duration_h,
                rates: PenetrationRates {
                    r_ev: self.r_ev,
                    r_hp: self.r_hp,
                    r_der: self.r_der,
                },
            },
            &w,
            t,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub s_ev: f64,
    pub s_hp: f64,
    pub s_der: f64,
    pub s_oth: f64,
}

/// Predictions along one covariate with the others held at `base`.
pub fn sweep(model: &SurgeEstimator, base: &ScenarioPoint, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    let feats = values
        .iter()
        .map(|v| base.with(axis, *v)?.features(model.config.seq_len))
        .collect::<Result<Vec<_>>>()?;
    let pred = model.predict(&feats)?;
    Ok(values
        .iter()
        .zip(pred)
        .map(|(v, p)| SweepRow {
            value: *v,
            s_ev: p[0],
            s_hp: p[1],
            s_der: p[2],
            s_oth: p[3],
        })
        .collect())
}
