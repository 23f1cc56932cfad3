use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::net::{Dims, Net, Role, N_HEADS_OUT};
use crate::error::{Error, Result};
use crate::rng::{substream, Domain, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    /// Random small models to check.
    pub n_probes: usize,
    /// Largest initial central-difference step; Ridders' extrapolation shrinks it.
    pub h: f64,
    /// Sampled coordinates per parameter tensor and probe.
    pub coords_per_tensor: usize,
    /// Use encoder-free models (input projection, pooling, heads only).
    pub linear_only: bool,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_probes: 20,
            h: 1e-2,
            coords_per_tensor: 4,
            linear_only: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorError {
    pub probe: usize,
    pub tensor: String,
    /// `|g_analytic - g_fd| / (|g_analytic| + |g_fd|)` over the sampled coordinates.
    pub rel_err: f64,
    pub coords: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub tensors: Vec<TensorError>,
}

struct Probe {
    net: Net,
    params: Vec<f64>,
    x: Vec<Array2<f64>>,
    valid: Vec<Vec<bool>>,
    y: Vec<[f64; 4]>,
}

impl Probe {
    fn random(rng: &mut Rng, linear_only: bool) -> Self {
        let heads = [1usize, 2, 4][rng.gen_range(0..3)];
        let per_head = rng.gen_range(1..=16 / heads);
        let dims = Dims {
            t: rng.gen_range(2..=8),
            d_in: rng.gen_range(2..=6),
            d_model: heads * per_head,
            layers: if linear_only { 0 } else { rng.gen_range(1..=2) },
            heads,
            ffn: rng.gen_range(2..=16),
            hidden: rng.gen_range(2..=8),
        };
        let net = Net::new(dims);
        let mut params = net.init(rng);
        for (id, e) in net.entries.iter().enumerate() {
            if matches!(net.role(id), Role::Gain | Role::Bias | Role::Positional | Role::Output) {
                for v in &mut params[e.offset..e.offset + e.len()] {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += 0.3 * z;
                }
            }
        }
        let batch = 3;
        let mut x = Vec::new();
        let mut valid = Vec::new();
        let mut y = Vec::new();
        for _ in 0..batch {
            x.push(Array2::from_shape_fn((dims.t, dims.d_in), |_| StandardNormal.sample(rng)));
            let pad = rng.gen_range(0..dims.t);
            valid.push((0..dims.t).map(|k| k >= pad).collect());
            y.push(std::array::from_fn(|_| StandardNormal.sample(rng)));
        }
        Self { net, params, x, valid, y }
    }

    /// Loss and the ReLU activation pattern at `p`.
    fn loss(&self, p: &[f64]) -> (f64, Vec<bool>) {
        let mut l = 0.0;
        let mut pattern = Vec::new();
        for ((x, v), y) in self.x.iter().zip(&self.valid).zip(&self.y) {
            let (o, c) = self.net.forward(p, x.view(), v, None);
            l += (0..N_HEADS_OUT).map(|k| (o[k] - y[k]).powi(2)).sum::<f64>();
            pattern.extend(c.relu_pattern());
        }
        (l / self.x.len() as f64, pattern)
    }

    fn grad(&self) -> Vec<f64> {
        let b = self.x.len() as f64;
        let mut g = vec![0.0; self.net.size];
        for ((x, v), y) in self.x.iter().zip(&self.valid).zip(&self.y) {
            let (o, c) = self.net.forward(&self.params, x.view(), v, None);
            let dout = std::array::from_fn(|k| 2.0 * (o[k] - y[k]) / b);
            self.net.backward(&self.params, &c, &dout, &mut g);
        }
        g
    }
}

/// Ridders' extrapolation of central differences of the loss in
/// coordinate `i`, starting at step `h`: (estimate, error estimate). The
/// error includes the roundoff floor `ε·|loss|/h` of the step used, since
/// differences of nearly equal losses can agree exactly without being right.
/// `None` if any evaluation changes the ReLU pattern.
fn ridders(pr: &Probe, p: &mut [f64], i: usize, h: f64, loss: f64, pattern: &[bool]) -> Option<(f64, f64)> {
    const SHRINK: f64 = 1.4;
    const N: usize = 10;
    let orig = p[i];
    let mut central = |h: f64| {
        p[i] = orig + h;
        let (lp, pp) = pr.loss(p);
        p[i] = orig - h;
        let (lm, pm) = pr.loss(p);
        p[i] = orig;
        (pp == pattern && pm == pattern).then(|| (lp - lm) / (2.0 * h))
    };
    let mut a = [[0.0; N]; N];
    let mut h = h;
    a[0][0] = central(h)?;
    let mut best = a[0][0];
    let mut err = f64::INFINITY;
    for k in 1..N {
        h /= SHRINK;
        a[0][k] = central(h)?;
        let mut fac = SHRINK * SHRINK;
        for j in 1..=k {
            a[j][k] = (a[j - 1][k] * fac - a[j - 1][k - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (a[j][k] - a[j - 1][k]).abs().max((a[j][k] - a[j - 1][k - 1]).abs())
                + f64::EPSILON * loss.abs() / h;
            if e <= err {
                err = e;
                best = a[j][k];
            }
        }
        // Higher orders stopped helping: roundoff has taken over.
        if (a[k][k] - a[k - 1][k - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    Some((best, err))
}

/// Ridders from the initial step and two successively 10× smaller ones,
/// keeping the estimate with the smallest error; starts whose steps flip a
/// ReLU are dropped. Large steps beat roundoff on tiny gradients; small ones
/// resolve sharp features such as a layer norm over nearly equal inputs.
fn finite_difference(pr: &Probe, p: &mut [f64], i: usize, h: f64, pattern: &[bool]) -> Option<f64> {
    let loss = pr.loss(p).0;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..3 {
        let Some((d, e)) = ridders(pr, p, i, h * 0.1f64.powi(k), loss, pattern) else {
            continue;
        };
        if best.map_or(true, |(_, be)| e < be) {
            best = Some((d, e));
        }
    }
    best.map(|(d, _)| d)
}

/// Compare analytic gradients with extrapolated central differences on random
/// small models, tensor by tensor. Coordinates whose perturbation flips a
/// ReLU are resampled, since the loss is not differentiable there.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.n_probes == 0 || cfg.coords_per_tensor == 0 || !(cfg.h > 0.0) {
        return Err(Error::invalid("n_probes and coords_per_tensor must be >= 1, h > 0"));
    }
    let mut tensors = Vec::new();
    for probe in 0..cfg.n_probes {
        let mut rng = substream(cfg.seed, Domain::Misc, probe as u64);
        let pr = Probe::random(&mut rng, cfg.linear_only);
        let (_, base_pattern) = pr.loss(&pr.params);
        let g = pr.grad();
        let mut p = pr.params.clone();
        for e in &pr.net.entries {
            let mut num = 0.0;
            let mut den_a = 0.0;
            let mut den_f = 0.0;
            let mut coords = 0;
            let mut tries = 0;
            while coords < cfg.coords_per_tensor.min(e.len()) && tries < 20 * cfg.coords_per_tensor {
                tries += 1;
                let i = e.offset + rng.gen_range(0..e.len());
                let Some(fd) = finite_difference(&pr, &mut p, i, cfg.h, &base_pattern) else {
                    continue;
                };
                num += (g[i] - fd).powi(2);
                den_a += g[i] * g[i];
                den_f += fd * fd;
                coords += 1;
            }
            let den = den_a.sqrt() + den_f.sqrt();
            let rel_err = if den > 1e-10 { num.sqrt() / den } else { num.sqrt() };
            tensors.push(TensorError {
                probe,
                tensor: e.name.clone(),
                rel_err,
                coords,
            });
        }
    }
    let worst = tensors
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .expect("at least one tensor");
    Ok(GradCheckReport {
        max_rel_err: worst.rel_err,
        worst_tensor: format!("probe {} {}", worst.probe, worst.tensor),
        tensors,
    })
}
