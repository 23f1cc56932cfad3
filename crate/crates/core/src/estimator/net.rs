//! Encoder network over a flat parameter vector, with hand-written backprop.
//!
//! Per event (sequence of `t` steps, `valid` marks non-pad steps):
//!
//! ```text
//! x   = feats W_in + b_in + pos
//! for each layer:
//!   x = x + drop(MHA(LN1(x)))          pad keys masked out
//!   x = x + drop(W2 gelu(W1 LN2(x)))
//! e   = mean over valid steps of LN_f(x)   (LN_f only when layers > 0)
//! y_k = w2_k drop(relu(W1_k e + b1_k)) + b2_k,   k = 0..4
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng as _;

use crate::rng::Rng;

pub const N_HEADS_OUT: usize = 4;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub t: usize,
    pub d_in: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Entry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct HeadIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Parameter layout and the maths over it.
#[derive(Debug, Clone)]
pub struct Net {
    pub dims: Dims,
    pub entries: Vec<Entry>,
    pub size: usize,
    w_in: usize,
    b_in: usize,
    pos: usize,
    layers: Vec<LayerIdx>,
    lnf: Option<(usize, usize)>,
    out: [HeadIdx; N_HEADS_OUT],
}

/// Parameter roles, for initialisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Role {
    /// He-initialised MLP weight with the given fan-in.
    He(usize),
    /// Scaled-uniform attention projection.
    Attention(usize),
    Positional,
    /// Output layer of a head; starts at zero so predictions start at the
    /// target mean.
    Output,
    Gain,
    Bias,
}

impl Net {
    pub fn new(dims: Dims) -> Self {
        let mut entries: Vec<Entry> = Vec::new();
        let mut size = 0usize;
        let mut add = |name: String, rows: usize, cols: usize| {
            entries.push(Entry {
                name,
                rows,
                cols,
                offset: size,
            });
            size += rows * cols;
            entries.len() - 1
        };
        let (d, dm, f, h) = (dims.d_in, dims.d_model, dims.ffn, dims.hidden);
        let w_in = add("input.w".into(), d, dm);
        let b_in = add("input.b".into(), 1, dm);
        let pos = add("positional".into(), dims.t, dm);
        let layers = (0..dims.layers)
            .map(|l| {
                let p = |s: &str| format!("layer{l}.{s}");
                LayerIdx {
                    ln1_g: add(p("ln1.g"), 1, dm),
                    ln1_b: add(p("ln1.b"), 1, dm),
                    wq: add(p("attn.wq"), dm, dm),
                    bq: add(p("attn.bq"), 1, dm),
                    wk: add(p("attn.wk"), dm, dm),
                    wv: add(p("attn.wv"), dm, dm),
                    bv: add(p("attn.bv"), 1, dm),
                    wo: add(p("attn.wo"), dm, dm),
                    bo: add(p("attn.bo"), 1, dm),
                    ln2_g: add(p("ln2.g"), 1, dm),
                    ln2_b: add(p("ln2.b"), 1, dm),
                    w1: add(p("ffn.w1"), dm, f),
                    b1: add(p("ffn.b1"), 1, f),
                    w2: add(p("ffn.w2"), f, dm),
                    b2: add(p("ffn.b2"), 1, dm),
                }
            })
            .collect();
        let lnf = (dims.layers > 0).then(|| (add("final_ln.g".into(), 1, dm), add("final_ln.b".into(), 1, dm)));
        let names = ["ev", "hp", "der", "oth"];
        let out = names.map(|n| HeadIdx {
            w1: add(format!("head.{n}.w1"), dm, h),
            b1: add(format!("head.{n}.b1"), 1, h),
            w2: add(format!("head.{n}.w2"), h, 1),
            b2: add(format!("head.{n}.b2"), 1, 1),
        });
        Self {
            dims,
            entries,
            size,
            w_in,
            b_in,
            pos,
            layers,
            lnf,
            out,
        }
    }

    pub fn role(&self, id: usize) -> Role {
        let e = &self.entries[id];
        let n = e.name.as_str();
        if n == "positional" {
            Role::Positional
        } else if n.ends_with(".g") {
            Role::Gain
        } else if e.rows == 1 {
            Role::Bias
        } else if e.cols == 1 {
            Role::Output
        } else if n.contains("attn.") {
            Role::Attention(e.rows)
        } else {
            Role::He(e.rows)
        }
    }

    fn m<'a>(&self, p: &'a [f64], id: usize) -> ArrayView2<'a, f64> {
        let e = &self.entries[id];
        ArrayView2::from_shape((e.rows, e.cols), &p[e.offset..e.offset + e.len()]).expect("layout")
    }

    fn gm<'a>(&self, g: &'a mut [f64], id: usize) -> ArrayViewMut2<'a, f64> {
        let e = &self.entries[id];
        ArrayViewMut2::from_shape((e.rows, e.cols), &mut g[e.offset..e.offset + e.len()]).expect("layout")
    }

    fn row<'a>(&self, p: &'a [f64], id: usize) -> ndarray::ArrayView1<'a, f64> {
        let e = &self.entries[id];
        ndarray::ArrayView1::from(&p[e.offset..e.offset + e.len()])
    }

    fn grow_add(&self, g: &mut [f64], id: usize, v: &ndarray::ArrayBase<impl ndarray::Data<Elem = f64>, ndarray::Ix1>) {
        let e = &self.entries[id];
        for (dst, src) in g[e.offset..e.offset + e.len()].iter_mut().zip(v.iter()) {
            *dst += src;
        }
    }
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut r, s) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mu = r.sum() / n;
        r.mapv_inplace(|v| v - mu);
        let var = r.iter().map(|v| v * v).sum::<f64>() / n;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let k = *s;
        r.mapv_inplace(|v| v * k);
    }
    let y = &xhat * &g + &b;
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates dg, db.
fn layer_norm_back(dy: &Array2<f64>, c: &LnCache, g: ndarray::ArrayView1<f64>, dg: &mut Array1<f64>, db: &mut Array1<f64>) -> Array2<f64> {
    let n = dy.ncols() as f64;
    *dg += &(dy * &c.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * &g;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = c.xhat.row(i);
        let m1 = dh.sum() / n;
        let m2 = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        let r = c.rstd[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = r * (dh[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn matmul(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    a.dot(b)
}

/// `dst += a^T b`.
fn acc_at_b(dst: &mut ArrayViewMut2<f64>, a: &Array2<f64>, b: &Array2<f64>) {
    general_mat_mul(1.0, &a.t(), b, 1.0, dst);
}

fn dropout_mask(rng: Option<&mut Rng>, rows: usize, cols: usize, rate: f64) -> Option<Array2<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    }))
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    p: Vec<Array2<f64>>,
    o: Array2<f64>,
    att_mask: Option<Array2<f64>>,
    ln2: LnCache,
    b: Array2<f64>,
    u: Array2<f64>,
    gact: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
}

pub struct Cache {
    feats: Array2<f64>,
    valid: Vec<bool>,
    layers: Vec<LayerCache>,
    lnf: Option<LnCache>,
    e: Array1<f64>,
    pre: Vec<Array1<f64>>,
    relu: Vec<Array1<f64>>,
    head_mask: Vec<Option<Array1<f64>>>,
}

impl Cache {
    /// ReLU activation pattern of the heads (for kink detection).
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.pre.iter().flat_map(|a| a.iter().map(|v| *v > 0.0)).collect()
    }
}

impl Net {
    /// Forward pass of one event. `feats` is `t x d_in` (already normalised);
    /// `drop` enables dropout with the given rate.
    pub fn forward(&self, p: &[f64], feats: ArrayView2<f64>, valid: &[bool], mut drop: Option<(&mut Rng, f64)>) -> ([f64; N_HEADS_OUT], Cache) {
        let dims = self.dims;
        let (t, dm) = (dims.t, dims.d_model);
        let dh = dm / dims.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let rate = drop.as_ref().map_or(0.0, |d| d.1);

        let mut x = matmul(&feats, &self.m(p, self.w_in)) + &self.row(p, self.b_in) + &self.m(p, self.pos);
        let mut caches = Vec::with_capacity(self.layers.len());
        for li in &self.layers {
            let (a, ln1) = layer_norm(&x, self.row(p, li.ln1_g), self.row(p, li.ln1_b));
            let q = matmul(&a.view(), &self.m(p, li.wq)) + &self.row(p, li.bq);
            let k = matmul(&a.view(), &self.m(p, li.wk));
            let v = matmul(&a.view(), &self.m(p, li.wv)) + &self.row(p, li.bv);
            let mut o = Array2::zeros((t, dm));
            let mut probs = Vec::with_capacity(dims.heads);
            for h in 0..dims.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let qh = q.slice(cols);
                let kh = k.slice(cols);
                let mut sc = qh.dot(&kh.t()) * scale;
                for mut r in sc.rows_mut() {
                    let mx = r
                        .iter()
                        .zip(valid)
                        .filter(|(_, ok)| **ok)
                        .map(|(v, _)| *v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for (v, ok) in r.iter_mut().zip(valid) {
                        *v = if *ok { (*v - mx).exp() } else { 0.0 };
                        z += *v;
                    }
                    r.mapv_inplace(|v| v / z);
                }
                o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
                probs.push(sc);
            }
            let mut att = matmul(&o.view(), &self.m(p, li.wo)) + &self.row(p, li.bo);
            let att_mask = dropout_mask(drop.as_mut().map(|d| &mut *d.0), t, dm, rate);
            if let Some(mk) = &att_mask {
                att *= mk;
            }
            let hres = &x + &att;
            let (b, ln2) = layer_norm(&hres, self.row(p, li.ln2_g), self.row(p, li.ln2_b));
            let u = matmul(&b.view(), &self.m(p, li.w1)) + &self.row(p, li.b1);
            let gact = u.mapv(gelu);
            let mut fo = matmul(&gact.view(), &self.m(p, li.w2)) + &self.row(p, li.b2);
            let ffn_mask = dropout_mask(drop.as_mut().map(|d| &mut *d.0), t, dm, rate);
            if let Some(mk) = &ffn_mask {
                fo *= mk;
            }
            x = &hres + &fo;
            caches.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                p: probs,
                o,
                att_mask,
                ln2,
                b,
                u,
                gact,
                ffn_mask,
            });
        }
        let (zf, lnf) = match self.lnf {
            Some((g, b)) => {
                let (y, c) = layer_norm(&x, self.row(p, g), self.row(p, b));
                (y, Some(c))
            }
            None => (x, None),
        };
        let nv = valid.iter().filter(|v| **v).count().max(1) as f64;
        let mut e = Array1::zeros(dm);
        for (r, ok) in zf.rows().into_iter().zip(valid) {
            if *ok {
                e += &r;
            }
        }
        e /= nv;

        let mut out = [0.0; N_HEADS_OUT];
        let mut pre = Vec::with_capacity(N_HEADS_OUT);
        let mut relu = Vec::with_capacity(N_HEADS_OUT);
        let mut head_mask = Vec::with_capacity(N_HEADS_OUT);
        for (k, hd) in self.out.iter().enumerate() {
            let a = e.dot(&self.m(p, hd.w1)) + &self.row(p, hd.b1);
            let mut r = a.mapv(|v| v.max(0.0));
            let mask = dropout_mask(drop.as_mut().map(|d| &mut *d.0), 1, dims.hidden, rate).map(|m| m.row(0).to_owned());
            if let Some(mk) = &mask {
                r *= mk;
            }
            out[k] = r.dot(&self.m(p, hd.w2).column(0)) + p[self.entries[hd.b2].offset];
            pre.push(a);
            relu.push(r);
            head_mask.push(mask);
        }
        let cache = Cache {
            feats: feats.to_owned(),
            valid: valid.to_vec(),
            layers: caches,
            lnf,
            e,
            pre,
            relu,
            head_mask,
        };
        (out, cache)
    }

    /// Accumulate into `grad` the gradient of a loss whose derivative with
    /// respect to the outputs is `dout`.
    pub fn backward(&self, p: &[f64], c: &Cache, dout: &[f64; N_HEADS_OUT], grad: &mut [f64]) {
        let dims = self.dims;
        let (t, dm) = (dims.t, dims.d_model);
        let dh = dm / dims.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut de: Array1<f64> = Array1::zeros(dm);
        for (k, hd) in self.out.iter().enumerate() {
            let g = dout[k];
            grad[self.entries[hd.b2].offset] += g;
            {
                let mut w2g = self.gm(grad, hd.w2);
                w2g.column_mut(0).scaled_add(g, &c.relu[k]);
            }
            let mut dr = self.m(p, hd.w2).column(0).to_owned() * g;
            if let Some(mk) = &c.head_mask[k] {
                dr *= mk;
            }
            let da = Array1::from_iter(dr.iter().zip(c.pre[k].iter()).map(|(d, a)| if *a > 0.0 { *d } else { 0.0 }));
            self.grow_add(grad, hd.b1, &da);
            {
                let mut w1g = self.gm(grad, hd.w1);
                for i in 0..dm {
                    w1g.row_mut(i).scaled_add(c.e[i], &da);
                }
            }
            de += &self.m(p, hd.w1).dot(&da);
        }

        let nv = c.valid.iter().filter(|v| **v).count().max(1) as f64;
        let mut dz = Array2::zeros((t, dm));
        for (mut r, ok) in dz.rows_mut().into_iter().zip(&c.valid) {
            if *ok {
                r.assign(&(&de / nv));
            }
        }
        let mut dx = match (self.lnf, &c.lnf) {
            (Some((gi, bi)), Some(lc)) => {
                let mut dg = Array1::zeros(dm);
                let mut db = Array1::zeros(dm);
                let dx = layer_norm_back(&dz, lc, self.row(p, gi), &mut dg, &mut db);
                self.grow_add(grad, gi, &dg);
                self.grow_add(grad, bi, &db);
                dx
            }
            _ => dz,
        };

        for (li, lc) in self.layers.iter().zip(&c.layers).rev() {
            // Feed-forward branch.
            let mut dfo = dx.clone();
            if let Some(mk) = &lc.ffn_mask {
                dfo *= mk;
            }
            acc_at_b(&mut self.gm(grad, li.w2), &lc.gact, &dfo);
            self.grow_add(grad, li.b2, &dfo.sum_axis(Axis(0)));
            let dg = dfo.dot(&self.m(p, li.w2).t());
            let du = &dg * &lc.u.mapv(gelu_grad);
            acc_at_b(&mut self.gm(grad, li.w1), &lc.b, &du);
            self.grow_add(grad, li.b1, &du.sum_axis(Axis(0)));
            let db_in = du.dot(&self.m(p, li.w1).t());
            let mut g2 = Array1::zeros(dm);
            let mut b2 = Array1::zeros(dm);
            let dh_res = &dx + &layer_norm_back(&db_in, &lc.ln2, self.row(p, li.ln2_g), &mut g2, &mut b2);
            self.grow_add(grad, li.ln2_g, &g2);
            self.grow_add(grad, li.ln2_b, &b2);

            // Attention branch.
            let mut datt = dh_res.clone();
            if let Some(mk) = &lc.att_mask {
                datt *= mk;
            }
            acc_at_b(&mut self.gm(grad, li.wo), &lc.o, &datt);
            self.grow_add(grad, li.bo, &datt.sum_axis(Axis(0)));
            let d_o = datt.dot(&self.m(p, li.wo).t());
            let mut dq = Array2::zeros((t, dm));
            let mut dk = Array2::zeros((t, dm));
            let mut dv = Array2::zeros((t, dm));
            for h in 0..dims.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let ph = &lc.p[h];
                let doh = d_o.slice(cols);
                let dp = doh.dot(&lc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&ph.t().dot(&doh));
                let mut ds = Array2::zeros((t, t));
                for i in 0..t {
                    let dot: f64 = (0..t).map(|j| dp[[i, j]] * ph[[i, j]]).sum();
                    for j in 0..t {
                        ds[[i, j]] = ph[[i, j]] * (dp[[i, j]] - dot) * scale;
                    }
                }
                dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
            }
            acc_at_b(&mut self.gm(grad, li.wq), &lc.a, &dq);
            self.grow_add(grad, li.bq, &dq.sum_axis(Axis(0)));
            acc_at_b(&mut self.gm(grad, li.wk), &lc.a, &dk);
            acc_at_b(&mut self.gm(grad, li.wv), &lc.a, &dv);
            self.grow_add(grad, li.bv, &dv.sum_axis(Axis(0)));
            let da = dq.dot(&self.m(p, li.wq).t()) + dk.dot(&self.m(p, li.wk).t()) + dv.dot(&self.m(p, li.wv).t());
            let mut g1 = Array1::zeros(dm);
            let mut b1 = Array1::zeros(dm);
            dx = &dh_res + &layer_norm_back(&da, &lc.ln1, self.row(p, li.ln1_g), &mut g1, &mut b1);
            self.grow_add(grad, li.ln1_g, &g1);
            self.grow_add(grad, li.ln1_b, &b1);
        }

        acc_at_b(&mut self.gm(grad, self.w_in), &c.feats, &dx);
        self.grow_add(grad, self.b_in, &dx.sum_axis(Axis(0)));
        let e = &self.entries[self.pos];
        for (dst, src) in grad[e.offset..e.offset + e.len()].iter_mut().zip(dx.iter()) {
            *dst += src;
        }
    }

    /// Fresh parameters.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mut p = vec![0.0; self.size];
        for (id, e) in self.entries.iter().enumerate() {
            let dst = &mut p[e.offset..e.offset + e.len()];
            match self.role(id) {
                Role::He(fan_in) => {
                    let sd = (2.0 / fan_in as f64).sqrt();
                    for v in dst {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = sd * z;
                    }
                }
                Role::Attention(fan_in) => {
                    let a = (3.0 / fan_in as f64).sqrt();
                    for v in dst {
                        *v = rng.gen_range(-a..a);
                    }
                }
                Role::Positional => {
                    for v in dst {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = 0.02 * z;
                    }
                }
                Role::Output => dst.fill(0.0),
                Role::Gain => dst.fill(1.0),
                Role::Bias => dst.fill(0.0),
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};

    fn dims() -> Dims {
        Dims {
            t: 5,
            d_in: 3,
            d_model: 8,
            layers: 2,
            heads: 2,
            ffn: 16,
            hidden: 6,
        }
    }

    fn feats(rng: &mut Rng, t: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((t, d), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn layout_is_contiguous() {
        let net = Net::new(dims());
        let mut off = 0;
        for e in &net.entries {
            assert_eq!(e.offset, off);
            off += e.len();
        }
        assert_eq!(off, net.size);
        assert!(net.entries.iter().all(|e| e.name != "attn.bk"));
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let net = Net::new(dims());
        let p = vec![0.0; net.size];
        let mut rng = substream(1, Domain::Misc, 0);
        let f = feats(&mut rng, 5, 3);
        let (out, _) = net.forward(&p, f.view(), &[true; 5], None);
        assert_eq!(out, [0.0; 4]);
    }

    #[test]
    fn pad_content_does_not_leak() {
        let net = Net::new(dims());
        let mut rng = substream(2, Domain::Misc, 0);
        let p = net.init(&mut rng);
        let mut f = feats(&mut rng, 5, 3);
        let valid = [false, false, true, true, true];
        let (a, _) = net.forward(&p, f.view(), &valid, None);
        f.row_mut(0).fill(123.0);
        f.row_mut(1).fill(-7.0);
        let (b, _) = net.forward(&p, f.view(), &valid, None);
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() <= 1e-10);
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for u in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8);
        }
    }
}
