//! Tree growing shared by the causal forest and the nuisance regressions.

use rand::seq::index::sample;

use crate::rng::Rng;

/// Sufficient statistics of a sample for a one-variable regression of y on x.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub n: f64,
    pub sx: f64,
    pub sy: f64,
    pub sxx: f64,
    pub sxy: f64,
}

impl Moments {
    #[inline]
    pub fn add(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.sxy += x * y;
    }

    #[inline]
    fn minus(&self, o: &Moments) -> Moments {
        Moments {
            n: self.n - o.n,
            sx: self.sx - o.sx,
            sy: self.sy - o.sy,
            sxx: self.sxx - o.sxx,
            sxy: self.sxy - o.sxy,
        }
    }

    /// Centered sum of squares of x.
    #[inline]
    pub fn sxx_c(&self) -> f64 {
        self.sxx - self.sx * self.sx / self.n
    }

    /// Least-squares slope of y on x, if x varies.
    #[inline]
    pub fn slope(&self) -> Option<f64> {
        if self.n < 2.0 {
            return None;
        }
        let vxx = self.sxx_c();
        if !(vxx > 1e-12 * self.n) {
            return None;
        }
        Some((self.sxy - self.sx * self.sy / self.n) / vxx)
    }
}

/// Which heterogeneity a split should maximise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// `n_L n_R (tau_L - tau_R)^2 / n^2` with tau the child slope of y on x.
    Slope,
    /// Reduction in the sum of squared errors of y.
    Mean,
}

pub const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Estimation-sample moments; for nodes whose own sample is degenerate,
    /// those of the nearest non-degenerate ancestor.
    pub m: Moments,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(&self, z: &[f64]) -> &Node {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return n;
            }
            i = if z[n.feature as usize] <= n.threshold {
                n.left
            } else {
                n.right
            } as usize;
        }
    }
}

/// Column-major training data.
pub struct Columns<'a> {
    pub z: &'a [Vec<f64>],
    pub x: &'a [f64],
    pub y: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub min_leaf: usize,
    pub max_depth: usize,
    pub mtry: usize,
    pub criterion: Criterion,
}

/// Grow one tree. Splits read only `structure`; `estimation` rows are routed
/// down the finished splits to fill the node moments.
pub fn grow(data: &Columns, structure: Vec<u32>, estimation: &[u32], p: &GrowParams, rng: &mut Rng) -> Tree {
    let dim = data.z.len();
    let mut nodes: Vec<Node> = Vec::new();
    let mut splits: Vec<(u32, usize)> = Vec::new(); // (node, depth) awaiting split
    let mut members: Vec<Vec<u32>> = Vec::new();
    nodes.push(Node {
        feature: LEAF,
        threshold: 0.0,
        left: LEAF,
        right: LEAF,
        m: Moments::default(),
    });
    members.push(structure);
    splits.push((0, 0));
    let mut buf: Vec<(f64, u32)> = Vec::new();
    while let Some((id, depth)) = splits.pop() {
        let idx = std::mem::take(&mut members[id as usize]);
        if depth >= p.max_depth || idx.len() < 2 * p.min_leaf {
            continue;
        }
        let mut feats: Vec<usize> = sample(rng, dim, p.mtry.min(dim)).into_vec();
        feats.sort_unstable();
        let Some((f, thr)) = best_split(data, &idx, &feats, p, &mut buf) else {
            continue;
        };
        let (l, r): (Vec<u32>, Vec<u32>) = idx.iter().partition(|&&i| data.z[f][i as usize] <= thr);
        let li = nodes.len() as u32;
        for _ in 0..2 {
            nodes.push(Node {
                feature: LEAF,
                threshold: 0.0,
                left: LEAF,
                right: LEAF,
                m: Moments::default(),
            });
        }
        let n = &mut nodes[id as usize];
        n.feature = f as u32;
        n.threshold = thr;
        n.left = li;
        n.right = li + 1;
        members.push(l);
        members.push(r);
        splits.push((li + 1, depth + 1));
        splits.push((li, depth + 1));
    }

    // Route estimation rows.
    for &i in estimation {
        let i = i as usize;
        let mut k = 0usize;
        loop {
            nodes[k].m.add(data.x[i], data.y[i]);
            let n = &nodes[k];
            if n.is_leaf() {
                break;
            }
            k = if data.z[n.feature as usize][i] <= n.threshold {
                n.left
            } else {
                n.right
            } as usize;
        }
    }
    // Degenerate nodes inherit from their parent (children always follow parents).
    let usable = |m: &Moments| match p.criterion {
        Criterion::Slope => m.slope().is_some(),
        Criterion::Mean => m.n > 0.0,
    };
    for k in 0..nodes.len() {
        if nodes[k].is_leaf() {
            continue;
        }
        let parent = nodes[k].m;
        for c in [nodes[k].left, nodes[k].right] {
            if !usable(&nodes[c as usize].m) {
                nodes[c as usize].m = parent;
            }
        }
    }
    Tree { nodes }
}

/// Best `(feature, threshold)` over candidate features; ties keep the lowest
/// feature index, then the lowest threshold.
fn best_split(
    data: &Columns,
    idx: &[u32],
    feats: &[usize],
    p: &GrowParams,
    buf: &mut Vec<(f64, u32)>,
) -> Option<(usize, f64)> {
    let mut total = Moments::default();
    for &i in idx {
        total.add(data.x[i as usize], data.y[i as usize]);
    }
    let n = total.n;
    let base = match p.criterion {
        Criterion::Mean => total.sy * total.sy / n,
        Criterion::Slope => 0.0,
    };
    let mut best: Option<(f64, usize, f64)> = None;
    for &f in feats {
        buf.clear();
        buf.extend(idx.iter().map(|&i| (data.z[f][i as usize], i)));
        buf.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut left = Moments::default();
        for k in 0..buf.len() - 1 {
            let i = buf[k].1 as usize;
            left.add(data.x[i], data.y[i]);
            if buf[k].0 == buf[k + 1].0 {
                continue;
            }
            let nl = k + 1;
            let nr = buf.len() - nl;
            if nl < p.min_leaf || nr < p.min_leaf {
                continue;
            }
            let right = total.minus(&left);
            let gain = match p.criterion {
                Criterion::Mean => left.sy * left.sy / left.n + right.sy * right.sy / right.n - base,
                Criterion::Slope => match (left.slope(), right.slope()) {
                    (Some(a), Some(b)) => left.n * right.n * (a - b) * (a - b) / (n * n),
                    _ => continue,
                },
            };
            if gain > 1e-14 && best.map_or(true, |b| gain > b.0) {
                best = Some((gain, f, 0.5 * (buf[k].0 + buf[k + 1].0)));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use rand::Rng as _;

    fn toy(n: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let mut rng = substream(1, Domain::Misc, 0);
        let z0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| if z0[i] < 0.0 { 2.0 } else { -1.0 } * x[i] + 0.05 * rng.gen::<f64>())
            .collect();
        (vec![z0, z1], x, y)
    }

    #[test]
    fn slope_split_finds_the_effect_boundary() {
        let (z, x, y) = toy(400);
        let cols = Columns { z: &z, x: &x, y: &y };
        let p = GrowParams {
            min_leaf: 20,
            max_depth: 1,
            mtry: 2,
            criterion: Criterion::Slope,
        };
        let idx: Vec<u32> = (0..400).collect();
        let t = grow(&cols, idx.clone(), &idx, &p, &mut substream(2, Domain::Misc, 0));
        assert_eq!(t.nodes[0].feature, 0);
        assert!(t.nodes[0].threshold.abs() < 0.05);
        let l = t.leaf(&[-0.5, 0.0]).m.slope().unwrap();
        let r = t.leaf(&[0.5, 0.0]).m.slope().unwrap();
        assert!((l - 2.0).abs() < 0.1 && (r + 1.0).abs() < 0.1);
    }

    #[test]
    fn structure_never_reads_estimation_outcomes() {
        let (z, x, mut y) = toy(400);
        let structure: Vec<u32> = (0..200).collect();
        let estimation: Vec<u32> = (200..400).collect();
        let p = GrowParams {
            min_leaf: 10,
            max_depth: 8,
            mtry: 2,
            criterion: Criterion::Slope,
        };
        let a = grow(&Columns { z: &z, x: &x, y: &y }, structure.clone(), &estimation, &p, &mut substream(3, Domain::Misc, 0));
        for i in 200..400 {
            y[i] = f64::NAN;
        }
        let b = grow(&Columns { z: &z, x: &x, y: &y }, structure, &estimation, &p, &mut substream(3, Domain::Misc, 0));
        assert_eq!(a.nodes.len(), b.nodes.len());
        for (u, v) in a.nodes.iter().zip(&b.nodes) {
            assert_eq!((u.feature, u.threshold.to_bits(), u.left, u.right), (v.feature, v.threshold.to_bits(), v.left, v.right));
        }
    }

    #[test]
    fn degenerate_leaves_inherit_parent_moments() {
        // Structure rows 0..80 vary in x everywhere; estimation rows 80..160
        // have constant x wherever z >= 20.
        let z = vec![(0..160).map(|i| (i % 40) as f64).collect::<Vec<_>>()];
        let x: Vec<f64> = (0..160)
            .map(|i| if i < 80 || i % 40 < 20 { ((i * 7) % 5) as f64 } else { 1.0 })
            .collect();
        let y: Vec<f64> = (0..160).map(|i| x[i] * if i % 40 < 20 { 1.0 } else { 3.0 }).collect();
        let cols = Columns { z: &z, x: &x, y: &y };
        let p = GrowParams {
            min_leaf: 5,
            max_depth: 3,
            mtry: 1,
            criterion: Criterion::Slope,
        };
        let structure: Vec<u32> = (0..80).collect();
        let estimation: Vec<u32> = (80..160).collect();
        let t = grow(&cols, structure, &estimation, &p, &mut substream(4, Domain::Misc, 0));
        assert!(t.nodes.len() > 1);
        for n in &t.nodes {
            assert!(n.m.slope().is_some());
        }
        // A right-side leaf has no x variation of its own, so it carries an ancestor's fit.
        let right = t.leaf(&[35.0]);
        assert!(right.m.n > 0.0);
    }
}
