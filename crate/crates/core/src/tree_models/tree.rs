//! Exact-greedy CART regression tree.
//!
//! Each node keeps, per feature, its samples in ascending feature order; a
//! split stably partitions those lists so children stay sorted without a
//! re-sort. Candidate thresholds are midpoints between consecutive distinct
//! values and the split maximising the squared-error reduction
//! `nL·nR/n · (ȳL − ȳR)²` wins. Ties go to the lower feature index, then the
//! lower threshold.

use rand::seq::index;
use rand::Rng;

use super::ModelError;
use crate::features::Matrix;

pub(crate) const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of the allowed features tried at each node.
    pub max_features: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 15, min_samples_leaf: 1, max_features: 1.0 }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.min_samples_leaf == 0 || !(self.max_features > 0.0 && self.max_features <= 1.0) {
            return Err(ModelError::Params(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Flattened binary tree in preorder. Internal nodes send `x[f] <= threshold` left.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub(crate) feature: Vec<u32>,
    pub(crate) threshold: Vec<f64>,
    pub(crate) left: Vec<u32>,
    pub(crate) right: Vec<u32>,
    pub(crate) value: Vec<f64>,
}

impl RegressionTree {
    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.feature.iter().filter(|&&f| f == LEAF).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, i: usize) -> usize {
            if t.feature[i] == LEAF {
                0
            } else {
                1 + walk(t, t.left[i] as usize).max(walk(t, t.right[i] as usize))
            }
        }
        walk(self, 0)
    }

    /// `(feature, threshold)` of every internal node, preorder.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        (0..self.n_nodes()).filter(|&i| self.feature[i] != LEAF).map(|i| (self.feature[i] as usize, self.threshold[i])).collect()
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        (0..self.n_nodes()).filter(|&i| self.feature[i] == LEAF).map(|i| self.value[i]).collect()
    }

    #[inline]
    pub fn predict_with(&self, x: impl Fn(usize) -> f64) -> f64 {
        let mut i = 0;
        while self.feature[i] != LEAF {
            i = if x(self.feature[i] as usize) <= self.threshold[i] { self.left[i] } else { self.right[i] } as usize;
        }
        self.value[i]
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict_with(|f| row[f])
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict_with(|f| x.get(i, f))).collect()
    }
}

/// Fits on every row once, all features allowed.
pub fn fit_tree<R: Rng>(x: &Matrix, y: &[f64], params: &TreeParams, rng: &mut R) -> Result<RegressionTree, ModelError> {
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    let all: Vec<usize> = (0..x.n_features()).collect();
    fit_samples(x, y, &rows, &all, params, rng)
}

/// Fits on `rows` (repeats allowed, as from a bootstrap) using only the
/// `allowed` feature columns.
pub(crate) fn fit_samples<R: Rng>(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    allowed: &[usize],
    params: &TreeParams,
    rng: &mut R,
) -> Result<RegressionTree, ModelError> {
    params.validate()?;
    if y.len() != x.n_rows() {
        return Err(ModelError::Shape(format!("{} rows of features, {} targets", x.n_rows(), y.len())));
    }
    if rows.is_empty() || allowed.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if let Some(&i) = rows.iter().find(|&&i| !y[i].is_finite()) {
        return Err(ModelError::Shape(format!("non-finite target at row {i}")));
    }
    let m = rows.len();
    let xs: Vec<Vec<f64>> = allowed.iter().map(|&f| rows.iter().map(|&i| x.get(i, f)).collect()).collect();
    let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let order: Vec<Vec<u32>> = xs
        .iter()
        .map(|col| {
            let mut o: Vec<u32> = (0..m as u32).collect();
            o.sort_unstable_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            o
        })
        .collect();
    let mut g = Grower {
        xs,
        ys,
        order,
        allowed,
        params,
        goes_left: vec![false; m],
        scratch: Vec::with_capacity(m),
        tree: RegressionTree { feature: vec![], threshold: vec![], left: vec![], right: vec![], value: vec![] },
    };
    g.grow(0, m, 0, rng);
    Ok(g.tree)
}

struct Grower<'a> {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    order: Vec<Vec<u32>>,
    allowed: &'a [usize],
    params: &'a TreeParams,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    tree: RegressionTree,
}

struct Split {
    slot: usize,
    threshold: f64,
    gain: f64,
    n_left: usize,
}

impl Grower<'_> {
    fn push(&mut self, value: f64) -> usize {
        let t = &mut self.tree;
        t.feature.push(LEAF);
        t.threshold.push(0.0);
        t.left.push(0);
        t.right.push(0);
        t.value.push(value);
        t.feature.len() - 1
    }

    fn grow<R: Rng>(&mut self, start: usize, end: usize, depth: usize, rng: &mut R) -> usize {
        let node = &self.order[0][start..end];
        let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for &p in node {
            let v = self.ys[p as usize];
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let n = end - start;
        let id = self.push(sum / n as f64);
        if depth >= self.params.max_depth || n < 2 || n < 2 * self.params.min_samples_leaf || lo == hi {
            return id;
        }
        let Some(best) = self.best_split(start, end, sum, rng) else {
            return id;
        };
        self.partition(start, end, &best);
        let mid = start + best.n_left;
        self.tree.value[id] = 0.0;
        self.tree.feature[id] = self.allowed[best.slot] as u32;
        self.tree.threshold[id] = best.threshold;
        let l = self.grow(start, mid, depth + 1, rng);
        let r = self.grow(mid, end, depth + 1, rng);
        self.tree.left[id] = l as u32;
        self.tree.right[id] = r as u32;
        id
    }

    fn candidates<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let f = self.allowed.len();
        let k = ((self.params.max_features * f as f64).ceil() as usize).clamp(1, f);
        if k == f {
            return (0..f).collect();
        }
        let mut c = index::sample(rng, f, k).into_vec();
        c.sort_unstable();
        c
    }

    fn best_split<R: Rng>(&self, start: usize, end: usize, sum: f64, rng: &mut R) -> Option<Split> {
        let n = end - start;
        let msl = self.params.min_samples_leaf;
        let mut best: Option<Split> = None;
        for slot in self.candidates(rng) {
            let col = &self.xs[slot];
            let ord = &self.order[slot][start..end];
            let mut sum_l = 0.0;
            for k in 0..n - 1 {
                let p = ord[k] as usize;
                sum_l += self.ys[p];
                let (a, b) = (col[p], col[ord[k + 1] as usize]);
                let n_l = k + 1;
                let n_r = n - n_l;
                if a == b || n_l < msl || n_r < msl {
                    continue;
                }
                let diff = sum_l / n_l as f64 - (sum - sum_l) / n_r as f64;
                let gain = (n_l as f64 * n_r as f64 / n as f64) * diff * diff;
                if gain > best.as_ref().map_or(0.0, |s| s.gain) {
                    let mut threshold = a + (b - a) * 0.5;
                    if !(threshold < b) {
                        threshold = a;
                    }
                    best = Some(Split { slot, threshold, gain, n_left: n_l });
                }
            }
        }
        best
    }

    /// Stable partition of every feature's order list around the split.
    fn partition(&mut self, start: usize, end: usize, split: &Split) {
        let col = &self.xs[split.slot];
        for &p in &self.order[split.slot][start..end] {
            self.goes_left[p as usize] = col[p as usize] <= split.threshold;
        }
        for ord in &mut self.order {
            self.scratch.clear();
            let seg = &mut ord[start..end];
            let mut w = 0;
            for i in 0..seg.len() {
                let p = seg[i];
                if self.goes_left[p as usize] {
                    seg[w] = p;
                    w += 1;
                } else {
                    self.scratch.push(p);
                }
            }
            seg[w..].copy_from_slice(&self.scratch);
            debug_assert_eq!(w, split.n_left);
        }
    }
}
