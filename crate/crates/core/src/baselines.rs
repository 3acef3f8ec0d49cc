//! Comparison classifiers: a CART tree on Gini impurity, a bagged ensemble of
//! such trees with its risk-reduction feature importance, and k-nearest
//! neighbors. All classifiers are binary and return `[p(0), p(1)]` per row.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Probs = [f64; 2];

/// Checks a training matrix and its labels.
pub fn check_xy(x: &[Vec<f64>], y: &[usize]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    let width = x[0].len();
    if width == 0 {
        return Err(Error::Input("training rows have no features".into()));
    }
    for row in x {
        if row.len() != width {
            return Err(Error::Shape {
                expected: width,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite feature value".into()));
        }
    }
    if y.iter().any(|&c| c > 1) {
        return Err(Error::Input("labels must be 0 or 1".into()));
    }
    Ok(width)
}

fn check_width(x: &[Vec<f64>], width: usize) -> Result<()> {
    match x.iter().find(|r| r.len() != width) {
        Some(r) => Err(Error::Shape {
            expected: width,
            got: r.len(),
        }),
        None => Ok(()),
    }
}

fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = counts[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for CartParams {
    fn default() -> Self {
        Self {
            max_depth: 20,
            min_leaf: 5,
        }
    }
}

/// `risk` is the training-mass fraction reaching the node times its Gini impurity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        probs: Probs,
        n: usize,
        risk: f64,
    },
    Branch {
        feature: usize,
        threshold: f64,
        n: usize,
        risk: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn risk(&self) -> f64 {
        match self {
            TreeNode::Leaf { risk, .. } | TreeNode::Branch { risk, .. } => *risk,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Probs {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { probs, .. } => return *probs,
                TreeNode::Branch {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if row[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Branch { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_branches(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Branch { left, right, .. } => 1 + left.n_branches() + right.n_branches(),
        }
    }

    /// Sum of leaf risks, i.e. the tree's training risk.
    pub fn leaf_risk(&self) -> f64 {
        match self {
            TreeNode::Leaf { risk, .. } => *risk,
            TreeNode::Branch { left, right, .. } => left.leaf_risk() + right.leaf_risk(),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Branch {
                feature,
                left,
                right,
                ..
            } => [Some(*feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }

    fn add_risk_drops(&self, out: &mut [f64]) {
        if let TreeNode::Branch {
            feature,
            risk,
            left,
            right,
            ..
        } = self
        {
            out[*feature] += risk - left.risk() - right.risk();
            left.add_risk_drops(out);
            right.add_risk_drops(out);
        }
    }
}

struct CartBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    params: CartParams,
    total: f64,
    width: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
    cost: f64,
}

impl CartBuilder<'_> {
    fn counts(&self, idx: &[usize]) -> [usize; 2] {
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        [idx.len() - pos, pos]
    }

    fn build(&self, idx: &mut [usize], depth: usize) -> TreeNode {
        let counts = self.counts(idx);
        let n = idx.len();
        let g = gini(counts);
        let risk = n as f64 / self.total * g;
        let leaf = || TreeNode::Leaf {
            probs: [
                counts[0] as f64 / n as f64,
                counts[1] as f64 / n as f64,
            ],
            n,
            risk,
        };
        if depth >= self.params.max_depth || g == 0.0 || n < 2 * self.params.min_leaf {
            return leaf();
        }
        let Some(split) = self.best_split(idx, counts) else {
            return leaf();
        };
        // the best split can never raise the weighted impurity
        debug_assert!(split.cost <= g * n as f64 + 1e-9);
        let (mut l, mut r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[i][split.feature] <= split.threshold);
        TreeNode::Branch {
            feature: split.feature,
            threshold: split.threshold,
            n,
            risk,
            left: Box::new(self.build(&mut l, depth + 1)),
            right: Box::new(self.build(&mut r, depth + 1)),
        }
    }

    /// Lowest weighted child impurity; ties go to the lower feature, then the
    /// lower threshold.
    fn best_split(&self, idx: &[usize], counts: [usize; 2]) -> Option<Split> {
        let n = idx.len();
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        for feature in 0..self.width {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][feature], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for k in 0..n - 1 {
                left[pairs[k].1] += 1;
                let n_left = k + 1;
                if pairs[k].0 == pairs[k + 1].0 || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let cost = n_left as f64 * gini(left) + (n - n_left) as f64 * gini(right);
                if best.as_ref().is_none_or(|b| cost < b.cost - 1e-12) {
                    let lo = pairs[k].0;
                    let hi = pairs[k + 1].0;
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some(Split {
                        feature,
                        threshold: if mid < hi { mid } else { lo },
                        cost,
                    });
                }
            }
        }
        best
    }
}

pub fn train_cart(x: &[Vec<f64>], y: &[usize], params: &CartParams) -> Result<TreeNode> {
    let all: Vec<usize> = (0..x.len()).collect();
    train_cart_on(x, y, params, all)
}

fn train_cart_on(
    x: &[Vec<f64>],
    y: &[usize],
    params: &CartParams,
    mut idx: Vec<usize>,
) -> Result<TreeNode> {
    let width = check_xy(x, y)?;
    if params.min_leaf == 0 {
        return Err(Error::Config("min_leaf must be at least 1".into()));
    }
    let builder = CartBuilder {
        x,
        y,
        params: *params,
        total: idx.len() as f64,
        width,
    };
    Ok(builder.build(&mut idx, 0))
}

pub fn predict_tree(tree: &TreeNode, x: &[Vec<f64>]) -> Result<Vec<Probs>> {
    if let Some(f) = tree.max_feature() {
        if let Some(r) = x.iter().find(|r| r.len() <= f) {
            return Err(Error::Shape {
                expected: f + 1,
                got: r.len(),
            });
        }
    }
    Ok(x.par_iter().map(|r| tree.predict_row(r)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaggingParams {
    pub n_trees: usize,
    pub tree: CartParams,
    /// When false every tree sees the training set unchanged.
    pub bootstrap: bool,
}

impl Default for BaggingParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            tree: CartParams::default(),
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
    pub seeds: Vec<u64>,
}

fn tree_seed(seed: u64, t: usize) -> u64 {
    crate::datagen::record_seed(seed, t as u64)
}

pub fn train_bagged(
    x: &[Vec<f64>],
    y: &[usize],
    params: &BaggingParams,
    seed: u64,
) -> Result<EnsembleModel> {
    let width = check_xy(x, y)?;
    if params.n_trees == 0 {
        return Err(Error::Config("n_trees must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..params.n_trees).map(|t| tree_seed(seed, t)).collect();
    let n = x.len();
    let trees = seeds
        .par_iter()
        .map(|&s| {
            let idx = if params.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            train_cart_on(x, y, &params.tree, idx)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        n_features: width,
        trees,
        seeds,
    })
}

pub fn predict_ensemble(model: &EnsembleModel, x: &[Vec<f64>]) -> Result<Vec<Probs>> {
    check_width(x, model.n_features)?;
    let k = model.trees.len() as f64;
    Ok(x.par_iter()
        .map(|r| {
            let mut p = [0.0; 2];
            for t in &model.trees {
                let q = t.predict_row(r);
                p[0] += q[0];
                p[1] += q[1];
            }
            [p[0] / k, p[1] / k]
        })
        .collect())
}

/// Mean over trees of each tree's per-feature risk reduction divided by its
/// branch count. Ranking is by descending importance, ties by index.
pub fn ensemble_importance(model: &EnsembleModel, n_features: usize) -> (Vec<f64>, Vec<usize>) {
    let mut total = vec![0.0; n_features];
    for tree in &model.trees {
        let branches = tree.n_branches();
        if branches == 0 {
            continue;
        }
        let mut per_tree = vec![0.0; n_features];
        tree.add_risk_drops(&mut per_tree);
        for (t, v) in total.iter_mut().zip(per_tree) {
            *t += v / branches as f64;
        }
    }
    let k = model.trees.len().max(1) as f64;
    // risk drops are non-negative up to rounding
    let importance: Vec<f64> = total.into_iter().map(|v| (v / k).max(0.0)).collect();
    let mut ranking: Vec<usize> = (0..n_features).collect();
    ranking.sort_by(|&a, &b| {
        importance[b]
            .partial_cmp(&importance[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    (importance, ranking)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub fn train_knn(x: &[Vec<f64>], y: &[usize], k: usize) -> Result<KnnModel> {
    check_xy(x, y)?;
    if k == 0 || k > x.len() {
        return Err(Error::Config(format!(
            "k must be in 1..={}, got {k}",
            x.len()
        )));
    }
    Ok(KnnModel {
        k,
        rows: x.to_vec(),
        labels: y.to_vec(),
    })
}

/// Fraction of feasible labels among the k nearest stored rows by Euclidean
/// distance; equal distances go to the lower stored index.
pub fn predict_knn(model: &KnnModel, x: &[Vec<f64>]) -> Result<Vec<Probs>> {
    let width = model.rows.first().map_or(0, Vec::len);
    check_width(x, width)?;
    Ok(x.par_iter()
        .map(|q| {
            let mut d: Vec<(f64, usize)> = model
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let s: f64 = r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                    (s, i)
                })
                .collect();
            let k = model.k.min(d.len());
            let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < d.len() {
                d.select_nth_unstable_by(k - 1, by_dist);
            }
            let pos = d[..k].iter().filter(|&&(_, i)| model.labels[i] == 1).count();
            let p = pos as f64 / k as f64;
            [1.0 - p, p]
        })
        .collect())
}
