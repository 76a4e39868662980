//! Regression trees, random forests and gradient-boosted trees.
//!
//! All three share one builder that grows a tree on per-row gradient
//! statistics `(g, h)` and per-row sample weights. A plain regression tree
//! uses `g = -y, h = 1, lambda = 0`, which reduces the split gain to half the
//! drop in squared error and the leaf weight to the leaf mean.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_finite, check_width};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

/// Node array with the root at index 0. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub n_features: usize,
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn leaf(n_features: usize, weight: f64) -> Self {
        RegressionTree {
            n_features,
            nodes: vec![TreeNode::Leaf { weight }],
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Index of the leaf node a row lands in.
    pub fn leaf_index(&self, row: impl Fn(usize) -> f64) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row(feature) <= threshold { left } else { right },
            }
        }
    }

    fn value_at(&self, x: &DMatrix<f64>, r: usize) -> f64 {
        match self.nodes[self.leaf_index(|f| x[(r, f)])] {
            TreeNode::Leaf { weight } => weight,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_predict_input(self.n_features, x)?;
        Ok((0..x.nrows()).map(|r| self.value_at(x, r)).collect())
    }
}

fn check_predict_input(n_features: usize, x: &DMatrix<f64>) -> Result<()> {
    check_width(n_features, x)?;
    check_finite(x)
}

fn check_targets(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "design has {} rows but target has {}",
            x.nrows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    check_finite(x)?;
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i, col: x.ncols() });
    }
    Ok(())
}

/// Per-feature row orderings, sorted by value with ties in row order.
pub struct SortedColumns(Vec<Vec<u32>>);

impl SortedColumns {
    pub fn new(x: &DMatrix<f64>) -> Self {
        SortedColumns(
            (0..x.ncols())
                .map(|f| {
                    let col = x.column(f);
                    let mut idx: Vec<u32> = (0..x.nrows() as u32).collect();
                    idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                    idx
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct GrowParams {
    max_depth: usize,
    min_leaf: f64,
    lambda: f64,
    gamma: f64,
    features_per_split: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: f64,
    gg: f64,
}

impl Stats {
    fn score(&self, lambda: f64) -> f64 {
        let d = self.h + lambda;
        if d > 0.0 {
            self.g * self.g / d
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Scan {
    left: Stats,
    last: f64,
}

/// Grows one tree level by level. `weight[r]` is the multiplicity of row `r`
/// in the sample (0 = not sampled).
fn grow(
    x: &DMatrix<f64>,
    sorted: &SortedColumns,
    weight: &[f64],
    g: &[f64],
    h: &[f64],
    params: GrowParams,
    rng: &mut ChaCha8Rng,
) -> RegressionTree {
    let p = x.ncols();
    let mut nodes = vec![TreeNode::Leaf { weight: 0.0 }];
    let mut stats = vec![Stats::default()];
    let mut node_of: Vec<u32> = weight.iter().map(|&w| if w > 0.0 { 0 } else { NONE }).collect();
    for r in 0..weight.len() {
        if weight[r] > 0.0 {
            let s = &mut stats[0];
            s.g += weight[r] * g[r];
            s.h += weight[r] * h[r];
            s.n += weight[r];
            s.gg += weight[r] * g[r] * g[r];
        }
    }
    let mut frontier: Vec<usize> = vec![0];
    let mut slot: Vec<u32> = vec![0];

    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let masks: Option<Vec<Vec<bool>>> = (params.features_per_split < p).then(|| {
            frontier
                .iter()
                .map(|_| {
                    let mut m = vec![false; p];
                    for f in sample(rng, p, params.features_per_split).iter() {
                        m[f] = true;
                    }
                    m
                })
                .collect()
        });
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
        for f in 0..p {
            let mut scans: Vec<Scan> = frontier
                .iter()
                .map(|_| Scan {
                    left: Stats::default(),
                    last: f64::NAN,
                })
                .collect();
            for &r in &sorted.0[f] {
                let r = r as usize;
                let node = node_of[r];
                if node == NONE {
                    continue;
                }
                let pos = slot[node as usize];
                if pos == NONE {
                    continue;
                }
                let pos = pos as usize;
                if let Some(m) = &masks {
                    if !m[pos][f] {
                        continue;
                    }
                }
                let v = x[(r, f)];
                let scan = &mut scans[pos];
                let total = stats[frontier[pos]];
                if scan.left.n > 0.0 && v > scan.last {
                    let right_n = total.n - scan.left.n;
                    if scan.left.n >= params.min_leaf && right_n >= params.min_leaf {
                        let right = Stats {
                            g: total.g - scan.left.g,
                            h: total.h - scan.left.h,
                            n: right_n,
                            gg: 0.0,
                        };
                        let gain = 0.5
                            * (scan.left.score(params.lambda) + right.score(params.lambda)
                                - total.score(params.lambda))
                            - params.gamma;
                        let tol = 1e-11 * total.gg;
                        let better = match best[pos] {
                            None => gain > tol,
                            Some(b) => gain > b.gain,
                        };
                        if better {
                            let mut threshold = scan.last + (v - scan.last) / 2.0;
                            if threshold >= v {
                                threshold = scan.last;
                            }
                            best[pos] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold,
                            });
                        }
                    }
                }
                let w = weight[r];
                scan.left.g += w * g[r];
                scan.left.h += w * h[r];
                scan.left.n += w;
                scan.last = v;
            }
        }

        let mut next = Vec::new();
        let mut children: Vec<Option<(usize, usize)>> = vec![None; frontier.len()];
        for (pos, cand) in best.iter().enumerate() {
            if let Some(c) = cand {
                let l = nodes.len();
                nodes.push(TreeNode::Leaf { weight: 0.0 });
                nodes.push(TreeNode::Leaf { weight: 0.0 });
                stats.push(Stats::default());
                stats.push(Stats::default());
                nodes[frontier[pos]] = TreeNode::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: l,
                    right: l + 1,
                };
                children[pos] = Some((l, l + 1));
                next.push(l);
                next.push(l + 1);
            }
        }
        for r in 0..node_of.len() {
            let node = node_of[r];
            if node == NONE {
                continue;
            }
            let pos = slot[node as usize];
            if pos == NONE {
                continue;
            }
            if let (Some((l, rr)), Some(c)) = (children[pos as usize], best[pos as usize]) {
                let child = if x[(r, c.feature)] <= c.threshold { l } else { rr };
                node_of[r] = child as u32;
                let w = weight[r];
                let s = &mut stats[child];
                s.g += w * g[r];
                s.h += w * h[r];
                s.n += w;
                s.gg += w * g[r] * g[r];
            }
        }
        slot = vec![NONE; nodes.len()];
        for (i, &n) in next.iter().enumerate() {
            slot[n] = i as u32;
        }
        frontier = next;
    }

    for (i, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { weight } = node {
            let d = stats[i].h + params.lambda;
            *weight = if d > 0.0 { -stats[i].g / d } else { 0.0 };
        }
    }
    RegressionTree { n_features: p, nodes }
}

/// Greedy regression tree minimizing within-leaf squared error; leaves hold
/// the mean target of their rows.
pub fn tree_fit(x: &DMatrix<f64>, y: &[f64], max_depth: usize, min_leaf_size: usize) -> Result<RegressionTree> {
    check_targets(x, y)?;
    if max_depth == 0 || min_leaf_size == 0 {
        return Err(Error::InvalidInput("max_depth and min_leaf_size must be at least 1".into()));
    }
    let g: Vec<f64> = y.iter().map(|v| -v).collect();
    let ones = vec![1.0; y.len()];
    Ok(grow(
        x,
        &SortedColumns::new(x),
        &ones,
        &g,
        &ones,
        plain_params(x.ncols(), max_depth, min_leaf_size),
        &mut ChaCha8Rng::seed_from_u64(0),
    ))
}

fn plain_params(p: usize, max_depth: usize, min_leaf_size: usize) -> GrowParams {
    GrowParams {
        max_depth,
        min_leaf: min_leaf_size as f64,
        lambda: 0.0,
        gamma: 0.0,
        features_per_split: p,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestOptions {
    pub n_trees: usize,
    pub row_fraction: f64,
    /// Features drawn per split; `None` uses a third of the columns.
    pub feature_subset: Option<usize>,
    pub max_depth: usize,
    pub min_leaf_size: usize,
    /// Rows drawn with replacement; otherwise a without-replacement subsample
    /// (all rows when `row_fraction` is 1).
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestOptions {
    fn default() -> Self {
        ForestOptions {
            n_trees: 100,
            row_fraction: 1.0,
            feature_subset: None,
            max_depth: 6,
            min_leaf_size: 5,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub options: ForestOptions,
    pub trees: Vec<RegressionTree>,
}

impl ForestModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let p = self.trees[0].n_features;
        check_predict_input(p, x)?;
        let k = self.trees.len() as f64;
        Ok((0..x.nrows())
            .map(|r| self.trees.iter().map(|t| t.value_at(x, r)).sum::<f64>() / k)
            .collect())
    }
}

fn sample_size(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n)
}

/// Per-row multiplicities of a seeded row sample.
fn row_weights(n: usize, fraction: f64, with_replacement: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = sample_size(n, fraction);
    let mut w = vec![0.0; n];
    if with_replacement {
        for _ in 0..m {
            w[rng.gen_range(0..n)] += 1.0;
        }
    } else if m == n {
        w.iter_mut().for_each(|v| *v = 1.0);
    } else {
        for i in sample(rng, n, m).iter() {
            w[i] = 1.0;
        }
    }
    w
}

fn resolve_subset(p: usize, requested: Option<usize>) -> Result<usize> {
    let m = requested.unwrap_or_else(|| (p / 3).max(1));
    if m == 0 || m > p {
        return Err(Error::InvalidInput(format!(
            "feature subset {m} must lie in 1..={p}"
        )));
    }
    Ok(m)
}

fn tree_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn forest_fit(x: &DMatrix<f64>, y: &[f64], opts: &ForestOptions) -> Result<ForestModel> {
    check_targets(x, y)?;
    if opts.n_trees == 0 {
        return Err(Error::InvalidInput("forest needs at least one tree".into()));
    }
    if !(opts.row_fraction > 0.0 && opts.row_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "row fraction {} outside (0, 1]",
            opts.row_fraction
        )));
    }
    if opts.max_depth == 0 || opts.min_leaf_size == 0 {
        return Err(Error::InvalidInput("max_depth and min_leaf_size must be at least 1".into()));
    }
    let m = resolve_subset(x.ncols(), opts.feature_subset)?;
    let sorted = SortedColumns::new(x);
    let g: Vec<f64> = y.iter().map(|v| -v).collect();
    let h = vec![1.0; y.len()];
    let mut params = plain_params(x.ncols(), opts.max_depth, opts.min_leaf_size);
    params.features_per_split = m;
    let trees = (0..opts.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(opts.seed, t as u64);
            let w = row_weights(y.len(), opts.row_fraction, opts.bootstrap, &mut rng);
            grow(x, &sorted, &w, &g, &h, params, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        options: opts.clone(),
        trees,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostOptions {
    pub rounds: usize,
    pub learning_rate: f64,
    /// Penalty per leaf.
    pub gamma: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub max_depth: usize,
    pub min_leaf_size: usize,
    /// Row fraction drawn without replacement each round.
    pub subsample: f64,
    /// Features drawn per split; `None` uses all.
    pub colsample: Option<usize>,
    pub seed: u64,
}

impl Default for BoostOptions {
    fn default() -> Self {
        BoostOptions {
            rounds: 200,
            learning_rate: 0.1,
            gamma: 0.0,
            lambda: 1.0,
            max_depth: 3,
            min_leaf_size: 1,
            subsample: 0.8,
            colsample: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub options: BoostOptions,
    pub base_score: f64,
    /// Unshrunk stage trees.
    pub trees: Vec<RegressionTree>,
    /// Training mean squared error after each round.
    pub training_loss: Vec<f64>,
}

impl BoostedModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if let Some(t) = self.trees.first() {
            check_predict_input(t.n_features, x)?;
        } else {
            check_finite(x)?;
        }
        let eta = self.options.learning_rate;
        Ok((0..x.nrows())
            .map(|r| self.base_score + eta * self.trees.iter().map(|t| t.value_at(x, r)).sum::<f64>())
            .collect())
    }
}

fn squared_loss(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Additive training on squared loss with second-order leaf weights
/// `-G / (H + lambda)` and gain penalized by `gamma` per split.
pub fn boost_fit(x: &DMatrix<f64>, y: &[f64], opts: &BoostOptions) -> Result<BoostedModel> {
    check_targets(x, y)?;
    if opts.rounds == 0 {
        return Err(Error::InvalidInput("boosting needs at least one round".into()));
    }
    if !(opts.learning_rate > 0.0 && opts.learning_rate <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "learning rate {} outside (0, 1]",
            opts.learning_rate
        )));
    }
    if !(opts.subsample > 0.0 && opts.subsample <= 1.0) {
        return Err(Error::InvalidInput(format!("subsample {} outside (0, 1]", opts.subsample)));
    }
    if opts.lambda < 0.0 || opts.gamma < 0.0 || opts.min_leaf_size == 0 {
        return Err(Error::InvalidInput("lambda, gamma must be >= 0 and min_leaf_size >= 1".into()));
    }
    let p = x.ncols();
    let m = opts.colsample.map_or(Ok(p), |c| resolve_subset(p, Some(c)))?;
    let n = y.len();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    if !squared_loss(y, &pred).is_finite() {
        return Err(Error::BoostDivergence { stage: 0 });
    }
    let sorted = SortedColumns::new(x);
    let h = vec![1.0; n];
    let params = GrowParams {
        max_depth: opts.max_depth,
        min_leaf: opts.min_leaf_size as f64,
        lambda: opts.lambda,
        gamma: opts.gamma,
        features_per_split: m,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trees = Vec::with_capacity(opts.rounds);
    let mut training_loss = Vec::with_capacity(opts.rounds);
    for stage in 0..opts.rounds {
        let g: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
        let w = row_weights(n, opts.subsample, false, &mut rng);
        let tree = grow(x, &sorted, &w, &g, &h, params, &mut rng);
        for (r, v) in pred.iter_mut().enumerate() {
            *v += opts.learning_rate * tree.value_at(x, r);
        }
        let loss = squared_loss(y, &pred);
        if !loss.is_finite() {
            return Err(Error::BoostDivergence { stage });
        }
        training_loss.push(loss);
        trees.push(tree);
    }
    Ok(BoostedModel {
        options: opts.clone(),
        base_score,
        trees,
        training_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    fn uniform_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>())
    }

    fn sse(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m) * (a - m)).sum()
    }

    /// Exhaustive best split: (feature, threshold, reduction).
    fn best_split_oracle(x: &DMatrix<f64>, y: &[f64]) -> (usize, f64, f64) {
        let total = sse(y);
        let mut best = (usize::MAX, f64::NAN, 0.0);
        for f in 0..x.ncols() {
            let mut vals: Vec<f64> = x.column(f).iter().copied().collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r) = partition(x, f, t, y);
                let red = total - sse(&l) - sse(&r);
                if red > best.2 + 1e-12 {
                    best = (f, t, red);
                }
            }
        }
        best
    }

    fn partition(x: &DMatrix<f64>, f: usize, t: f64, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut l, mut r) = (Vec::new(), Vec::new());
        for (i, v) in y.iter().enumerate() {
            if x[(i, f)] <= t {
                l.push(*v);
            } else {
                r.push(*v);
            }
        }
        (l, r)
    }

    #[test]
    fn step_function_recovered_by_depth_one_tree() {
        let x = uniform_design(200, 3, 1);
        let y: Vec<f64> = (0..200).map(|i| if x[(i, 0)] > 0.5 { 2.0 } else { -1.0 }).collect();
        let tree = tree_fit(&x, &y, 1, 1).unwrap();
        let (f, t, _) = best_split_oracle(&x, &y);
        match tree.nodes[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(f, 0);
                assert_eq!(threshold, t);
                let below = x.column(0).iter().copied().filter(|v| *v <= 0.5).fold(f64::MIN, f64::max);
                let above = x.column(0).iter().copied().filter(|v| *v > 0.5).fold(f64::MAX, f64::min);
                assert_eq!(threshold, (below + above) / 2.0);
            }
            _ => panic!("expected split"),
        }
        let pred = tree.predict(&x).unwrap();
        for i in 0..200 {
            assert_eq!(pred[i], y[i]);
        }
    }

    #[test]
    fn root_split_matches_exhaustive_oracle_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..20 {
            let x = uniform_design(40, 4, 100 + seed);
            let y: Vec<f64> = (0..40).map(|_| normal(&mut rng)).collect();
            let tree = tree_fit(&x, &y, 1, 1).unwrap();
            let (f, t, _) = best_split_oracle(&x, &y);
            match tree.nodes[0] {
                TreeNode::Split { feature, threshold, .. } => {
                    assert_eq!((feature, threshold), (f, t));
                }
                _ => panic!("expected split"),
            }
        }
    }

    #[test]
    fn constant_target_and_leaf_size_stop() {
        let x = uniform_design(30, 2, 3);
        let tree = tree_fit(&x, &[0.3; 30], 4, 1).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert!((tree.predict(&x).unwrap()[0] - 0.3).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..30).map(|_| normal(&mut rng)).collect();
        let tree = tree_fit(&x, &y, 4, 30).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        let mean = y.iter().sum::<f64>() / 30.0;
        assert!(tree.predict(&x).unwrap().iter().all(|p| (p - mean).abs() < 1e-12));
    }

    #[test]
    fn partition_depth_and_leaf_size_hold() {
        let x = uniform_design(300, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y: Vec<f64> = (0..300).map(|i| x[(i, 1)].sin() + 0.3 * normal(&mut rng)).collect();
        let tree = tree_fit(&x, &y, 4, 7).unwrap();
        assert!(tree.depth() <= 4);
        let mut counts = vec![0usize; tree.nodes.len()];
        let mut sums = vec![0.0; tree.nodes.len()];
        for i in 0..300 {
            let leaf = tree.leaf_index(|f| x[(i, f)]);
            counts[leaf] += 1;
            sums[leaf] += y[i];
        }
        assert_eq!(counts.iter().sum::<usize>(), 300);
        for (i, node) in tree.nodes.iter().enumerate() {
            match node {
                TreeNode::Leaf { weight } => {
                    assert!(counts[i] >= 7);
                    assert!((weight - sums[i] / counts[i] as f64).abs() < 1e-12);
                }
                TreeNode::Split { .. } => assert_eq!(counts[i], 0),
            }
        }
        assert_eq!(tree.n_leaves(), counts.iter().filter(|c| **c > 0).count());
    }

    #[test]
    fn monotone_transform_leaves_training_predictions_unchanged() {
        let x = uniform_design(150, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y: Vec<f64> = (0..150).map(|i| x[(i, 0)] * x[(i, 2)] + 0.1 * normal(&mut rng)).collect();
        let xt = x.map(|v| (3.0 * v).exp());
        let a = tree_fit(&x, &y, 3, 3).unwrap().predict(&x).unwrap();
        let b = tree_fit(&xt, &y, 3, 3).unwrap().predict(&xt).unwrap();
        for i in 0..150 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_forest_equals_tree() {
        let x = uniform_design(120, 4, 9);
        let y: Vec<f64> = (0..120).map(|i| x[(i, 0)] + 2.0 * x[(i, 3)]).collect();
        let tree = tree_fit(&x, &y, 3, 2).unwrap();
        let forest = forest_fit(
            &x,
            &y,
            &ForestOptions {
                n_trees: 1,
                row_fraction: 1.0,
                feature_subset: Some(4),
                max_depth: 3,
                min_leaf_size: 2,
                bootstrap: false,
                seed: 11,
            },
        )
        .unwrap();
        assert_eq!(forest.trees[0], tree);
        assert_eq!(forest.predict(&x).unwrap(), tree.predict(&x).unwrap());
    }

    #[test]
    fn forest_is_deterministic_and_reduces_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = DMatrix::from_fn(800, 5, |_, _| normal(&mut rng));
        let y: Vec<f64> = (0..800)
            .map(|i| x[(i, 0)] - 0.5 * x[(i, 1)] + 0.25 * x[(i, 2)] + 0.3 * normal(&mut rng))
            .collect();
        let (train, test) = (400, 400);
        let xtr = x.rows(0, train).into_owned();
        let xte = x.rows(train, test).into_owned();
        let opts = ForestOptions {
            n_trees: 200,
            feature_subset: Some(2),
            max_depth: 8,
            min_leaf_size: 2,
            seed: 3,
            ..Default::default()
        };
        let f1 = forest_fit(&xtr, &y[..train], &opts).unwrap();
        let f2 = forest_fit(&xtr, &y[..train], &opts).unwrap();
        let p1 = f1.predict(&xte).unwrap();
        assert_eq!(p1, f2.predict(&xte).unwrap());
        let single = tree_fit(&xtr, &y[..train], 8, 2).unwrap().predict(&xte).unwrap();
        let mse = |p: &[f64]| p.iter().zip(&y[train..]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / test as f64;
        assert!(mse(&p1) < mse(&single));
    }

    #[test]
    fn forest_rejects_bad_subset() {
        let x = uniform_design(10, 2, 12);
        let y = vec![0.0; 10];
        let opts = ForestOptions {
            feature_subset: Some(3),
            ..Default::default()
        };
        assert!(forest_fit(&x, &y, &opts).is_err());
    }

    #[test]
    fn single_stump_boost_is_mean_residual() {
        let x = uniform_design(50, 2, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let y: Vec<f64> = (0..50).map(|_| normal(&mut rng)).collect();
        let opts = BoostOptions {
            rounds: 1,
            learning_rate: 1.0,
            gamma: 0.0,
            lambda: 0.0,
            max_depth: 0,
            subsample: 1.0,
            ..Default::default()
        };
        let m = boost_fit(&x, &y, &opts).unwrap();
        let mean = y.iter().sum::<f64>() / 50.0;
        let resid = y.iter().map(|v| v - m.base_score).sum::<f64>() / 50.0;
        match m.trees[0].nodes[0] {
            TreeNode::Leaf { weight } => {
                assert!((weight - resid).abs() < 1e-12);
                assert!((weight - (mean - m.base_score)).abs() < 1e-12);
            }
            _ => panic!("expected leaf"),
        }
    }

    #[test]
    fn huge_gamma_blocks_all_splits() {
        let x = uniform_design(60, 2, 15);
        let y: Vec<f64> = (0..60).map(|i| x[(i, 0)]).collect();
        let opts = BoostOptions {
            rounds: 5,
            gamma: 1e6,
            subsample: 1.0,
            ..Default::default()
        };
        let m = boost_fit(&x, &y, &opts).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        let mean = y.iter().sum::<f64>() / 60.0;
        assert!(m.predict(&x).unwrap().iter().all(|p| (p - mean).abs() < 1e-12));
    }

    fn boost_problem() -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = DMatrix::from_fn(400, 4, |_, _| normal(&mut rng));
        let y = (0..400)
            .map(|i| x[(i, 0)] * x[(i, 1)] + (x[(i, 2)]).max(0.0) + 0.1 * normal(&mut rng))
            .collect();
        (x, y)
    }

    #[test]
    fn boosting_loss_non_increasing_and_shrinkage_band() {
        let (x, y) = boost_problem();
        let base = BoostOptions {
            rounds: 60,
            learning_rate: 0.1,
            subsample: 1.0,
            lambda: 1.0,
            ..Default::default()
        };
        let m = boost_fit(&x, &y, &base).unwrap();
        for w in m.training_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let half = BoostOptions {
            rounds: 120,
            learning_rate: 0.05,
            ..base.clone()
        };
        let m2 = boost_fit(&x, &y, &half).unwrap();
        let (a, b) = (*m.training_loss.last().unwrap(), *m2.training_loss.last().unwrap());
        assert!((a - b).abs() / a.max(b) < 0.10, "{a} vs {b}");
    }

    #[test]
    fn boosted_prediction_is_additive() {
        let (x, y) = boost_problem();
        let m = boost_fit(
            &x,
            &y,
            &BoostOptions {
                rounds: 10,
                colsample: Some(2),
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let pred = m.predict(&x).unwrap();
        for r in 0..5 {
            let row = |f: usize| x[(r, f)];
            let mut manual = m.base_score;
            for t in &m.trees {
                if let TreeNode::Leaf { weight } = t.nodes[t.leaf_index(row)] {
                    manual += m.options.learning_rate * weight;
                }
            }
            assert!((manual - pred[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn boost_divergence_reports_stage() {
        let x = uniform_design(4, 1, 17);
        let y = vec![1e200, -1e200, 1e200, -1e200];
        assert!(matches!(
            boost_fit(&x, &y, &BoostOptions::default()),
            Err(Error::BoostDivergence { stage: 0 })
        ));
    }

    #[test]
    fn prediction_rejects_bad_input_and_serializes() {
        let x = uniform_design(30, 2, 18);
        let y: Vec<f64> = (0..30).map(|i| x[(i, 1)]).collect();
        let tree = tree_fit(&x, &y, 2, 1).unwrap();
        assert!(tree.predict(&DMatrix::zeros(2, 3)).is_err());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(tree.predict(&bad), Err(Error::NonFinite { .. })));
        let json = serde_json::to_string(&tree).unwrap();
        let back: RegressionTree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, tree);
        let forest = ForestModel {
            options: ForestOptions::default(),
            trees: vec![tree.clone(), tree.clone()],
        };
        assert_eq!(forest.predict(&x).unwrap(), tree.predict(&x).unwrap());
        let leaf = RegressionTree::leaf(2, 0.4);
        assert!(leaf.predict(&x).unwrap().iter().all(|v| *v == 0.4));
    }
}
