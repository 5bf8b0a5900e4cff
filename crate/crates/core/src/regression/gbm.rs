//! Gradient-boosted regression trees under squared loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::check_xy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmConfig {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig { n_trees: 300, learning_rate: 0.1, max_depth: 3, min_samples_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64 },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[(row, feature)] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmFit {
    pub config: GbmConfig,
    pub n_features: usize,
    pub init_value: f64,
    pub trees: Vec<Tree>,
    /// Training mean squared error after the initial constant and after each tree.
    pub loss_history: Vec<f64>,
}

struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree level by level over presorted feature columns.
fn grow_tree(x: &DMatrix<f64>, sorted: &[Vec<(usize, f64)>], residual: &[f64], cfg: &GbmConfig) -> Tree {
    let n = residual.len();
    let min_leaf = cfg.min_samples_leaf.max(1);
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut node_of = vec![0usize; n];
    let mut sums = vec![residual.iter().sum::<f64>()];
    let mut counts = vec![n];
    let mut frontier = vec![0usize];

    for _ in 0..cfg.max_depth {
        if frontier.is_empty() {
            break;
        }
        // slot lookup for nodes on the current level
        let mut slot = vec![usize::MAX; nodes.len()];
        for (i, &node) in frontier.iter().enumerate() {
            slot[node] = i;
        }
        let k = frontier.len();
        let mut best: Vec<Option<Split>> = (0..k).map(|_| None).collect();
        let parent_score: Vec<f64> = frontier.iter().map(|&nd| sums[nd] * sums[nd] / counts[nd] as f64).collect();

        let mut left_sum = vec![0.0; k];
        let mut left_cnt = vec![0usize; k];
        let mut last = vec![f64::NAN; k];
        for (f, order) in sorted.iter().enumerate() {
            left_sum.iter_mut().for_each(|v| *v = 0.0);
            left_cnt.iter_mut().for_each(|v| *v = 0);
            for &(row, v) in order {
                let s = slot[node_of[row]];
                if s == usize::MAX {
                    continue;
                }
                let node = frontier[s];
                let (lc, total) = (left_cnt[s], counts[node]);
                if lc >= min_leaf && total - lc >= min_leaf && v > last[s] {
                    let ls = left_sum[s];
                    let rs = sums[node] - ls;
                    let gain = ls * ls / lc as f64 + rs * rs / (total - lc) as f64 - parent_score[s];
                    if best[s].as_ref().is_none_or(|b| gain > b.gain) {
                        let mid = 0.5 * (last[s] + v);
                        let threshold = if mid < v { mid } else { last[s] };
                        best[s] = Some(Split { gain, feature: f, threshold });
                    }
                }
                left_sum[s] += residual[row];
                left_cnt[s] += 1;
                last[s] = v;
            }
        }

        let mut next = Vec::new();
        let mut children = vec![None; k];
        for (s, split) in best.into_iter().enumerate() {
            let Some(split) = split else { continue };
            let scale = parent_score[s].abs().max(1.0);
            if !(split.gain > 1e-12 * scale) {
                continue;
            }
            let (left, right) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            sums.extend([0.0, 0.0]);
            counts.extend([0, 0]);
            nodes[frontier[s]] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
            children[s] = Some((split.feature, split.threshold, left, right));
            next.extend([left, right]);
        }
        if next.is_empty() {
            break;
        }
        for row in 0..n {
            let s = slot.get(node_of[row]).copied().unwrap_or(usize::MAX);
            if s == usize::MAX {
                continue;
            }
            if let Some((f, t, l, r)) = children[s] {
                let child = if x[(row, f)] <= t { l } else { r };
                node_of[row] = child;
                sums[child] += residual[row];
                counts[child] += 1;
            }
        }
        frontier = next;
    }

    for (i, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            *value = if counts[i] > 0 { sums[i] / counts[i] as f64 } else { 0.0 };
        }
    }
    Tree { nodes }
}

fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Fits up to `n_trees` trees; stops early once a tree finds no split.
pub fn fit_gbm(x: &DMatrix<f64>, y: &[f64], config: &GbmConfig) -> Result<GbmFit> {
    check_xy(x, y)?;
    let (n, p) = x.shape();
    if n == 0 {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate <= 1.0) {
        return Err(Error::InvalidParameter(format!("learning_rate must lie in (0, 1], got {}", config.learning_rate)));
    }
    let init_value = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![init_value; n];
    let mut loss_history = vec![mse(y, &pred)];

    let sorted: Vec<Vec<(usize, f64)>> = x
        .column_iter()
        .map(|col| {
            let mut idx: Vec<(usize, f64)> = col.iter().copied().enumerate().collect();
            idx.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            idx
        })
        .collect();

    let mut trees = Vec::new();
    let mut residual = vec![0.0; n];
    for _ in 0..config.n_trees {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        let mut tree = grow_tree(x, &sorted, &residual, config);
        if tree.nodes.len() == 1 {
            break;
        }
        for node in &mut tree.nodes {
            if let Node::Leaf { value } = node {
                *value *= config.learning_rate;
            }
        }
        for (i, p) in pred.iter_mut().enumerate() {
            *p += tree.predict_row(x, i);
        }
        loss_history.push(mse(y, &pred));
        trees.push(tree);
    }
    Ok(GbmFit { config: *config, n_features: p, init_value, trees, loss_history })
}

pub fn predict_gbm(fit: &GbmFit, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != fit.n_features {
        return Err(Error::ColumnMismatch { expected: fit.n_features, got: x.ncols() });
    }
    Ok((0..x.nrows()).map(|i| fit.init_value + fit.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_function_is_learned() {
        let x = DMatrix::from_fn(100, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..100).map(|i| if i < 50 { 0.0 } else { 1.0 }).collect();
        let fit = fit_gbm(&x, &y, &GbmConfig::default()).unwrap();
        let pred = predict_gbm(&fit, &x).unwrap();
        assert!(mse(&y, &pred) < 1e-3);
        match fit.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 49.5);
            }
            _ => panic!("first tree should split"),
        }
    }

    #[test]
    fn constant_target_builds_no_trees() {
        let x = DMatrix::from_fn(30, 2, |i, j| (i * (j + 1)) as f64);
        let fit = fit_gbm(&x, &[2.5; 30], &GbmConfig::default()).unwrap();
        assert!(fit.trees.is_empty());
        assert_eq!(predict_gbm(&fit, &x).unwrap(), vec![2.5; 30]);
    }

    #[test]
    fn loss_never_increases_and_limits_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(200, 4, |_, _| rng.random::<f64>());
        let y: Vec<f64> =
            (0..200).map(|i| libm::sin(6.0 * x[(i, 0)]) + x[(i, 1)] * x[(i, 2)] + 0.1 * rng.random::<f64>()).collect();
        let cfg = GbmConfig { n_trees: 60, ..GbmConfig::default() };
        let fit = fit_gbm(&x, &y, &cfg).unwrap();
        assert_eq!(fit.trees.len(), 60);
        assert_eq!(fit.loss_history.len(), 61);
        for w in fit.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(fit.trees.iter().all(|t| t.depth() <= 3));

        // every leaf of the first tree holds at least min_samples_leaf rows
        let tree = &fit.trees[0];
        let mut hits = vec![0usize; tree.nodes.len()];
        for i in 0..200 {
            let mut at = 0;
            while let Node::Split { feature, threshold, left, right } = tree.nodes[at] {
                at = if x[(i, feature)] <= threshold { left } else { right };
            }
            hits[at] += 1;
        }
        for (i, node) in tree.nodes.iter().enumerate() {
            if matches!(node, Node::Leaf { .. }) {
                assert!(hits[i] >= 5, "leaf {i} has {}", hits[i]);
            }
        }
    }

    #[test]
    fn too_few_rows_to_split() {
        let x = DMatrix::from_fn(9, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let fit = fit_gbm(&x, &y, &GbmConfig::default()).unwrap();
        assert!(fit.trees.is_empty());
        assert!(predict_gbm(&fit, &DMatrix::zeros(1, 2)).is_err());
    }
}
