//! CART classification trees with Gini splits.
//!
//! Thresholds sit at midpoints between consecutive distinct values; a row
//! goes left when `x[feature] <= threshold`. Among equally good splits the
//! lower feature index wins, then the lower threshold.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{TrainingSummary, TreeHyper};
use crate::rng::Stream;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node<T> {
    Leaf {
        /// Fraction of class-1 training rows reaching this leaf.
        prob: T,
        n: usize,
    },
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
    /// Unnormalized impurity decrease per split feature.
    pub impurity_decrease: Vec<(usize, f64)>,
}

impl<T: Scalar> Tree<T> {
    pub fn leaf_prob(&self, row: ArrayView1<T>) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { prob, .. } => return *prob,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub(super) fn raw_importances(&self, d: usize) -> Vec<f64> {
        let mut imp = vec![0.0; d];
        for &(f, v) in &self.impurity_decrease {
            imp[f] += v;
        }
        imp
    }

    /// Impurity decrease per feature, summing to 1 unless the tree is a stump.
    pub fn importances(&self, d: usize) -> Vec<f64> {
        normalize_sum(self.raw_importances(d))
    }
}

pub(super) fn normalize_sum(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
    v
}

/// Column-major copy of the design for cache-friendly split search.
pub(super) struct Columns<T> {
    pub cols: Vec<Vec<T>>,
}

impl<T: Scalar> Columns<T> {
    pub fn new(x: ArrayView2<T>) -> Self {
        Columns {
            cols: x.columns().into_iter().map(|c| c.to_vec()).collect(),
        }
    }
}

pub(super) struct Grower<'a, T> {
    pub x: &'a Columns<T>,
    pub y: &'a [bool],
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features examined per node; `None` means all of them.
    pub max_features: Option<usize>,
}

/// `n * gini` for a node with `pos` positives out of `n`.
fn weighted_gini(n: usize, pos: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let (n, p) = (n as f64, pos as f64);
    n - (p * p + (n - p) * (n - p)) / n
}

struct BestSplit<T> {
    feature: usize,
    threshold: T,
    gain: f64,
}

impl<T: Scalar> Grower<'_, T> {
    /// Grows a tree on `rows` (duplicates allowed, as in a bootstrap sample).
    pub fn grow(&self, rows: Vec<usize>, rng: Option<&mut Stream>) -> Tree<T> {
        let mut tree = Tree {
            nodes: Vec::new(),
            impurity_decrease: Vec::new(),
        };
        let mut rng = rng;
        self.build(&mut tree, rows, 0, &mut rng);
        tree
    }

    fn build(&self, tree: &mut Tree<T>, rows: Vec<usize>, depth: usize, rng: &mut Option<&mut Stream>) -> usize {
        let id = tree.nodes.len();
        let n = rows.len();
        let pos = rows.iter().filter(|&&i| self.y[i]).count();
        let leaf = Node::Leaf {
            prob: T::from_usize_lossy(pos) / T::from_usize_lossy(n.max(1)),
            n,
        };
        tree.nodes.push(leaf);
        if depth >= self.max_depth || n < self.min_samples_split || pos == 0 || pos == n {
            return id;
        }
        let d = self.x.cols.len();
        let features: Vec<usize> = match (self.max_features, rng.as_mut()) {
            (Some(m), Some(r)) if m < d => {
                let mut f = index::sample(*r, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let parent = weighted_gini(n, pos);
        let mut best: Option<BestSplit<T>> = None;
        let mut pairs: Vec<(T, bool)> = Vec::with_capacity(n);
        for &f in &features {
            let col = &self.x.cols[f];
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (col[i], self.y[i])));
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
            let mut left_pos = 0;
            for i in 0..n - 1 {
                left_pos += usize::from(pairs[i].1);
                let (a, b) = (pairs[i].0, pairs[i + 1].0);
                if a == b {
                    continue;
                }
                let nl = i + 1;
                let gain = parent - weighted_gini(nl, left_pos) - weighted_gini(n - nl, pos - left_pos);
                if gain > 1e-12 && best.as_ref().is_none_or(|bs| gain > bs.gain) {
                    let mut threshold = (a + b) / T::lit(2.0);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        let Some(split) = best else {
            return id;
        };
        let col = &self.x.cols[split.feature];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| col[i] <= split.threshold);
        tree.impurity_decrease.push((split.feature, split.gain));
        let left = self.build(tree, left_rows, depth + 1, rng);
        let right = self.build(tree, right_rows, depth + 1, rng);
        tree.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

pub(super) fn fit_single<T: Scalar>(x: ArrayView2<T>, y: &[bool], h: &TreeHyper, summary: &mut TrainingSummary) -> Tree<T> {
    let cols = Columns::new(x);
    let grower = Grower {
        x: &cols,
        y,
        max_depth: h.max_depth,
        min_samples_split: h.min_samples_split.max(2),
        max_features: None,
    };
    let tree = grower.grow((0..y.len()).collect(), None);
    summary.iterations = tree.nodes.len();
    summary.converged = true;
    tree
}
