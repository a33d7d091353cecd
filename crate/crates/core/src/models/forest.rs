//! Bagged random forests. Each tree sees a bootstrap sample and `sqrt(d)`
//! candidate features per split; the forest score is the fraction of trees
//! voting for class 1.

use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{normalize_sum, Columns, Grower, Tree};
use super::{ForestHyper, TrainingSummary};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest<T> {
    pub trees: Vec<Tree<T>>,
}

impl<T: Scalar> Forest<T> {
    pub fn proba(&self, x: ArrayView2<T>) -> Vec<T> {
        let half = T::lit(0.5);
        let n_trees = T::from_usize_lossy(self.trees.len().max(1));
        x.rows()
            .into_iter()
            .map(|row| {
                let votes = self.trees.iter().filter(|t| t.leaf_prob(row) >= half).count();
                T::from_usize_lossy(votes) / n_trees
            })
            .collect()
    }

    /// Mean of the per-tree normalized impurity importances, renormalized.
    pub fn importances(&self, d: usize) -> Vec<f64> {
        let mut acc = vec![0.0; d];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.importances(d)) {
                *a += v;
            }
        }
        normalize_sum(acc)
    }
}

pub(super) fn max_features(d: usize) -> usize {
    ((d as f64).sqrt().floor() as usize).max(1)
}

pub(super) fn fit<T: Scalar>(x: ArrayView2<T>, y: &[bool], h: &ForestHyper, seed: u64, summary: &mut TrainingSummary) -> Forest<T> {
    let cols = Columns::new(x);
    let n = y.len();
    let grower = Grower {
        x: &cols,
        y,
        max_depth: h.max_depth,
        min_samples_split: h.min_samples_split.max(2),
        max_features: Some(max_features(x.ncols())),
    };
    let trees: Vec<Tree<T>> = (0..h.n_trees.max(1))
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, &["tree", &t.to_string()]);
            let rows: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            grower.grow(rows, Some(&mut r))
        })
        .collect();
    summary.iterations = trees.len();
    summary.converged = true;
    Forest { trees }
}
