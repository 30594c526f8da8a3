//! Bagged Gini trees with per-split feature subsampling.

use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;

use super::tree::{DecisionTree, TreeGrowth};
use super::HyperParams;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    num_classes: usize,
}

impl RandomForest {
    /// Tree `t` bootstraps and subsamples features from the stream seeded
    /// with `seed + t`.
    pub(crate) fn fit(
        x: &Array2<f64>,
        y: &[usize],
        num_classes: usize,
        params: &HyperParams,
        seed: u64,
    ) -> Self {
        let n = x.nrows();
        let growth = TreeGrowth {
            max_leaf_nodes: None,
            min_samples_leaf: params.rf_min_samples_leaf as u64,
            max_features: Some((x.ncols() as f64).sqrt().ceil() as usize),
        };
        let trees = (0..params.rf_n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed.wrapping_add(t as u64));
                let mut weights = vec![0u64; n];
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1;
                }
                DecisionTree::fit(x, y, Some(&weights), num_classes, &growth, &mut rng)
            })
            .collect();
        Self { trees, num_classes }
    }

    pub(crate) fn from_trees(trees: Vec<DecisionTree>, num_classes: usize) -> Self {
        Self { trees, num_classes }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Mean of the trees' smoothed leaf frequencies.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.num_classes];
        for tree in &self.trees {
            for (a, p) in acc.iter_mut().zip(tree.predict(x)) {
                *a += p;
            }
        }
        let k = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        acc
    }
}
