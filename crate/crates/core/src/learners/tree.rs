//! Gini-impurity classification trees.
//!
//! Nodes are expanded best-first by weighted impurity decrease, which makes a
//! leaf budget meaningful. Candidate thresholds are midpoints between
//! consecutive distinct feature values. Split scores are compared in exact
//! integer arithmetic, so ties resolve deterministically to the lower
//! feature index and then the lower threshold.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::Array2;
use rand::seq::index;

use super::HyperParams;
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Weighted class counts of the training rows reaching the leaf.
        counts: Vec<u64>,
        /// Add-one smoothed class frequencies.
        probs: Vec<f64>,
    },
}

impl Node {
    pub(crate) fn leaf(counts: Vec<u64>) -> Self {
        let total: u64 = counts.iter().sum();
        let denom = (total + counts.len() as u64) as f64;
        let probs = counts.iter().map(|&c| (c + 1) as f64 / denom).collect();
        Node::Leaf { counts, probs }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TreeGrowth {
    pub max_leaf_nodes: Option<usize>,
    pub min_samples_leaf: u64,
    /// Features examined per split; `None` means all of them.
    pub max_features: Option<usize>,
}

impl TreeGrowth {
    pub fn decision_tree(params: &HyperParams) -> Self {
        Self {
            max_leaf_nodes: Some(params.dt_max_leaf_nodes),
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

/// A chosen split of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted Gini impurity decrease, in sample-count units.
    pub gain: f64,
}

/// `Σ_children Σ_c n_c² / n_child` as an exact fraction `num / den`.
#[derive(Debug, Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

fn sum_squares(counts: &[u64]) -> u128 {
    counts.iter().map(|&c| (c as u128) * (c as u128)).sum()
}

/// Best split of the rows `members` (with multiplicities `weights`) over
/// the given features, which must be in ascending order.
fn best_split_among(
    x: &Array2<f64>,
    y: &[usize],
    weights: &[u64],
    members: &[usize],
    features: &[usize],
    num_classes: usize,
    min_samples_leaf: u64,
) -> Option<SplitChoice> {
    let mut totals = vec![0u64; num_classes];
    for &i in members {
        totals[y[i]] += weights[i];
    }
    let n: u64 = totals.iter().sum();
    if totals.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }

    let mut best: Option<(Score, usize, f64)> = None;
    let mut column: Vec<(f64, usize, u64)> = Vec::with_capacity(members.len());
    let mut left = vec![0u64; num_classes];
    for &f in features {
        column.clear();
        column.extend(members.iter().map(|&i| (x[[i, f]], y[i], weights[i])));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        left.iter_mut().for_each(|c| *c = 0);
        let mut n_left = 0u64;
        for k in 0..column.len() - 1 {
            let (value, class, w) = column[k];
            left[class] += w;
            n_left += w;
            let next = column[k + 1].0;
            if next <= value {
                continue;
            }
            let n_right = n - n_left;
            if n_left < min_samples_leaf || n_right < min_samples_leaf {
                continue;
            }
            let right: Vec<u64> = totals.iter().zip(&left).map(|(t, l)| t - l).collect();
            let (sl, sr) = (sum_squares(&left), sum_squares(&right));
            let (nl, nr) = (n_left as u128, n_right as u128);
            let score = Score {
                num: sl * nr + sr * nl,
                den: nl * nr,
            };
            if best.as_ref().is_none_or(|(b, _, _)| score.better_than(b)) {
                let mut threshold = value + (next - value) / 2.0;
                if threshold >= next {
                    threshold = value;
                }
                best = Some((score, f, threshold));
            }
        }
    }

    best.map(|(score, feature, threshold)| {
        let parent = sum_squares(&totals) as f64 / n as f64;
        SplitChoice {
            feature,
            threshold,
            gain: score.num as f64 / score.den as f64 - parent,
        }
    })
}

/// Best Gini split of an unweighted sample over every feature, with no leaf
/// size floor. `None` when the node is pure or every feature is constant.
pub fn best_split(x: &Array2<f64>, y: &[usize], num_classes: usize) -> Option<SplitChoice> {
    let members: Vec<usize> = (0..x.nrows()).collect();
    let features: Vec<usize> = (0..x.ncols()).collect();
    let weights = vec![1u64; x.nrows()];
    best_split_among(x, y, &weights, &members, &features, num_classes, 1)
}

struct Candidate {
    gain: f64,
    node: usize,
    split: SplitChoice,
    members: Vec<usize>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Max-heap on gain; earlier nodes first on ties.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.node.cmp(&self.node))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    num_classes: usize,
}

impl DecisionTree {
    /// Grows a tree. `weights` gives per-row multiplicities (bootstrap);
    /// `None` means every row counts once. Rows with weight 0 are ignored.
    pub(crate) fn fit(
        x: &Array2<f64>,
        y: &[usize],
        weights: Option<&[u64]>,
        num_classes: usize,
        growth: &TreeGrowth,
        rng: &mut Rng,
    ) -> Self {
        let ones;
        let weights = match weights {
            Some(w) => w,
            None => {
                ones = vec![1u64; x.nrows()];
                &ones
            }
        };
        let dim = x.ncols();
        let choose_features = |rng: &mut Rng| -> Vec<usize> {
            match growth.max_features {
                Some(m) if m < dim => {
                    let mut f = index::sample(rng, dim, m).into_vec();
                    f.sort_unstable();
                    f
                }
                _ => (0..dim).collect(),
            }
        };
        let counts_of = |members: &[usize]| {
            let mut c = vec![0u64; num_classes];
            for &i in members {
                c[y[i]] += weights[i];
            }
            c
        };

        let root: Vec<usize> = (0..x.nrows()).filter(|&i| weights[i] > 0).collect();
        let mut nodes = vec![Node::leaf(counts_of(&root))];
        let mut heap = BinaryHeap::new();
        let push = |heap: &mut BinaryHeap<Candidate>, node: usize, members: Vec<usize>, rng: &mut Rng| {
            let features = choose_features(rng);
            if let Some(split) = best_split_among(
                x,
                y,
                weights,
                &members,
                &features,
                num_classes,
                growth.min_samples_leaf,
            ) {
                heap.push(Candidate {
                    gain: split.gain,
                    node,
                    split,
                    members,
                });
            }
        };
        push(&mut heap, 0, root, rng);

        let mut leaves = 1;
        while let Some(cand) = heap.pop() {
            if growth.max_leaf_nodes.is_some_and(|m| leaves >= m) {
                break;
            }
            let SplitChoice {
                feature, threshold, ..
            } = cand.split;
            let (lm, rm): (Vec<usize>, Vec<usize>) = cand
                .members
                .iter()
                .partition(|&&i| x[[i, feature]] <= threshold);
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::leaf(counts_of(&lm)));
            nodes.push(Node::leaf(counts_of(&rm)));
            nodes[cand.node] = Node::Split {
                feature,
                threshold,
                left: l,
                right: r,
            };
            leaves += 1;
            push(&mut heap, l, lm, rng);
            push(&mut heap, r, rm, rng);
        }

        Self { nodes, num_classes }
    }

    pub(crate) fn from_nodes(nodes: Vec<Node>, num_classes: usize) -> Self {
        Self { nodes, num_classes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    /// Weighted class counts of each leaf.
    pub fn leaves(&self) -> impl Iterator<Item = &[u64]> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { counts, .. } => Some(counts.as_slice()),
            Node::Split { .. } => None,
        })
    }

    /// The split at the root, if the tree has one.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        }
    }

    pub fn predict(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { probs, .. } => return probs,
            }
        }
    }
}
