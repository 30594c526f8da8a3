//! The four classifiers used both as target models and as attack models.
//!
//! Every learner is deterministic given its seed and trains on the rows of a
//! [`SubsetHandle`] in ascending index order, so the result depends only on
//! the set of rows, never on how the handle was produced.

pub(crate) mod codec;
pub mod forest;
pub mod logistic;
pub mod mlp;
pub mod tree;

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::SubsetHandle;
use crate::error::{Error, Result};

pub use codec::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(alias = "lr")]
    LogisticRegression,
    #[serde(alias = "dt")]
    DecisionTree,
    #[serde(alias = "rf")]
    RandomForest,
    #[serde(alias = "mlp")]
    MultiLayerPerceptron,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::LogisticRegression,
        ModelKind::DecisionTree,
        ModelKind::RandomForest,
        ModelKind::MultiLayerPerceptron,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::LogisticRegression => "LR",
            ModelKind::DecisionTree => "DT",
            ModelKind::RandomForest => "RF",
            ModelKind::MultiLayerPerceptron => "MLP",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ModelKind::LogisticRegression => 1,
            ModelKind::DecisionTree => 2,
            ModelKind::RandomForest => 3,
            ModelKind::MultiLayerPerceptron => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Training hyperparameters for all four kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// L2 weight on the logistic-regression weights (bias excluded).
    pub lr_l2: f64,
    /// Cap on accepted gradient steps.
    pub lr_epochs: usize,
    pub dt_max_leaf_nodes: usize,
    pub rf_n_estimators: usize,
    pub rf_min_samples_leaf: usize,
    pub mlp_hidden: usize,
    pub mlp_learning_rate: f64,
    pub mlp_l2: f64,
    pub mlp_epochs: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lr_l2: 1e-3,
            lr_epochs: 500,
            dt_max_leaf_nodes: 10,
            rf_n_estimators: 100,
            rf_min_samples_leaf: 30,
            mlp_hidden: 128,
            mlp_learning_rate: 0.001,
            mlp_l2: 0.0001,
            mlp_epochs: 200,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_epochs", self.lr_epochs),
            ("dt_max_leaf_nodes", self.dt_max_leaf_nodes),
            ("rf_n_estimators", self.rf_n_estimators),
            ("rf_min_samples_leaf", self.rf_min_samples_leaf),
            ("mlp_hidden", self.mlp_hidden),
            ("mlp_epochs", self.mlp_epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !(self.lr_l2 >= 0.0 && self.lr_l2.is_finite()) {
            return Err(Error::InvalidConfig("lr_l2 must be non-negative".into()));
        }
        if !(self.mlp_l2 >= 0.0 && self.mlp_l2.is_finite()) {
            return Err(Error::InvalidConfig("mlp_l2 must be non-negative".into()));
        }
        if !(self.mlp_learning_rate > 0.0 && self.mlp_learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("mlp_learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// A probability vector over the classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Posterior(Vec<f64>);

impl Posterior {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidPosterior(format!(
                "need at least two classes, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidPosterior(format!("entry {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidPosterior(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for Posterior {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Posterior::new(v)
    }
}

impl From<Posterior> for Vec<f64> {
    fn from(p: Posterior) -> Self {
        p.0
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax, in place.
pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Anything that maps a feature vector to a posterior.
pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn predict_proba(&self, x: &[f64]) -> Result<Posterior>;
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Model {
    Logistic(logistic::LogisticRegression),
    Tree(tree::DecisionTree),
    Forest(forest::RandomForest),
    Mlp(mlp::Mlp),
}

/// An immutable trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    kind: ModelKind,
    num_classes: usize,
    feature_dim: usize,
    train_seed: u64,
    model: Model,
}

impl TrainedClassifier {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
    }

    pub fn as_tree(&self) -> Option<&tree::DecisionTree> {
        match &self.model {
            Model::Tree(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_forest(&self) -> Option<&forest::RandomForest> {
        match &self.model {
            Model::Forest(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_logistic(&self) -> Option<&logistic::LogisticRegression> {
        match &self.model {
            Model::Logistic(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_mlp(&self) -> Option<&mlp::Mlp> {
        match &self.model {
            Model::Mlp(m) => Some(m),
            _ => None,
        }
    }

    /// Serializes into the `UAUD` binary envelope.
    pub fn to_bytes(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        codec::decode(bytes)
    }
}

impl Classifier for TrainedClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn predict_proba(&self, x: &[f64]) -> Result<Posterior> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: x.len(),
            });
        }
        let probs = match &self.model {
            Model::Logistic(m) => m.predict(x),
            Model::Tree(t) => t.predict(x).to_vec(),
            Model::Forest(f) => f.predict(x),
            Model::Mlp(m) => m.predict(x),
        };
        Ok(Posterior(probs))
    }
}

/// Trains a classifier of `kind` on `train_set`.
pub fn train(
    kind: ModelKind,
    params: &HyperParams,
    train_set: &SubsetHandle,
    seed: u64,
) -> Result<TrainedClassifier> {
    if train_set.is_empty() {
        return Err(Error::DegenerateTrainingSet("empty training set".into()));
    }
    let labels = train_set.labels();
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::DegenerateTrainingSet(
            "training set contains a single class".into(),
        ));
    }
    params.validate()?;
    let x = train_set.feature_matrix();
    fit(kind, params, &x, &labels, train_set.parent().num_classes(), seed)
}

pub(crate) fn fit(
    kind: ModelKind,
    params: &HyperParams,
    x: &Array2<f64>,
    y: &[usize],
    num_classes: usize,
    seed: u64,
) -> Result<TrainedClassifier> {
    let model = match kind {
        ModelKind::LogisticRegression => {
            Model::Logistic(logistic::LogisticRegression::fit(x, y, num_classes, params).0)
        }
        ModelKind::DecisionTree => Model::Tree(tree::DecisionTree::fit(
            x,
            y,
            None,
            num_classes,
            &tree::TreeGrowth::decision_tree(params),
            &mut crate::seed::rng(seed),
        )),
        ModelKind::RandomForest => {
            Model::Forest(forest::RandomForest::fit(x, y, num_classes, params, seed))
        }
        ModelKind::MultiLayerPerceptron => {
            Model::Mlp(mlp::Mlp::fit(x, y, num_classes, params, seed).0)
        }
    };
    Ok(TrainedClassifier {
        kind,
        num_classes,
        feature_dim: x.ncols(),
        train_seed: seed,
        model,
    })
}

/// Fraction of rows whose argmax posterior equals the label.
pub fn accuracy(model: &dyn Classifier, ds: &SubsetHandle) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let parent = ds.parent();
    let mut correct = 0usize;
    for &i in ds.indices() {
        let row = parent.row(i);
        let x = row.as_slice().expect("dataset rows are contiguous");
        if model.predict_proba(x)?.argmax() == parent.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Train accuracy minus test accuracy.
pub fn overfitting_level(
    model: &dyn Classifier,
    train_ds: &SubsetHandle,
    test_ds: &SubsetHandle,
) -> Result<f64> {
    Ok(accuracy(model, train_ds)? - accuracy(model, test_ds)?)
}
