//! Attack features built from an (original, unlearned) posterior pair, and
//! the output-truncating defenses together with the adversary's
//! reconstruction of a full posterior from what was published.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::Posterior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMethod {
    DirectConcat,
    SortedConcat,
    DirectDiff,
    SortedDiff,
    EucDist,
}

impl FeatureMethod {
    pub const ALL: [FeatureMethod; 5] = [
        FeatureMethod::DirectConcat,
        FeatureMethod::SortedConcat,
        FeatureMethod::DirectDiff,
        FeatureMethod::SortedDiff,
        FeatureMethod::EucDist,
    ];

    /// Feature length for posteriors over `num_classes` classes.
    pub fn output_len(self, num_classes: usize) -> usize {
        match self {
            FeatureMethod::DirectConcat | FeatureMethod::SortedConcat => 2 * num_classes,
            FeatureMethod::DirectDiff | FeatureMethod::SortedDiff => num_classes,
            FeatureMethod::EucDist => 1,
        }
    }

    fn is_sorted(self) -> bool {
        matches!(self, FeatureMethod::SortedConcat | FeatureMethod::SortedDiff)
    }
}

impl fmt::Display for FeatureMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FeatureMethod::DirectConcat => "direct_concat",
            FeatureMethod::SortedConcat => "sorted_concat",
            FeatureMethod::DirectDiff => "direct_diff",
            FeatureMethod::SortedDiff => "sorted_diff",
            FeatureMethod::EucDist => "euc_dist",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub method: FeatureMethod,
}

/// Indices of `p` in descending order of value; equal values keep their
/// index order.
pub fn descending_order(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    order
}

pub fn construct(method: FeatureMethod, po: &Posterior, pu: &Posterior) -> Result<FeatureVector> {
    if po.len() != pu.len() {
        return Err(Error::DimensionMismatch {
            expected: po.len(),
            found: pu.len(),
        });
    }
    let (o, u) = (po.probs(), pu.probs());
    let (o, u): (Vec<f64>, Vec<f64>) = if method.is_sorted() {
        descending_order(o).into_iter().map(|i| (o[i], u[i])).unzip()
    } else {
        (o.to_vec(), u.to_vec())
    };
    let values = match method {
        FeatureMethod::DirectConcat | FeatureMethod::SortedConcat => [o, u].concat(),
        FeatureMethod::DirectDiff | FeatureMethod::SortedDiff => {
            o.iter().zip(&u).map(|(a, b)| a - b).collect()
        }
        FeatureMethod::EucDist => {
            vec![o.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()]
        }
    };
    Ok(FeatureVector { values, method })
}

/// Full posterior from `k` published `(class, confidence)` pairs, spreading
/// the unpublished mass evenly over the other `num_classes - k` classes.
pub fn pseudo_posterior_topk(published: &[(usize, f64)], num_classes: usize) -> Result<Posterior> {
    let k = published.len();
    if k == 0 || k >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "top-k needs 1 <= k < {num_classes}, got k = {k}"
        )));
    }
    let mut out = vec![f64::NAN; num_classes];
    let mut sum = 0.0;
    for (pos, &(class, conf)) in published.iter().enumerate() {
        if class >= num_classes || !out[class].is_nan() {
            return Err(Error::InvalidArgument(format!(
                "published class {class} is out of range or repeated"
            )));
        }
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::InvalidPosterior(format!("published confidence {conf}")));
        }
        if pos > 0 && conf > published[pos - 1].1 {
            return Err(Error::InvalidArgument(
                "published confidences must be non-increasing".into(),
            ));
        }
        out[class] = conf;
        sum += conf;
    }
    if sum > 1.0 + Posterior::SUM_TOLERANCE {
        return Err(Error::InvalidPosterior(format!(
            "published confidences sum to {sum}"
        )));
    }
    let rest = (1.0 - sum).max(0.0) / (num_classes - k) as f64;
    for v in out.iter_mut().filter(|v| v.is_nan()) {
        *v = rest;
    }
    Posterior::new(out)
}

/// One-hot posterior at `label`.
pub fn pseudo_posterior_label(label: usize, num_classes: usize) -> Result<Posterior> {
    if label >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {num_classes} classes"
        )));
    }
    let mut out = vec![0.0; num_classes];
    out[label] = 1.0;
    Posterior::new(out)
}

/// What the model owner releases for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defense {
    #[default]
    None,
    /// The `k` largest entries, each with its class.
    TopK(usize),
    /// Only the predicted class.
    LabelOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Published {
    Full(Posterior),
    TopK(Vec<(usize, f64)>),
    Label(usize),
}

impl Defense {
    pub fn validate(self, num_classes: usize) -> Result<()> {
        match self {
            Defense::TopK(k) if k == 0 || k >= num_classes => Err(Error::InvalidConfig(format!(
                "top-k defense needs 1 <= k < {num_classes}, got {k}"
            ))),
            _ => Ok(()),
        }
    }

    /// The owner's side: truncate `p` before release.
    pub fn publish(self, p: &Posterior) -> Published {
        match self {
            Defense::None => Published::Full(p.clone()),
            Defense::TopK(k) => Published::TopK(
                descending_order(p.probs())
                    .into_iter()
                    .take(k)
                    .map(|i| (i, p.probs()[i]))
                    .collect(),
            ),
            Defense::LabelOnly => Published::Label(p.argmax()),
        }
    }

    /// The adversary's side: rebuild a full posterior.
    pub fn reconstruct(published: Published, num_classes: usize) -> Result<Posterior> {
        match published {
            Published::Full(p) => Ok(p),
            Published::TopK(pairs) => pseudo_posterior_topk(&pairs, num_classes),
            Published::Label(label) => pseudo_posterior_label(label, num_classes),
        }
    }

    /// Publish then reconstruct.
    pub fn apply(self, p: &Posterior) -> Result<Posterior> {
        self.validate(p.len())?;
        Self::reconstruct(self.publish(p), p.len())
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defense::None => f.write_str("none"),
            Defense::TopK(k) => write!(f, "top_{k}"),
            Defense::LabelOnly => f.write_str("label_only"),
        }
    }
}
