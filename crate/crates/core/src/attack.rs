//! The binary attack model over two-posterior features, and the classical
//! membership inference baseline over a single sorted posterior.
//!
//! Both apply the configured defense to every posterior they see, at
//! training and at inference time, so a defended run has no separate code
//! path. Class 1 is "member".

use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;

use crate::data::SubsetHandle;
use crate::error::{Error, Result};
use crate::farm::{CasePair, Farm};
use crate::features::{construct, descending_order, Defense, FeatureMethod};
use crate::learners::{fit, Classifier, HyperParams, ModelKind, Posterior, TrainedClassifier};
use crate::seed;

const MEMBER: usize = 1;
const NEGATIVE_STREAM: u64 = 0x4E45_47;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackClassifier {
    inner: TrainedClassifier,
    method: FeatureMethod,
    defense: Defense,
    num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineClassifier {
    inner: TrainedClassifier,
    defense: Defense,
    num_classes: usize,
}

fn check_len(expected: usize, p: &Posterior) -> Result<()> {
    if p.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: p.len(),
        });
    }
    Ok(())
}

/// Attack features of one pair after the defense.
pub fn attack_features(
    method: FeatureMethod,
    defense: Defense,
    po: &Posterior,
    pu: &Posterior,
) -> Result<Vec<f64>> {
    Ok(construct(method, &defense.apply(po)?, &defense.apply(pu)?)?.values)
}

/// Baseline features: the defended original posterior, sorted descending.
pub fn baseline_features(defense: Defense, po: &Posterior) -> Result<Vec<f64>> {
    let p = defense.apply(po)?;
    Ok(descending_order(p.probs()).into_iter().map(|i| p.probs()[i]).collect())
}

fn check_balance(labels: &[usize]) -> Result<()> {
    let positives = labels.iter().filter(|&&l| l == MEMBER).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateTrainingSet(
            "attack training needs both members and non-members".into(),
        ));
    }
    if positives != negatives {
        return Err(Error::Imbalanced {
            positives,
            negatives,
        });
    }
    Ok(())
}

fn fit_binary(
    rows: Vec<Vec<f64>>,
    labels: &[usize],
    kind: ModelKind,
    params: &HyperParams,
    seed: u64,
) -> Result<TrainedClassifier> {
    check_balance(labels)?;
    params.validate()?;
    let dim = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let x = Array2::from_shape_vec((labels.len(), dim), flat)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fit(kind, params, &x, labels, 2, seed)
}

/// Trains the attack on balanced shadow cases.
pub fn train_attack(
    cases: &[CasePair],
    method: FeatureMethod,
    defense: Defense,
    kind: ModelKind,
    params: &HyperParams,
    seed: u64,
) -> Result<AttackClassifier> {
    let Some(first) = cases.first() else {
        return Err(Error::DegenerateTrainingSet("no attack cases".into()));
    };
    let num_classes = first.posterior_original.len();
    defense.validate(num_classes).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let rows = cases
        .par_iter()
        .map(|c| {
            check_len(num_classes, &c.posterior_original)?;
            check_len(num_classes, &c.posterior_unlearned)?;
            attack_features(method, defense, &c.posterior_original, &c.posterior_unlearned)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = cases.iter().map(|c| usize::from(c.is_positive)).collect();
    Ok(AttackClassifier {
        inner: fit_binary(rows, &labels, kind, params, seed)?,
        method,
        defense,
        num_classes,
    })
}

impl AttackClassifier {
    pub fn inner(&self) -> &TrainedClassifier {
        &self.inner
    }

    pub fn method(&self) -> FeatureMethod {
        self.method
    }

    pub fn defense(&self) -> Defense {
        self.defense
    }
}

/// Attack confidence that the queried sample was deleted, i.e. was a member
/// of the original model's training set.
pub fn infer(attack: &AttackClassifier, po: &Posterior, pu: &Posterior) -> Result<f64> {
    check_len(attack.num_classes, po)?;
    check_len(attack.num_classes, pu)?;
    let f = attack_features(attack.method, attack.defense, po, pu)?;
    Ok(attack.inner.predict_proba(&f)?.probs()[MEMBER])
}

/// Trains the baseline from member and non-member posteriors of the
/// original models.
pub fn train_baseline_on(
    members: &[Posterior],
    non_members: &[Posterior],
    defense: Defense,
    kind: ModelKind,
    params: &HyperParams,
    seed: u64,
) -> Result<BaselineClassifier> {
    let Some(first) = members.first().or(non_members.first()) else {
        return Err(Error::DegenerateTrainingSet("no baseline cases".into()));
    };
    let num_classes = first.len();
    defense.validate(num_classes).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let rows = members
        .par_iter()
        .chain(non_members.par_iter())
        .map(|p| {
            check_len(num_classes, p)?;
            baseline_features(defense, p)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = std::iter::repeat_n(MEMBER, members.len())
        .chain(std::iter::repeat_n(0, non_members.len()))
        .collect();
    Ok(BaselineClassifier {
        inner: fit_binary(rows, &labels, kind, params, seed)?,
        defense,
        num_classes,
    })
}

/// Pools every original of `farm`: members are each original's own training
/// samples, non-members an equal number of draws (with replacement) from
/// `negative_pool`, all queried on that original.
pub fn train_baseline(
    farm: &Farm,
    negative_pool: &SubsetHandle,
    defense: Defense,
    kind: ModelKind,
    params: &HyperParams,
    seed: u64,
) -> Result<BaselineClassifier> {
    if negative_pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let parent = farm.parent();
    let mut rng = seed::rng(seed::derive(seed, &[NEGATIVE_STREAM]));
    let mut jobs: Vec<(usize, usize, bool)> = Vec::new();
    for (i, o) in farm.originals.iter().enumerate() {
        jobs.extend(o.train_set.indices().iter().map(|&s| (i, s, true)));
        jobs.extend((0..o.train_set.len()).map(|_| {
            let s = negative_pool.indices()[rng.random_range(0..negative_pool.len())];
            (i, s, false)
        }));
    }
    let posteriors = jobs
        .par_iter()
        .map(|&(i, s, _)| farm.originals[i].model.query(parent, s))
        .collect::<Result<Vec<_>>>()?;
    let (members, non_members): (Vec<_>, Vec<_>) = posteriors
        .into_iter()
        .zip(&jobs)
        .partition(|(_, job)| job.2);
    let strip = |v: Vec<(Posterior, &(usize, usize, bool))>| v.into_iter().map(|(p, _)| p).collect::<Vec<_>>();
    train_baseline_on(&strip(members), &strip(non_members), defense, kind, params, seed)
}

impl BaselineClassifier {
    pub fn inner(&self) -> &TrainedClassifier {
        &self.inner
    }
}

/// Baseline membership confidence from the original model's posterior alone.
pub fn infer_baseline(baseline: &BaselineClassifier, po: &Posterior) -> Result<f64> {
    check_len(baseline.num_classes, po)?;
    let f = baseline_features(baseline.defense, po)?;
    Ok(baseline.inner.predict_proba(&f)?.probs()[MEMBER])
}
