//! Populations of original models and their unlearned counterparts, and the
//! labelled posterior pairs queried from them.
//!
//! The same code builds the adversary's shadow farm (attack training data)
//! and the target farm (evaluation data).

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{sample_subsets, EncodedDataset, SubsetHandle};
use crate::error::{Error, Result};
use crate::learners::{train, Classifier, HyperParams, ModelKind, Posterior, TrainedClassifier};
use crate::seed;
use crate::unlearn::{scratch_unlearn, sisa_train, sisa_unlearn, DeletionRequest, SisaModel};

const SUBSET_STREAM: u64 = 1;
const REQUEST_STREAM: u64 = 2;
const MODEL_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlearnMethod {
    Scratch,
    Sisa { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmConfig {
    pub n_originals: usize,
    pub samples_per_original: usize,
    pub n_unlearned_per_original: usize,
    #[serde(default = "one")]
    pub group_size: usize,
    #[serde(default = "scratch")]
    pub unlearn_method: UnlearnMethod,
    pub model_kind: ModelKind,
    #[serde(default)]
    pub params: HyperParams,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn scratch() -> UnlearnMethod {
    UnlearnMethod::Scratch
}

impl FarmConfig {
    /// 20 originals of 5000 samples, 100 unlearned models each.
    pub fn full_scale(model_kind: ModelKind) -> Self {
        Self {
            n_originals: 20,
            samples_per_original: 5000,
            n_unlearned_per_original: 100,
            group_size: 1,
            unlearn_method: UnlearnMethod::Scratch,
            model_kind,
            params: HyperParams::default(),
            seed: 0,
        }
    }

    /// 5 originals of 1000 samples, 20 unlearned models each.
    pub fn desk_scale(model_kind: ModelKind) -> Self {
        Self {
            n_originals: 5,
            samples_per_original: 1000,
            n_unlearned_per_original: 20,
            ..Self::full_scale(model_kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_originals", self.n_originals),
            ("samples_per_original", self.samples_per_original),
            ("n_unlearned_per_original", self.n_unlearned_per_original),
            ("group_size", self.group_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        let deleted = self.group_size * self.n_unlearned_per_original;
        if deleted > self.samples_per_original {
            return Err(Error::InvalidConfig(format!(
                "{deleted} deleted samples per original exceed samples_per_original = {}",
                self.samples_per_original
            )));
        }
        if let UnlearnMethod::Sisa { k } = self.unlearn_method {
            if k == 0 || k > self.samples_per_original {
                return Err(Error::InvalidConfig(format!("invalid SISA shard count {k}")));
            }
        }
        self.params.validate()
    }
}

/// A farm model: a single classifier or a SISA ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum FarmModel {
    Single(Arc<TrainedClassifier>),
    Sisa(Arc<SisaModel>),
}

impl FarmModel {
    fn classifier(&self) -> &dyn Classifier {
        match self {
            FarmModel::Single(m) => m.as_ref(),
            FarmModel::Sisa(m) => m.as_ref(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            FarmModel::Single(m) => m.to_bytes(),
            FarmModel::Sisa(m) => m.to_bytes(),
        }
    }

    /// Decodes either envelope, dispatching on the magic bytes.
    pub fn from_bytes(bytes: &[u8], parent: &Arc<EncodedDataset>) -> Result<Self> {
        if bytes.starts_with(b"UASS") {
            Ok(FarmModel::Sisa(Arc::new(SisaModel::from_bytes(bytes, parent)?)))
        } else {
            Ok(FarmModel::Single(Arc::new(TrainedClassifier::from_bytes(bytes)?)))
        }
    }

    /// Posterior for row `index` of `parent`.
    pub fn query(&self, parent: &EncodedDataset, index: usize) -> Result<Posterior> {
        let row = parent.row(index);
        self.predict_proba(row.as_slice().expect("dataset rows are contiguous"))
    }
}

impl Classifier for FarmModel {
    fn num_classes(&self) -> usize {
        self.classifier().num_classes()
    }

    fn feature_dim(&self) -> usize {
        self.classifier().feature_dim()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<Posterior> {
        self.classifier().predict_proba(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnedEntry {
    pub request: DeletionRequest,
    pub model: FarmModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OriginalEntry {
    pub train_set: SubsetHandle,
    pub seed: u64,
    pub model: FarmModel,
    pub unlearned: Vec<UnlearnedEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Farm {
    pub config: FarmConfig,
    pub originals: Vec<OriginalEntry>,
}

impl Farm {
    pub fn parent(&self) -> &Arc<EncodedDataset> {
        self.originals[0].train_set.parent()
    }

    pub fn num_classes(&self) -> usize {
        self.parent().num_classes()
    }

    pub fn n_unlearned(&self) -> usize {
        self.originals.iter().map(|o| o.unlearned.len()).sum()
    }

    /// Training set of unlearned model `request` of original `original`.
    pub fn unlearned_train_set(&self, original: usize, request: usize) -> Result<SubsetHandle> {
        let o = &self.originals[original];
        o.train_set.without(o.unlearned[request].request.indices())
    }
}

fn train_model(
    config: &FarmConfig,
    train_set: &SubsetHandle,
    seed: u64,
) -> Result<FarmModel> {
    Ok(match config.unlearn_method {
        UnlearnMethod::Scratch => {
            FarmModel::Single(Arc::new(train(config.model_kind, &config.params, train_set, seed)?))
        }
        UnlearnMethod::Sisa { k } => FarmModel::Sisa(Arc::new(sisa_train(
            train_set,
            k,
            config.model_kind,
            &config.params,
            seed,
        )?)),
    })
}

fn unlearn_model(
    config: &FarmConfig,
    original: &OriginalEntry,
    request: &DeletionRequest,
) -> Result<FarmModel> {
    Ok(match &original.model {
        FarmModel::Single(_) => FarmModel::Single(Arc::new(scratch_unlearn(
            &original.train_set,
            request,
            config.model_kind,
            &config.params,
            original.seed,
        )?)),
        FarmModel::Sisa(m) => FarmModel::Sisa(Arc::new(sisa_unlearn(m, request)?)),
    })
}

/// Trains the originals on independently sampled subsets of `positive_pool`,
/// draws disjoint deletion requests for each and unlearns them.
///
/// Each unlearned model is retrained with its original's seed, so it differs
/// from the original only through the deleted samples.
pub fn build_farm(positive_pool: &SubsetHandle, config: &FarmConfig) -> Result<Farm> {
    config.validate()?;
    let subsets = sample_subsets(
        positive_pool,
        config.n_originals,
        config.samples_per_original,
        seed::derive(config.seed, &[SUBSET_STREAM]),
    )?;
    let originals = subsets
        .into_par_iter()
        .enumerate()
        .map(|(i, train_set)| {
            let model_seed = seed::derive(config.seed, &[MODEL_STREAM, i as u64]);
            let model = train_model(config, &train_set, model_seed)?;
            let mut rng = seed::rng(seed::derive(config.seed, &[REQUEST_STREAM, i as u64]));
            let picked = index::sample(
                &mut rng,
                train_set.len(),
                config.group_size * config.n_unlearned_per_original,
            )
            .into_vec();
            let requests = picked
                .chunks(config.group_size)
                .map(|chunk| {
                    DeletionRequest::new(chunk.iter().map(|&k| train_set.indices()[k]).collect())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((train_set, model_seed, model, requests))
        })
        .collect::<Result<Vec<_>>>()?;

    let units: Vec<(usize, usize)> = originals
        .iter()
        .enumerate()
        .flat_map(|(i, o)| (0..o.3.len()).map(move |j| (i, j)))
        .collect();
    let skeleton: Vec<OriginalEntry> = originals
        .iter()
        .map(|(train_set, seed, model, _)| OriginalEntry {
            train_set: train_set.clone(),
            seed: *seed,
            model: model.clone(),
            unlearned: Vec::new(),
        })
        .collect();
    let unlearned = units
        .par_iter()
        .map(|&(i, j)| unlearn_model(config, &skeleton[i], &originals[i].3[j]))
        .collect::<Result<Vec<_>>>()?;

    let mut entries = skeleton;
    for ((i, j), model) in units.into_iter().zip(unlearned) {
        entries[i].unlearned.push(UnlearnedEntry {
            request: originals[i].3[j].clone(),
            model,
        });
    }
    Ok(Farm {
        config: config.clone(),
        originals: entries,
    })
}

/// Two posteriors for one queried sample, with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePair {
    pub posterior_original: Posterior,
    pub posterior_unlearned: Posterior,
    pub is_positive: bool,
    pub sample_true_label: usize,
    /// (original index, request index)
    pub origin: (usize, usize),
    pub sample_index: usize,
}

fn query_pair(
    farm: &Farm,
    parent: &EncodedDataset,
    (i, j): (usize, usize),
    sample: usize,
    is_positive: bool,
) -> Result<CasePair> {
    let o = &farm.originals[i];
    Ok(CasePair {
        posterior_original: o.model.query(parent, sample)?,
        posterior_unlearned: o.unlearned[j].model.query(parent, sample)?,
        is_positive,
        sample_true_label: parent.labels()[sample],
        origin: (i, j),
        sample_index: sample,
    })
}

/// One case per deleted sample of every request.
pub fn positive_cases(farm: &Farm) -> Result<Vec<CasePair>> {
    let parent = farm.parent();
    let jobs: Vec<((usize, usize), usize)> = farm
        .originals
        .iter()
        .enumerate()
        .flat_map(|(i, o)| {
            o.unlearned.iter().enumerate().flat_map(move |(j, u)| {
                u.request.indices().iter().map(move |&s| ((i, j), s))
            })
        })
        .collect();
    jobs.par_iter()
        .map(|&(origin, s)| query_pair(farm, parent, origin, s, true))
        .collect()
}

/// `count` non-member cases: a uniform original, a uniform sample of
/// `negative_pool` and a uniform unlearned model of that original, drawn
/// with replacement.
pub fn negative_cases(
    farm: &Farm,
    negative_pool: &SubsetHandle,
    count: usize,
    seed: u64,
) -> Result<Vec<CasePair>> {
    if negative_pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if count == 0 {
        return Err(Error::InvalidArgument("negative case count must be positive".into()));
    }
    if !negative_pool.shares_parent(&farm.originals[0].train_set) {
        return Err(Error::InvalidArgument(
            "negative pool and farm index different datasets".into(),
        ));
    }
    let mut rng = seed::rng(seed);
    let jobs: Vec<((usize, usize), usize)> = (0..count)
        .map(|_| {
            let i = rng.random_range(0..farm.originals.len());
            let s = negative_pool.indices()[rng.random_range(0..negative_pool.len())];
            let j = rng.random_range(0..farm.originals[i].unlearned.len());
            ((i, j), s)
        })
        .collect();
    let parent = farm.parent();
    jobs.par_iter()
        .map(|&(origin, s)| query_pair(farm, parent, origin, s, false))
        .collect()
}

/// Checks the membership ground truth of `cases` against the farm's
/// bookkeeping: positives were trained on by the original and not by the
/// unlearned model, negatives by neither.
pub fn audit_membership(farm: &Farm, cases: &[CasePair]) -> Result<()> {
    for c in cases {
        let (i, j) = c.origin;
        let o = farm
            .originals
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("no original {i}")))?;
        let u = o
            .unlearned
            .get(j)
            .ok_or_else(|| Error::InvalidArgument(format!("no unlearned model {j} of original {i}")))?;
        let in_original = o.train_set.contains(c.sample_index);
        let deleted = u.request.indices().binary_search(&c.sample_index).is_ok();
        let in_unlearned = in_original && !deleted;
        if let FarmModel::Sisa(m) = &u.model {
            if m.training_indices().binary_search(&c.sample_index).is_ok() != in_unlearned {
                return Err(Error::InvalidArgument(format!(
                    "SISA shards disagree with the request for sample {}",
                    c.sample_index
                )));
            }
        }
        let ok = if c.is_positive {
            in_original && !in_unlearned
        } else {
            !in_original && !in_unlearned
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "membership ground truth violated for sample {} at {:?}",
                c.sample_index, c.origin
            )));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    key: String,
    config: FarmConfig,
    originals: Vec<ManifestOriginal>,
}

#[derive(Serialize, Deserialize)]
struct ManifestOriginal {
    seed: u64,
    train_indices: Vec<usize>,
    model_file: String,
    unlearned: Vec<ManifestUnlearned>,
}

#[derive(Serialize, Deserialize)]
struct ManifestUnlearned {
    request: Vec<usize>,
    model_file: String,
}

/// Content hash of the dataset, the pool and the farm config.
pub fn cache_key(pool: &SubsetHandle, config: &FarmConfig) -> String {
    let mut h = Sha256::new();
    let ds = pool.parent();
    for v in ds.features() {
        h.update(v.to_le_bytes());
    }
    for &l in ds.labels() {
        h.update((l as u64).to_le_bytes());
    }
    for &i in pool.indices() {
        h.update((i as u64).to_le_bytes());
    }
    h.update(serde_json::to_vec(config).expect("config serializes"));
    hex::encode(h.finalize())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

impl Farm {
    /// Writes one envelope per model plus `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path, key: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut originals = Vec::with_capacity(self.originals.len());
        for (i, o) in self.originals.iter().enumerate() {
            let model_file = format!("original_{i}.bin");
            write_file(&dir.join(&model_file), &o.model.to_bytes())?;
            let mut unlearned = Vec::with_capacity(o.unlearned.len());
            for (j, u) in o.unlearned.iter().enumerate() {
                let file = format!("original_{i}_unlearned_{j}.bin");
                write_file(&dir.join(&file), &u.model.to_bytes())?;
                unlearned.push(ManifestUnlearned {
                    request: u.request.indices().to_vec(),
                    model_file: file,
                });
            }
            originals.push(ManifestOriginal {
                seed: o.seed,
                train_indices: o.train_set.indices().to_vec(),
                model_file,
                unlearned,
            });
        }
        let manifest = Manifest {
            key: key.to_owned(),
            config: self.config.clone(),
            originals,
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_vec_pretty(&manifest)?;
        write_file(&path, &json)
    }

    /// Loads a farm saved under `key`; `None` when `dir` holds no farm or a
    /// farm for a different key.
    pub fn load(dir: &Path, key: &str, parent: &Arc<EncodedDataset>) -> Result<Option<Farm>> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Ok(None);
        }
        let manifest: Manifest = serde_json::from_slice(&read_file(&path)?)?;
        if manifest.key != key {
            return Ok(None);
        }
        let mut originals = Vec::with_capacity(manifest.originals.len());
        for o in manifest.originals {
            let model = FarmModel::from_bytes(&read_file(&dir.join(&o.model_file))?, parent)?;
            let unlearned = o
                .unlearned
                .into_iter()
                .map(|u| {
                    Ok(UnlearnedEntry {
                        request: DeletionRequest::new(u.request)?,
                        model: FarmModel::from_bytes(&read_file(&dir.join(&u.model_file))?, parent)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            originals.push(OriginalEntry {
                train_set: SubsetHandle::new(Arc::clone(parent), o.train_indices)?,
                seed: o.seed,
                model,
                unlearned,
            });
        }
        Ok(Some(Farm {
            config: manifest.config,
            originals,
        }))
    }
}

/// [`build_farm`] backed by a cache directory: a farm with a matching key
/// under `cache_dir/<key>` is loaded instead of retrained.
pub fn build_farm_cached(
    positive_pool: &SubsetHandle,
    config: &FarmConfig,
    cache_dir: Option<&Path>,
) -> Result<Farm> {
    let Some(root) = cache_dir else {
        return build_farm(positive_pool, config);
    };
    let key = cache_key(positive_pool, config);
    let dir = root.join(&key);
    if let Some(farm) = Farm::load(&dir, &key, positive_pool.parent())? {
        return Ok(farm);
    }
    let farm = build_farm(positive_pool, config)?;
    farm.save(&dir, &key)?;
    Ok(farm)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use ndarray::Array2;

    use super::*;

    fn pool(n: usize) -> SubsetHandle {
        let x = Array2::from_shape_fn((n, 3), |(i, j)| ((i * (5 + 2 * j)) % 23) as f64 / 22.0);
        let y: Vec<usize> = (0..n).map(|i| usize::from((i * 5) % 23 > 11)).collect();
        let ds = EncodedDataset::new(x, y, 2, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        SubsetHandle::full(Arc::new(ds))
    }

    fn config(n_originals: usize, size: usize, n_unlearned: usize, group: usize) -> FarmConfig {
        FarmConfig {
            n_originals,
            samples_per_original: size,
            n_unlearned_per_original: n_unlearned,
            group_size: group,
            seed: 17,
            ..FarmConfig::desk_scale(ModelKind::DecisionTree)
        }
    }

    #[test]
    fn counts_and_disjoint_requests() {
        let p = pool(400);
        let farm = build_farm(&p, &config(2, 100, 3, 1)).unwrap();
        assert_eq!(farm.originals.len(), 2);
        assert_eq!(farm.n_unlearned(), 6);
        for o in &farm.originals {
            let deleted: HashSet<usize> = o.unlearned.iter().flat_map(|u| u.request.indices().to_vec()).collect();
            assert_eq!(deleted.len(), 3);
            assert!(deleted.iter().all(|&s| o.train_set.contains(s)));
        }
        assert_eq!(positive_cases(&farm).unwrap().len(), 6);

        let farm = build_farm(&p, &config(1, 100, 5, 10)).unwrap();
        let deleted: HashSet<usize> =
            farm.originals[0].unlearned.iter().flat_map(|u| u.request.indices().to_vec()).collect();
        assert_eq!(deleted.len(), 50);
        assert_eq!(positive_cases(&farm).unwrap().len(), 50);

        assert!(matches!(
            build_farm(&p, &config(1, 100, 11, 10)),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            build_farm(&p, &config(1, 500, 1, 1)),
            Err(Error::PoolTooSmall { .. })
        ));
    }

    #[test]
    fn unlearned_models_match_scratch_retraining() {
        let p = pool(300);
        let cfg = config(2, 120, 2, 2);
        let farm = build_farm(&p, &cfg).unwrap();
        for (i, o) in farm.originals.iter().enumerate() {
            for (j, u) in o.unlearned.iter().enumerate() {
                let expected = train(cfg.model_kind, &cfg.params, &farm.unlearned_train_set(i, j).unwrap(), o.seed).unwrap();
                assert_eq!(u.model, FarmModel::Single(Arc::new(expected)));
            }
        }
    }

    #[test]
    fn cases_are_balanced_audited_and_deterministic() {
        let p = pool(600);
        let halves = p.split(&[0.5, 0.5], 3).unwrap();
        let farm = build_farm(&halves[0], &config(3, 100, 4, 1)).unwrap();
        let pos = positive_cases(&farm).unwrap();
        let neg = negative_cases(&farm, &halves[1], pos.len(), 5).unwrap();
        assert_eq!(neg.len(), pos.len());
        assert!(pos.iter().chain(&neg).all(|c| c.posterior_original.len() == c.posterior_unlearned.len()));
        audit_membership(&farm, &pos).unwrap();
        audit_membership(&farm, &neg).unwrap();
        assert_eq!(neg, negative_cases(&farm, &halves[1], pos.len(), 5).unwrap());
        assert_eq!(farm, build_farm(&halves[0], &config(3, 100, 4, 1)).unwrap());

        let mut flipped = pos[0].clone();
        flipped.is_positive = false;
        assert!(audit_membership(&farm, &[flipped]).is_err());
    }

    #[test]
    fn single_pair_farm_reuses_the_pair() {
        let p = pool(300);
        let halves = p.split(&[0.5, 0.5], 1).unwrap();
        let farm = build_farm(&halves[0], &config(1, 60, 1, 1)).unwrap();
        let neg = negative_cases(&farm, &halves[1], 20, 2).unwrap();
        assert!(neg.iter().all(|c| c.origin == (0, 0)));
    }

    #[test]
    fn sisa_farm_and_cache_round_trip() {
        let p = pool(400);
        let cfg = FarmConfig {
            unlearn_method: UnlearnMethod::Sisa { k: 3 },
            ..config(2, 120, 3, 1)
        };
        let dir = tempfile::tempdir().unwrap();
        let built = build_farm_cached(&p, &cfg, Some(dir.path())).unwrap();
        let pos = positive_cases(&built).unwrap();
        audit_membership(&built, &pos).unwrap();
        let loaded = build_farm_cached(&p, &cfg, Some(dir.path())).unwrap();
        assert_eq!(loaded, built);
        assert_eq!(positive_cases(&loaded).unwrap(), pos);
    }
}
