//! Unlearning by retraining from scratch and by SISA sharding.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{EncodedDataset, SubsetHandle};
use crate::error::{Error, Result};
use crate::learners::codec::{read_header, write_header, Reader, Writer};
use crate::learners::{train, Classifier, HyperParams, ModelKind, Posterior, TrainedClassifier};
use crate::seed;

const SHARD_STREAM: u64 = 0x5348_4152_4453; // "SHARDS"
const SISA_MAGIC: &[u8; 4] = b"UASS";

/// Rows to forget, as indices into the parent dataset.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DeletionRequest {
    indices: Vec<usize>,
}

impl DeletionRequest {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.is_empty() {
            return Err(Error::InvalidRequest("empty deletion request".into()));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidRequest("duplicate index in request".into()));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Retrains on `train_set` minus the request, with the original's seed.
pub fn scratch_unlearn(
    train_set: &SubsetHandle,
    request: &DeletionRequest,
    kind: ModelKind,
    params: &HyperParams,
    seed: u64,
) -> Result<TrainedClassifier> {
    let remainder = train_set.without(request.indices())?;
    if remainder.is_empty() {
        return Err(Error::DegenerateTrainingSet(
            "nothing left after deletion".into(),
        ));
    }
    train(kind, params, &remainder, seed)
}

/// `k` sub-models on disjoint shards, aggregated by posterior average.
#[derive(Debug, Clone)]
pub struct SisaModel {
    shards: Vec<SubsetHandle>,
    sub_models: Vec<Arc<TrainedClassifier>>,
    kind: ModelKind,
    params: HyperParams,
    base_seed: u64,
}

impl PartialEq for SisaModel {
    fn eq(&self, other: &Self) -> bool {
        self.shards == other.shards
            && self.sub_models == other.sub_models
            && self.kind == other.kind
            && self.params == other.params
            && self.base_seed == other.base_seed
    }
}

fn shard_seed(base: u64, shard: usize) -> u64 {
    base.wrapping_add(shard as u64)
}

/// Partitions `train_set` into `k` shards of near-equal size (seeded
/// permutation, then contiguous chunks) and trains sub-model `i` with seed
/// `seed + i`.
pub fn sisa_train(
    train_set: &SubsetHandle,
    k: usize,
    kind: ModelKind,
    params: &HyperParams,
    seed: u64,
) -> Result<SisaModel> {
    if k == 0 || k > train_set.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} shards from {} samples",
            train_set.len()
        )));
    }
    let mut perm = train_set.indices().to_vec();
    perm.shuffle(&mut seed::rng(seed::derive(seed, &[SHARD_STREAM])));
    let (base, extra) = (perm.len() / k, perm.len() % k);
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        shards.push(SubsetHandle::new(
            Arc::clone(train_set.parent()),
            perm[start..start + size].to_vec(),
        )?);
        start += size;
    }
    let sub_models = shards
        .par_iter()
        .enumerate()
        .map(|(i, shard)| train(kind, params, shard, shard_seed(seed, i)).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    Ok(SisaModel {
        shards,
        sub_models,
        kind,
        params: params.clone(),
        base_seed: seed,
    })
}

/// Retrains exactly the shards that hold a requested index; the other
/// sub-models are shared with `model`.
pub fn sisa_unlearn(model: &SisaModel, request: &DeletionRequest) -> Result<SisaModel> {
    if let Some(&bad) = request
        .indices()
        .iter()
        .find(|&&i| !model.shards.iter().any(|s| s.contains(i)))
    {
        return Err(Error::InvalidRequest(format!(
            "index {bad} is not in the training set"
        )));
    }
    let updates = model
        .shards
        .par_iter()
        .enumerate()
        .map(|(i, shard)| {
            let hit: Vec<usize> = request
                .indices()
                .iter()
                .copied()
                .filter(|&x| shard.contains(x))
                .collect();
            if hit.is_empty() {
                return Ok((shard.clone(), Arc::clone(&model.sub_models[i])));
            }
            let remainder = shard.without(&hit)?;
            if remainder.is_empty() {
                return Err(Error::DegenerateTrainingSet(format!("shard {i} is empty after deletion")));
            }
            let retrained = train(model.kind, &model.params, &remainder, shard_seed(model.base_seed, i))?;
            Ok((remainder, Arc::new(retrained)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (shards, sub_models) = updates.into_iter().unzip();
    Ok(SisaModel {
        shards,
        sub_models,
        kind: model.kind,
        params: model.params.clone(),
        base_seed: model.base_seed,
    })
}

/// Arithmetic mean of the sub-model posteriors.
pub fn sisa_predict(model: &SisaModel, x: &[f64]) -> Result<Posterior> {
    let mut acc = vec![0.0; model.num_classes()];
    for sub in &model.sub_models {
        let p = sub.predict_proba(x)?;
        for (a, v) in acc.iter_mut().zip(p.probs()) {
            *a += v;
        }
    }
    let k = model.sub_models.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Posterior::new(acc)
}

impl SisaModel {
    pub fn k(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> &[SubsetHandle] {
        &self.shards
    }

    pub fn sub_models(&self) -> &[Arc<TrainedClassifier>] {
        &self.sub_models
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    /// Union of all shards.
    pub fn training_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.shards.iter().flat_map(|s| s.indices().iter().copied()).collect();
        all.sort_unstable();
        all
    }

    /// `"UASS" | version u16 | kind u8 | seed u64 | params | k u32 |
    /// k × (shard len u32, indices u32…, envelope len u32, UAUD envelope)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        write_header(&mut w, SISA_MAGIC);
        w.u8(self.kind.tag());
        w.u64(self.base_seed);
        let p = &self.params;
        w.f64(p.lr_l2);
        w.u32(p.lr_epochs);
        w.u32(p.dt_max_leaf_nodes);
        w.u32(p.rf_n_estimators);
        w.u32(p.rf_min_samples_leaf);
        w.u32(p.mlp_hidden);
        w.f64(p.mlp_learning_rate);
        w.f64(p.mlp_l2);
        w.u32(p.mlp_epochs);
        w.u32(self.shards.len());
        for (shard, sub) in self.shards.iter().zip(&self.sub_models) {
            w.u32(shard.len());
            for &i in shard.indices() {
                w.u32(i);
            }
            let env = sub.to_bytes();
            w.u32(env.len());
            w.0.extend_from_slice(&env);
        }
        w.0
    }

    /// Decodes a model whose shards index into `parent`.
    pub fn from_bytes(bytes: &[u8], parent: &Arc<EncodedDataset>) -> Result<Self> {
        let mut r = Reader::new(bytes);
        read_header(&mut r, SISA_MAGIC)?;
        let tag = r.u8()?;
        let kind = ModelKind::from_tag(tag)
            .ok_or_else(|| Error::Malformed(format!("unknown model kind tag {tag}")))?;
        let base_seed = r.u64()?;
        let params = HyperParams {
            lr_l2: r.f64()?,
            lr_epochs: r.u32()?,
            dt_max_leaf_nodes: r.u32()?,
            rf_n_estimators: r.u32()?,
            rf_min_samples_leaf: r.u32()?,
            mlp_hidden: r.u32()?,
            mlp_learning_rate: r.f64()?,
            mlp_l2: r.f64()?,
            mlp_epochs: r.u32()?,
        };
        let k = r.count(8)?;
        if k == 0 {
            return Err(Error::Malformed("SISA model without shards".into()));
        }
        let mut shards = Vec::with_capacity(k);
        let mut sub_models = Vec::with_capacity(k);
        for _ in 0..k {
            let len = r.count(4)?;
            let indices = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let shard = SubsetHandle::new(Arc::clone(parent), indices)
                .map_err(|e| Error::Malformed(e.to_string()))?;
            let env_len = r.count(1)?;
            let sub = TrainedClassifier::from_bytes(r.take(env_len)?)?;
            if sub.kind() != kind {
                return Err(Error::Malformed("sub-model kind mismatch".into()));
            }
            shards.push(shard);
            sub_models.push(Arc::new(sub));
        }
        r.finish()?;
        let dims = (sub_models[0].num_classes(), sub_models[0].feature_dim());
        if sub_models.iter().any(|m| (m.num_classes(), m.feature_dim()) != dims) {
            return Err(Error::Malformed("sub-model dimension mismatch".into()));
        }
        Ok(Self {
            shards,
            sub_models,
            kind,
            params,
            base_seed,
        })
    }
}

impl Classifier for SisaModel {
    fn num_classes(&self) -> usize {
        self.sub_models[0].num_classes()
    }

    fn feature_dim(&self) -> usize {
        self.sub_models[0].feature_dim()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<Posterior> {
        sisa_predict(self, x)
    }
}
