//! Config-driven experiments: split the data, build shadow and target farms,
//! train the attack and the baseline on shadow cases, score target cases and
//! report the metrics for every (attack kind, feature method) cell.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{infer, infer_baseline, train_attack, train_baseline};
use crate::data::{encode, load_csv, EncodeOptions, EncodedDataset, SubsetHandle};
use crate::error::{Error, Result};
use crate::farm::{build_farm_cached, negative_cases, positive_cases, CasePair, Farm, FarmConfig};
use crate::features::{Defense, FeatureMethod};
use crate::learners::{overfitting_level, HyperParams, ModelKind};
use crate::metrics::{evaluate, EvalRecord, MetricsReport};
use crate::seed;

pub const SCHEMA_VERSION: u32 = 1;

const SPLIT_STREAM: u64 = 10;
const SHADOW: u64 = 1;
const TARGET: u64 = 2;
const NEGATIVE_STREAM: u64 = 11;
const ATTACK_STREAM: u64 = 12;
const BASELINE_STREAM: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub label_column: String,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    #[serde(default)]
    pub drop_columns: Vec<String>,
}

impl DatasetConfig {
    pub fn encode_options(&self) -> EncodeOptions {
        EncodeOptions {
            label_column: self.label_column.clone(),
            categorical_columns: self.categorical_columns.clone(),
            drop_columns: self.drop_columns.clone(),
        }
    }

    pub fn load(&self) -> Result<EncodedDataset> {
        let raw = load_csv(&self.path, &self.label_column, &self.categorical_columns)?;
        encode(&raw, &self.encode_options())
    }
}

/// `target_fraction` of the rows go to the target side, the rest to the
/// shadow side; each side is then cut into a positive pool
/// (`positive_fraction`) and a negative pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub target_fraction: f64,
    pub positive_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            target_fraction: 0.5,
            positive_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// When set, the shadow side is drawn from this dataset instead.
    #[serde(default)]
    pub shadow_dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitConfig,
    pub target_farm: FarmConfig,
    pub shadow_farm: FarmConfig,
    pub attack_kinds: Vec<ModelKind>,
    pub feature_methods: Vec<FeatureMethod>,
    #[serde(default)]
    pub defense: Defense,
    #[serde(default)]
    pub attack_params: HyperParams,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses a JSON config; relative paths inside it are resolved against
    /// the config file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.dataset.path);
        if let Some(d) = config.shadow_dataset.as_mut() {
            resolve(&mut d.path);
        }
        if let Some(d) = config.output_dir.as_mut() {
            resolve(d);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fraction_ok = |f: f64| f > 0.0 && f < 1.0;
        if !fraction_ok(self.split.target_fraction) || !fraction_ok(self.split.positive_fraction) {
            return Err(Error::InvalidConfig(
                "split fractions must lie strictly between 0 and 1".into(),
            ));
        }
        self.target_farm.validate()?;
        self.shadow_farm.validate()?;
        self.attack_params.validate()?;
        Ok(())
    }
}

/// Positive pool (candidate training data) and disjoint negative pool.
#[derive(Debug, Clone)]
pub struct Pools {
    pub positive: SubsetHandle,
    pub negative: SubsetHandle,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub target: Pools,
    pub shadow: Pools,
}

fn pools(side: &SubsetHandle, positive_fraction: f64, seed: u64) -> Result<Pools> {
    let mut parts = side.split(&[positive_fraction, 1.0 - positive_fraction], seed)?;
    let negative = parts.pop().expect("two parts");
    let positive = parts.pop().expect("two parts");
    Ok(Pools { positive, negative })
}

/// Loads and encodes the data and cuts it into the four disjoint pools.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedData> {
    config.validate()?;
    let target_ds = Arc::new(config.dataset.load()?);
    let s = &config.split;
    let (target_side, shadow_side) = match &config.shadow_dataset {
        None => {
            let mut halves = SubsetHandle::full(target_ds).split(
                &[s.target_fraction, 1.0 - s.target_fraction],
                seed::derive(config.seed, &[SPLIT_STREAM]),
            )?;
            let shadow = halves.pop().expect("two parts");
            (halves.pop().expect("two parts"), shadow)
        }
        Some(d) => {
            let shadow_ds = Arc::new(d.load()?);
            if shadow_ds.num_classes() != target_ds.num_classes() {
                return Err(Error::InvalidConfig(format!(
                    "shadow dataset has {} classes, target has {}",
                    shadow_ds.num_classes(),
                    target_ds.num_classes()
                )));
            }
            (SubsetHandle::full(target_ds), SubsetHandle::full(shadow_ds))
        }
    };
    Ok(PreparedData {
        target: pools(
            &target_side,
            s.positive_fraction,
            seed::derive(config.seed, &[SPLIT_STREAM, TARGET]),
        )?,
        shadow: pools(
            &shadow_side,
            s.positive_fraction,
            seed::derive(config.seed, &[SPLIT_STREAM, SHADOW]),
        )?,
    })
}

/// Index lists of a prepared split, for persisting and auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    pub num_classes: usize,
    pub target_positive: Vec<usize>,
    pub target_negative: Vec<usize>,
    pub shadow_positive: Vec<usize>,
    pub shadow_negative: Vec<usize>,
}

impl PreparedData {
    pub fn manifest(&self) -> SplitManifest {
        let ds = self.target.positive.parent();
        SplitManifest {
            schema_version: SCHEMA_VERSION,
            feature_names: ds.feature_names().to_vec(),
            num_classes: ds.num_classes(),
            target_positive: self.target.positive.indices().to_vec(),
            target_negative: self.target.negative.indices().to_vec(),
            shadow_positive: self.shadow.positive.indices().to_vec(),
            shadow_negative: self.shadow.negative.indices().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginalMetrics {
    pub original: usize,
    /// Absent when the original's cases carry a single label.
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub target_kind: ModelKind,
    pub attack_kind: ModelKind,
    pub feature_method: FeatureMethod,
    pub defense: Defense,
    pub metrics: MetricsReport,
    pub per_original: Vec<OriginalMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overfitting {
    /// Train minus test accuracy of each original model; the test set is
    /// the side's negative pool.
    pub per_original: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub prepare_secs: f64,
    pub shadow_farm_secs: f64,
    pub target_farm_secs: f64,
    pub attack_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub shadow_cases: usize,
    pub target_cases: usize,
    pub target_overfitting: Overfitting,
    pub shadow_overfitting: Overfitting,
    pub rows: Vec<MetricRow>,
    pub timings: Timings,
}

impl ResultRecord {
    pub fn row(&self, attack_kind: ModelKind, method: FeatureMethod) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.attack_kind == attack_kind && r.feature_method == method)
    }

    /// The record with timings zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Timings::default(),
            ..self.clone()
        }
    }
}

fn with_role_seed(farm: &FarmConfig, master: u64, role: u64) -> FarmConfig {
    FarmConfig {
        seed: seed::derive(master, &[role, farm.seed]),
        ..farm.clone()
    }
}

fn overfitting(farm: &Farm, test: &SubsetHandle) -> Result<Overfitting> {
    let per_original = farm
        .originals
        .par_iter()
        .map(|o| overfitting_level(&o.model, &o.train_set, test))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_original.iter().sum::<f64>() / per_original.len() as f64;
    Ok(Overfitting { per_original, mean })
}

fn cases(farm: &Farm, negative_pool: &SubsetHandle, seed: u64) -> Result<Vec<CasePair>> {
    let mut all = positive_cases(farm)?;
    let negatives = negative_cases(farm, negative_pool, all.len(), seed)?;
    all.extend(negatives);
    Ok(all)
}

fn per_original(records: &[EvalRecord], cases: &[CasePair], n_originals: usize) -> Vec<OriginalMetrics> {
    let mut groups: BTreeMap<usize, Vec<EvalRecord>> = BTreeMap::new();
    for (r, c) in records.iter().zip(cases) {
        groups.entry(c.origin.0).or_default().push(*r);
    }
    (0..n_originals)
        .map(|original| OriginalMetrics {
            original,
            metrics: groups.get(&original).and_then(|g| evaluate(g).ok()),
        })
        .collect()
}

fn run_prepared(
    config: &ExperimentConfig,
    data: &PreparedData,
    cache_dir: Option<&Path>,
    timings: &mut Timings,
) -> Result<ResultRecord> {
    let started = Instant::now();
    let shadow_cfg = with_role_seed(&config.shadow_farm, config.seed, SHADOW);
    let target_cfg = with_role_seed(&config.target_farm, config.seed, TARGET);

    let shadow = build_farm_cached(&data.shadow.positive, &shadow_cfg, cache_dir)?;
    timings.shadow_farm_secs = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let target = build_farm_cached(&data.target.positive, &target_cfg, cache_dir)?;
    timings.target_farm_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let shadow_cases = cases(
        &shadow,
        &data.shadow.negative,
        seed::derive(config.seed, &[NEGATIVE_STREAM, SHADOW]),
    )?;
    let target_cases = cases(
        &target,
        &data.target.negative,
        seed::derive(config.seed, &[NEGATIVE_STREAM, TARGET]),
    )?;
    config
        .defense
        .validate(shadow.num_classes())?;

    let mut rows = Vec::with_capacity(config.attack_kinds.len() * config.feature_methods.len());
    for &attack_kind in &config.attack_kinds {
        let baseline = train_baseline(
            &shadow,
            &data.shadow.negative,
            config.defense,
            attack_kind,
            &config.attack_params,
            seed::derive(config.seed, &[BASELINE_STREAM, u64::from(attack_kind.tag())]),
        )?;
        let p_m = target_cases
            .par_iter()
            .map(|c| infer_baseline(&baseline, &c.posterior_original))
            .collect::<Result<Vec<_>>>()?;
        let trained = config
            .feature_methods
            .par_iter()
            .enumerate()
            .map(|(m, &method)| {
                let attack = train_attack(
                    &shadow_cases,
                    method,
                    config.defense,
                    attack_kind,
                    &config.attack_params,
                    seed::derive(config.seed, &[ATTACK_STREAM, u64::from(attack_kind.tag()), m as u64]),
                )?;
                let records = target_cases
                    .iter()
                    .zip(&p_m)
                    .map(|(c, &p_m)| {
                        Ok(EvalRecord {
                            b: c.is_positive,
                            p_u: infer(&attack, &c.posterior_original, &c.posterior_unlearned)?,
                            p_m,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(MetricRow {
                    target_kind: config.target_farm.model_kind,
                    attack_kind,
                    feature_method: method,
                    defense: config.defense,
                    metrics: evaluate(&records)?,
                    per_original: per_original(&records, &target_cases, target.originals.len()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(trained);
    }
    timings.attack_secs = started.elapsed().as_secs_f64();

    Ok(ResultRecord {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        shadow_cases: shadow_cases.len(),
        target_cases: target_cases.len(),
        target_overfitting: overfitting(&target, &data.target.negative)?,
        shadow_overfitting: overfitting(&shadow, &data.shadow.negative)?,
        rows,
        timings: timings.clone(),
    })
}

/// Runs the whole pipeline on a pool of `workers` threads (all cores when
/// `None`). The result does not depend on the worker count.
pub fn run_experiment(
    config: &ExperimentConfig,
    workers: Option<usize>,
    cache_dir: Option<&Path>,
) -> Result<ResultRecord> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::InvalidConfig("worker count must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let total = Instant::now();
        let mut timings = Timings::default();
        let data = prepare(config)?;
        timings.prepare_secs = total.elapsed().as_secs_f64();
        let mut record = run_prepared(config, &data, cache_dir, &mut timings)?;
        record.timings.total_secs = total.elapsed().as_secs_f64();
        Ok(record)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const CSV_HEADER: [&str; 9] = [
    "target_kind",
    "attack_kind",
    "feature_method",
    "defense",
    "auc_ours",
    "auc_baseline",
    "deg_count",
    "deg_rate",
    "n",
];

/// Renders the record: the full record as pretty JSON, or one CSV row per
/// (target kind, attack kind, feature method).
pub fn render(record: &ResultRecord, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(record)?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for r in &record.rows {
                let m = &r.metrics;
                w.write_record([
                    r.target_kind.short_name().to_owned(),
                    r.attack_kind.short_name().to_owned(),
                    r.feature_method.to_string(),
                    r.defense.to_string(),
                    m.auc_ours.to_string(),
                    m.auc_baseline.to_string(),
                    m.deg_count.to_string(),
                    m.deg_rate.to_string(),
                    m.n.to_string(),
                ])?;
            }
            w.into_inner()
                .map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))
        }
    }
}

pub fn report(record: &ResultRecord, format: ReportFormat, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, render(record, format)?).map_err(|e| Error::io(path, e))
}

pub fn read_record(path: &Path) -> Result<ResultRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record: ResultRecord = serde_json::from_str(&text)?;
    if record.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!(
            "result schema version {} is not supported",
            record.schema_version
        )));
    }
    Ok(record)
}
