//! Tabular ingestion, numeric encoding and index-based subsets.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// A parsed delimiter-separated file, cells still textual.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }
}

/// Reads a comma-separated file with a header row.
///
/// Rows containing an empty cell are dropped. `label_column` and every entry
/// of `categorical_columns` must name a header column.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    categorical_columns: &[String],
) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, label_column, categorical_columns)
}

pub(crate) fn parse_csv<R: std::io::Read>(
    reader: R,
    label_column: &str,
    categorical_columns: &[String],
) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::EmptyDataset);
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != header.len() {
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            return Err(Error::RaggedRow {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        if record.iter().any(str::is_empty) {
            continue;
        }
        rows.push(record.iter().map(str::to_string).collect());
    }

    let table = RawTable { header, rows };
    table.column_index(label_column)?;
    for c in categorical_columns {
        table.column_index(c)?;
    }
    Ok(table)
}

/// How a [`RawTable`] becomes an [`EncodedDataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeOptions {
    pub label_column: String,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    /// Columns removed before encoding (neither features nor label).
    #[serde(default)]
    pub drop_columns: Vec<String>,
}

/// Numeric feature matrix with dense integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    feature_names: Vec<String>,
}

impl EncodedDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if features.ncols() == 0 {
            return Err(Error::InvalidArgument("feature_dim must be positive".into()));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::DimensionMismatch {
                expected: features.ncols(),
                found: feature_names.len(),
            });
        }
        if num_classes < 2 {
            return Err(Error::SingleClass);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            feature_names,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

enum ColumnEncoder {
    Numeric { min: f64, max: f64 },
    OneHot { categories: Vec<String> },
}

/// One-hot expands categorical columns, min-max scales numeric ones to
/// `[0, 1]` and maps labels to `0..ℓ` in first-appearance order.
///
/// Constant numeric columns encode to `0.0`.
pub fn encode(raw: &RawTable, options: &EncodeOptions) -> Result<EncodedDataset> {
    let label_idx = raw.column_index(&options.label_column)?;
    let categorical: BTreeSet<usize> = options
        .categorical_columns
        .iter()
        .map(|c| raw.column_index(c))
        .collect::<Result<_>>()?;
    let dropped: BTreeSet<usize> = options
        .drop_columns
        .iter()
        .map(|c| raw.column_index(c))
        .collect::<Result<_>>()?;

    let mut label_map: HashMap<&str, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(raw.rows.len());
    for row in &raw.rows {
        let next = label_map.len();
        labels.push(*label_map.entry(row[label_idx].as_str()).or_insert(next));
    }
    let num_classes = label_map.len();
    if raw.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if num_classes < 2 {
        return Err(Error::SingleClass);
    }

    let feature_columns: Vec<usize> = (0..raw.header.len())
        .filter(|c| *c != label_idx && !dropped.contains(c))
        .collect();

    let mut encoders = Vec::with_capacity(feature_columns.len());
    let mut numeric_cache: Vec<Vec<f64>> = Vec::with_capacity(feature_columns.len());
    let mut feature_names = Vec::new();
    for &c in &feature_columns {
        let name = &raw.header[c];
        if categorical.contains(&c) {
            let mut categories: Vec<String> = Vec::new();
            let mut seen: HashMap<&str, ()> = HashMap::new();
            for row in &raw.rows {
                if seen.insert(row[c].as_str(), ()).is_none() {
                    categories.push(row[c].clone());
                }
            }
            feature_names.extend(categories.iter().map(|v| format!("{name}={v}")));
            encoders.push(ColumnEncoder::OneHot { categories });
            numeric_cache.push(Vec::new());
        } else {
            let values = raw
                .rows
                .iter()
                .enumerate()
                .map(|(r, row)| {
                    row[c]
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::NonNumericCell {
                            column: name.clone(),
                            row: r,
                            value: row[c].clone(),
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            feature_names.push(name.clone());
            encoders.push(ColumnEncoder::Numeric { min, max });
            numeric_cache.push(values);
        }
    }

    let dim = feature_names.len();
    let mut features = Array2::<f64>::zeros((raw.rows.len(), dim));
    let mut offset = 0;
    for (k, (&c, enc)) in feature_columns.iter().zip(&encoders).enumerate() {
        match enc {
            ColumnEncoder::Numeric { min, max } => {
                let range = max - min;
                for (r, &v) in numeric_cache[k].iter().enumerate() {
                    features[[r, offset]] = if range > 0.0 { (v - min) / range } else { 0.0 };
                }
                offset += 1;
            }
            ColumnEncoder::OneHot { categories } => {
                let lookup: HashMap<&str, usize> = categories
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.as_str(), i))
                    .collect();
                for (r, row) in raw.rows.iter().enumerate() {
                    features[[r, offset + lookup[row[c].as_str()]]] = 1.0;
                }
                offset += categories.len();
            }
        }
    }

    EncodedDataset::new(features, labels, num_classes, feature_names)
}

/// A set of distinct rows of a shared [`EncodedDataset`].
///
/// Indices are kept sorted ascending, so two handles over the same set are
/// equal regardless of how they were produced.
#[derive(Debug, Clone)]
pub struct SubsetHandle {
    parent: Arc<EncodedDataset>,
    indices: Arc<[usize]>,
}

impl PartialEq for SubsetHandle {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.parent, &other.parent) && self.indices == other.indices
    }
}

impl SubsetHandle {
    pub fn new(parent: Arc<EncodedDataset>, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate subset index".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= parent.len() {
                return Err(Error::InvalidArgument(format!(
                    "subset index {last} out of range for {} rows",
                    parent.len()
                )));
            }
        }
        Ok(Self {
            parent,
            indices: indices.into(),
        })
    }

    /// Handle over every row of `parent`.
    pub fn full(parent: Arc<EncodedDataset>) -> Self {
        let indices: Arc<[usize]> = (0..parent.len()).collect();
        Self { parent, indices }
    }

    pub fn parent(&self) -> &Arc<EncodedDataset> {
        &self.parent
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

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn shares_parent(&self, other: &SubsetHandle) -> bool {
        Arc::ptr_eq(&self.parent, &other.parent)
    }

    /// Same parent, with `removed` taken out. Every removed index must be a
    /// member.
    pub fn without(&self, removed: &[usize]) -> Result<Self> {
        let removed: BTreeSet<usize> = removed.iter().copied().collect();
        if let Some(&bad) = removed.iter().find(|&&i| !self.contains(i)) {
            return Err(Error::InvalidRequest(format!(
                "index {bad} is not in the training set"
            )));
        }
        let indices: Arc<[usize]> = self
            .indices
            .iter()
            .copied()
            .filter(|i| !removed.contains(i))
            .collect();
        Ok(Self {
            parent: Arc::clone(&self.parent),
            indices,
        })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.indices.iter().map(|&i| self.parent.labels[i]).collect()
    }

    /// Gathers the rows into a dense matrix, in index order.
    pub fn feature_matrix(&self) -> Array2<f64> {
        self.parent.features.select(ndarray::Axis(0), &self.indices)
    }

    /// Partitions this subset into disjoint parts with sizes proportional to
    /// `fractions` (largest-remainder rounding, ties to the earlier fraction).
    pub fn split(&self, fractions: &[f64], seed: u64) -> Result<Vec<SubsetHandle>> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let sizes = apportion(self.len(), fractions)?;
        let mut perm: Vec<usize> = self.indices.to_vec();
        perm.shuffle(&mut seed::rng(seed));
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for size in sizes {
            out.push(SubsetHandle::new(
                Arc::clone(&self.parent),
                perm[start..start + size].to_vec(),
            )?);
            start += size;
        }
        Ok(out)
    }
}

/// Largest-remainder apportionment of `n` items.
pub(crate) fn apportion(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    let sum: f64 = fractions.iter().sum();
    if fractions.is_empty()
        || fractions.iter().any(|f| !(f.is_finite() && *f > 0.0))
        || (sum - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidFractions(sum));
    }
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    // Stable sort keeps earlier fractions first among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Splits the whole dataset into pairwise-disjoint handles covering all rows.
pub fn split_disjoint(
    ds: &Arc<EncodedDataset>,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<SubsetHandle>> {
    SubsetHandle::full(Arc::clone(ds)).split(fractions, seed)
}

/// Draws `count` subsets of `size` distinct pool members each. Subsets are
/// drawn independently and may overlap one another.
pub fn sample_subsets(
    pool: &SubsetHandle,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<SubsetHandle>> {
    if size > pool.len() {
        return Err(Error::PoolTooSmall {
            requested: size,
            available: pool.len(),
        });
    }
    if count == 0 || size == 0 {
        return Err(Error::InvalidArgument("count and size must be positive".into()));
    }
    let mut rng = seed::rng(seed);
    (0..count)
        .map(|_| {
            let picked = index::sample(&mut rng, pool.len(), size)
                .into_iter()
                .map(|k| pool.indices[k])
                .collect();
            SubsetHandle::new(Arc::clone(&pool.parent), picked)
        })
        .collect()
}
