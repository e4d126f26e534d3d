//! Dataset ingestion, train/test splitting, z-score standardization, equal
//! partitioning across data owners, and synthetic data.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regression::{Dataset, RegressionError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("target column {0:?} not found in header")]
    MissingTarget(String),
    #[error("column {column:?} named for one-hot encoding is not in the header")]
    MissingColumn { column: String },
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },
    #[error("dataset has no rows")]
    Empty,
    #[error("test fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("need at least 2 data owners, got {0}")]
    TooFewOwners(usize),
    #[error("{rows} training rows cannot be spread over {owners} data owners")]
    TooFewRows { rows: usize, owners: usize },
    #[error("need at least one sample and one feature")]
    BadShape,
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Features and target as read from disk, before the bias column is added.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub features: Array2<f64>,
    pub target: Array1<f64>,
}

impl RawTable {
    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn select(&self, indices: &[usize]) -> RawTable {
        RawTable {
            feature_names: self.feature_names.clone(),
            features: self.features.select(Axis(0), indices),
            target: self.target.select(Axis(0), indices),
        }
    }

    /// Adds the bias column.
    pub fn to_dataset(&self) -> Result<Dataset> {
        Ok(Dataset::from_features(&self.features, self.target.clone())?)
    }
}

/// Reads a headed CSV. Every column except `target_column` becomes a feature;
/// columns listed in `one_hot` are expanded into one indicator per distinct
/// value (sorted), all other columns must be numeric.
pub fn load_csv(path: &Path, target_column: &str, one_hot: &[&str]) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    read_csv(file, target_column, one_hot)
}

pub fn read_csv<R: std::io::Read>(reader: R, target_column: &str, one_hot: &[&str]) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| DataError::MissingTarget(target_column.to_string()))?;
    for col in one_hot {
        if !header.iter().any(|h| h == col) {
            return Err(DataError::MissingColumn { column: col.to_string() });
        }
    }

    let records: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>()?;
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    // Data rows are numbered from 1, after the header.
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != header.len() {
            return Err(DataError::RaggedRow { row: i + 1, found: rec.len(), expected: header.len() });
        }
    }

    let parse = |row: usize, col: usize, value: &str| -> Result<f64> {
        value
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| DataError::Parse { row: row + 1, column: header[col].clone(), value: value.to_string() })
    };

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if c == target_idx {
            continue;
        }
        if one_hot.contains(&name.as_str()) {
            let levels: BTreeSet<&str> = records.iter().map(|r| &r[c]).collect();
            for level in levels {
                names.push(format!("{name}={level}"));
                columns.push(records.iter().map(|r| if &r[c] == level { 1.0 } else { 0.0 }).collect());
            }
        } else {
            names.push(name.clone());
            columns.push(records.iter().enumerate().map(|(i, r)| parse(i, c, &r[c])).collect::<Result<_>>()?);
        }
    }
    let target: Vec<f64> = records.iter().enumerate().map(|(i, r)| parse(i, target_idx, &r[target_idx])).collect::<Result<_>>()?;

    let m = records.len();
    let features = Array2::from_shape_fn((m, columns.len()), |(i, j)| columns[j][i]);
    Ok(RawTable { feature_names: names, features, target: Array1::from(target) })
}

/// Disjoint, exhaustive, seeded split; the test side gets `round(fraction · m)` rows.
pub fn split_train_test(table: &RawTable, fraction: f64, seed: u64) -> Result<(RawTable, RawTable)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::BadFraction(fraction));
    }
    let m = table.rows();
    if m == 0 {
        return Err(DataError::Empty);
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let n_test = ((fraction * m as f64).round() as usize).min(m);
    let (test, train) = idx.split_at(n_test);
    Ok((table.select(train), table.select(test)))
}

/// Per-column mean and population standard deviation of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
    pub target_mean: f64,
    pub target_sd: f64,
    /// Columns with zero variance; these are left as they are.
    pub constant_features: Vec<usize>,
}

impl StandardizationParams {
    pub fn fit(train: &RawTable) -> Self {
        let (feature_mean, feature_sd): (Vec<f64>, Vec<f64>) =
            train.features.axis_iter(Axis(1)).map(|col| moments(col.iter().copied())).unzip();
        let (target_mean, target_sd) = moments(train.target.iter().copied());
        let constant_features = feature_sd.iter().enumerate().filter(|(_, sd)| **sd == 0.0).map(|(j, _)| j).collect();
        Self { feature_mean, feature_sd, target_mean, target_sd, constant_features }
    }

    pub fn apply(&self, table: &RawTable) -> RawTable {
        let mut out = table.clone();
        for (j, mut col) in out.features.axis_iter_mut(Axis(1)).enumerate() {
            let sd = self.feature_sd[j];
            if sd > 0.0 {
                let mean = self.feature_mean[j];
                col.mapv_inplace(|v| (v - mean) / sd);
            }
        }
        if self.target_sd > 0.0 {
            out.target.mapv_inplace(|v| (v - self.target_mean) / self.target_sd);
        }
        out
    }
}

fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores features and target of both splits with training statistics.
pub fn standardize(train: &RawTable, test: &RawTable) -> (RawTable, RawTable, StandardizationParams) {
    let params = StandardizationParams::fit(train);
    (params.apply(train), params.apply(test), params)
}

/// Shuffles rows and deals them into `owners` shards whose sizes differ by at
/// most one; the first `m mod owners` shards get the extra row.
pub fn partition_equal(train: &Dataset, owners: usize, seed: u64) -> Result<Vec<Dataset>> {
    if owners < 2 {
        return Err(DataError::TooFewOwners(owners));
    }
    let m = train.samples();
    if m < owners {
        return Err(DataError::TooFewRows { rows: m, owners });
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let (base, extra) = (m / owners, m % owners);
    let mut start = 0;
    Ok((0..owners)
        .map(|l| {
            let len = base + usize::from(l < extra);
            let shard = train.select(&idx[start..start + len]);
            start += len;
            shard
        })
        .collect())
}

/// `m` samples of `n` i.i.d. standard-normal features and target, with the
/// bias column prepended.
pub fn gen_synthetic(m: usize, n: usize, seed: u64) -> Result<Dataset> {
    if m == 0 || n == 0 {
        return Err(DataError::BadShape);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let features = Array2::from_shape_simple_fn((m, n), || StandardNormal.sample(&mut rng));
    let target = Array1::from_shape_simple_fn(m, || StandardNormal.sample(&mut rng));
    Ok(Dataset::from_features(&features, target)?)
}

/// Bundled real-world regression datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Diabetes,
    Boston,
    Abalone,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Diabetes, Preset::Boston, Preset::Abalone];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Diabetes => "diabetes",
            Preset::Boston => "boston",
            Preset::Abalone => "abalone",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(name))
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.name())
    }

    pub fn target_column(self) -> &'static str {
        match self {
            Preset::Diabetes => "target",
            Preset::Boston => "medv",
            Preset::Abalone => "rings",
        }
    }

    pub fn one_hot_columns(self) -> &'static [&'static str] {
        match self {
            Preset::Abalone => &["sex"],
            _ => &[],
        }
    }

    pub fn load(self, dir: &Path) -> Result<RawTable> {
        load_csv(&dir.join(self.file_name()), self.target_column(), self.one_hot_columns())
    }
}

/// A standardized train/test pair ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub params: StandardizationParams,
}

/// Split (20% test), standardize on train statistics, add the bias column.
pub fn prepare(table: &RawTable, seed: u64) -> Result<Prepared> {
    let (train, test) = split_train_test(table, 0.2, seed)?;
    let (train, test, params) = standardize(&train, &test);
    Ok(Prepared { train: train.to_dataset()?, test: test.to_dataset()?, params })
}
