//! Centralized coordinate-descent solvers for linear, ridge and lasso
//! regression, a full-batch gradient-descent baseline, and the MAE metric.
//!
//! The objective is the unnormalized sum of squared errors plus the penalty,
//! with the intercept `w_0` penalized like every other coordinate:
//!
//! * linear: `f(w) = Σ_i (y_i - w·x_i)^2`
//! * ridge:  `f(w) + λ Σ_j w_j^2`
//! * lasso:  `f(w) + λ Σ_j |w_j|`

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressionError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("column 0 must be the all-ones bias column (row {row} has {value})")]
    MissingBias { row: usize, value: f64 },
    #[error("dataset contains a non-finite value at row {row}")]
    NonFiniteData { row: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("coordinate update for w_{coordinate} divides by zero")]
    ZeroDenominator { coordinate: usize },
    #[error("update produced a non-finite weight at coordinate {coordinate}")]
    NonFiniteWeight { coordinate: usize },
    #[error("gradient descent diverged: cost rose for {0} consecutive steps")]
    Diverged(usize),
    #[error("{0} regression is not supported by gradient descent")]
    Unsupported(RegressionKind),
    #[error("invalid regression parameters: {0}")]
    InvalidSpec(String),
}

pub type Result<T, E = RegressionError> = std::result::Result<T, E>;

/// Design matrix with the bias column at index 0, plus targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
}

impl Dataset {
    /// Validates that column 0 is all ones and every value is finite.
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(RegressionError::Shape(format!("{} rows but {} targets", x.nrows(), y.len())));
        }
        if x.ncols() == 0 {
            return Err(RegressionError::Shape("design matrix has no columns".into()));
        }
        for (i, row) in x.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) || !y[i].is_finite() {
                return Err(RegressionError::NonFiniteData { row: i });
            }
            if row[0] != 1.0 {
                return Err(RegressionError::MissingBias { row: i, value: row[0] });
            }
        }
        Ok(Self { x, y })
    }

    /// Prepends the bias column to an `m × n` feature matrix.
    pub fn from_features(features: &Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let (m, n) = features.dim();
        let mut x = Array2::ones((m, n + 1));
        x.slice_mut(ndarray::s![.., 1..]).assign(features);
        Self::new(x, y)
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn samples(&self) -> usize {
        self.x.nrows()
    }

    /// Number of weights, `n + 1`.
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples() == 0
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset { x: self.x.select(Axis(0), indices), y: self.y.select(Axis(0), indices) }
    }

    /// Concatenates datasets with matching width.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(RegressionError::EmptyDataset)?;
        if parts.iter().any(|p| p.dim() != first.dim()) {
            return Err(RegressionError::Shape("datasets differ in width".into()));
        }
        let xs: Vec<_> = parts.iter().map(|p| p.x.view()).collect();
        let ys: Vec<_> = parts.iter().map(|p| p.y.view()).collect();
        let x = ndarray::concatenate(Axis(0), &xs).map_err(|e| RegressionError::Shape(e.to_string()))?;
        let y = ndarray::concatenate(Axis(0), &ys).map_err(|e| RegressionError::Shape(e.to_string()))?;
        Ok(Dataset { x, y })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionKind {
    Linear,
    Ridge,
    Lasso,
}

impl RegressionKind {
    pub const ALL: [RegressionKind; 3] = [RegressionKind::Linear, RegressionKind::Ridge, RegressionKind::Lasso];

    pub fn as_str(self) -> &'static str {
        match self {
            RegressionKind::Linear => "linear",
            RegressionKind::Ridge => "ridge",
            RegressionKind::Lasso => "lasso",
        }
    }
}

impl fmt::Display for RegressionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegressionKind {
    type Err = RegressionError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(RegressionKind::Linear),
            "ridge" => Ok(RegressionKind::Ridge),
            "lasso" => Ok(RegressionKind::Lasso),
            other => Err(RegressionError::InvalidSpec(format!("unknown regression kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub kind: RegressionKind,
    pub lambda: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl RegressionSpec {
    pub const DEFAULT_TOLERANCE: f64 = 1e-6;

    pub fn new(kind: RegressionKind, lambda: f64, max_iterations: usize) -> Self {
        Self { kind, lambda, max_iterations, tolerance: Self::DEFAULT_TOLERANCE }
    }

    pub fn linear(max_iterations: usize) -> Self {
        Self::new(RegressionKind::Linear, 0.0, max_iterations)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(RegressionError::InvalidSpec(format!("penalty must be non-negative, got {}", self.lambda)));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(RegressionError::InvalidSpec(format!("tolerance must be non-negative, got {}", self.tolerance)));
        }
        Ok(())
    }
}

/// Regression coefficients `w_0 … w_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelWeights(pub Vec<f64>);

impl ModelWeights {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn predict(&self, row: ArrayView1<'_, f64>) -> f64 {
        row.iter().zip(&self.0).map(|(x, w)| x * w).sum()
    }

    pub fn max_abs_diff(&self, other: &ModelWeights) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for ModelWeights {
    fn from(w: Vec<f64>) -> Self {
        Self(w)
    }
}

/// `P_k = Σ_i x_ik (y_i − Σ_{j≠k} x_ij w_j)`.
pub fn compute_pk(ds: &Dataset, w: &ModelWeights, k: usize) -> f64 {
    ds.x
        .outer_iter()
        .zip(ds.y.iter())
        .map(|(row, &y)| {
            let others: f64 = row.iter().zip(&w.0).enumerate().filter(|(j, _)| *j != k).map(|(_, (x, w))| x * w).sum();
            row[k] * (y - others)
        })
        .sum()
}

/// `Z_k = Σ_i x_ik²`.
pub fn compute_zk(ds: &Dataset, k: usize) -> f64 {
    ds.x.column(k).iter().map(|v| v * v).sum()
}

/// Which piece of the soft-threshold a lasso update landed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Negative,
    Zero,
    Positive,
}

impl Branch {
    /// `P < −λ/2`, `|P| ≤ λ/2`, or `P > λ/2`.
    pub fn of(p: f64, lambda: f64) -> Branch {
        let half = lambda / 2.0;
        if p > half {
            Branch::Positive
        } else if p < -half {
            Branch::Negative
        } else {
            Branch::Zero
        }
    }
}

/// One-coordinate minimizer given `P_k` and `Z_k`.
pub fn cd_update(kind: RegressionKind, p: f64, z: f64, lambda: f64) -> Result<f64> {
    let nonzero = |d: f64| if d == 0.0 { Err(RegressionError::ZeroDenominator { coordinate: 0 }) } else { Ok(d) };
    match kind {
        RegressionKind::Linear => Ok(p / nonzero(z)?),
        RegressionKind::Ridge => Ok(p / nonzero(z + lambda)?),
        RegressionKind::Lasso => match Branch::of(p, lambda) {
            Branch::Zero => Ok(0.0),
            Branch::Positive => Ok((p - lambda / 2.0) / nonzero(z)?),
            Branch::Negative => Ok((p + lambda / 2.0) / nonzero(z)?),
        },
    }
}

/// Objective value `f(w)` including the penalty.
pub fn cost(ds: &Dataset, spec: &RegressionSpec, w: &ModelWeights) -> f64 {
    let sse: f64 = ds.x.outer_iter().zip(ds.y.iter()).map(|(row, y)| (y - w.predict(row)).powi(2)).sum();
    let penalty = match spec.kind {
        RegressionKind::Linear => 0.0,
        RegressionKind::Ridge => spec.lambda * w.0.iter().map(|v| v * v).sum::<f64>(),
        RegressionKind::Lasso => spec.lambda * w.0.iter().map(|v| v.abs()).sum::<f64>(),
    };
    sse + penalty
}

/// Outcome of an iterative fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub weights: ModelWeights,
    pub iterations: usize,
    pub converged: bool,
}

/// Cyclic coordinate descent over `0..=n` starting from `w0`.
pub fn fit_cd(ds: &Dataset, spec: &RegressionSpec, w0: &ModelWeights) -> Result<ModelWeights> {
    Ok(fit_cd_traced(ds, spec, w0, |_, _| {})?.weights)
}

/// Like [`fit_cd`], calling `on_sweep(t, &w)` after every completed sweep.
pub fn fit_cd_traced(
    ds: &Dataset,
    spec: &RegressionSpec,
    w0: &ModelWeights,
    mut on_sweep: impl FnMut(usize, &ModelWeights),
) -> Result<FitReport> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(RegressionError::EmptyDataset);
    }
    if w0.len() != ds.dim() {
        return Err(RegressionError::Shape(format!("{} initial weights for {} columns", w0.len(), ds.dim())));
    }
    let z: Vec<f64> = (0..ds.dim()).map(|k| compute_zk(ds, k)).collect();
    let mut w = w0.clone();
    // residual_i = y_i − w·x_i, kept current so P_k costs O(m).
    let mut residual: Array1<f64> = &ds.y - &ds.x.dot(&Array1::from(w.0.clone()));

    let mut converged = false;
    let mut iterations = 0;
    while iterations < spec.max_iterations {
        let mut max_change = 0.0f64;
        for k in 0..ds.dim() {
            let col = ds.x.column(k);
            let old = w.0[k];
            let p: f64 = col.iter().zip(residual.iter()).map(|(x, r)| x * (r + x * old)).sum();
            let new = cd_update(spec.kind, p, z[k], spec.lambda)
                .map_err(|_| RegressionError::ZeroDenominator { coordinate: k })?;
            if !new.is_finite() {
                return Err(RegressionError::NonFiniteWeight { coordinate: k });
            }
            let delta = new - old;
            if delta != 0.0 {
                residual.scaled_add(-delta, &col);
            }
            w.0[k] = new;
            max_change = max_change.max(delta.abs());
        }
        iterations += 1;
        on_sweep(iterations, &w);
        if max_change < spec.tolerance {
            converged = true;
            break;
        }
    }
    Ok(FitReport { weights: w, iterations, converged })
}

/// Default step size for [`fit_gd`].
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
const DIVERGENCE_PATIENCE: usize = 10;

/// Full-batch gradient descent on `f(w)/m` (linear and ridge only).
pub fn fit_gd(ds: &Dataset, spec: &RegressionSpec, w0: &ModelWeights, learning_rate: f64) -> Result<ModelWeights> {
    Ok(fit_gd_traced(ds, spec, w0, learning_rate, |_, _| {})?.weights)
}

pub fn fit_gd_traced(
    ds: &Dataset,
    spec: &RegressionSpec,
    w0: &ModelWeights,
    learning_rate: f64,
    mut on_step: impl FnMut(usize, &ModelWeights),
) -> Result<FitReport> {
    spec.validate()?;
    let lambda = match spec.kind {
        RegressionKind::Linear => 0.0,
        RegressionKind::Ridge => spec.lambda,
        RegressionKind::Lasso => return Err(RegressionError::Unsupported(RegressionKind::Lasso)),
    };
    if ds.is_empty() {
        return Err(RegressionError::EmptyDataset);
    }
    if w0.len() != ds.dim() {
        return Err(RegressionError::Shape(format!("{} initial weights for {} columns", w0.len(), ds.dim())));
    }
    let m = ds.samples() as f64;
    let mut w = Array1::from(w0.0.clone());
    let mut prev_cost = f64::INFINITY;
    let mut rising = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < spec.max_iterations {
        let residual = ds.x.dot(&w) - &ds.y;
        let grad = (ds.x.t().dot(&residual) + &w * lambda) * (2.0 / m);
        let step = &grad * learning_rate;
        w -= &step;
        iterations += 1;
        let current = ModelWeights(w.to_vec());
        if current.0.iter().any(|v| !v.is_finite()) {
            return Err(RegressionError::Diverged(rising));
        }
        on_step(iterations, &current);
        let c = cost(ds, spec, &current);
        rising = if c > prev_cost { rising + 1 } else { 0 };
        if rising >= DIVERGENCE_PATIENCE {
            return Err(RegressionError::Diverged(rising));
        }
        prev_cost = c;
        if step.iter().fold(0.0f64, |a, v| a.max(v.abs())) < spec.tolerance {
            converged = true;
            break;
        }
    }
    Ok(FitReport { weights: ModelWeights(w.to_vec()), iterations, converged })
}

/// Mean absolute error of `w` on `test`.
pub fn mae(w: &ModelWeights, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(RegressionError::EmptyDataset);
    }
    if w.len() != test.dim() {
        return Err(RegressionError::Shape(format!("{} weights for {} columns", w.len(), test.dim())));
    }
    let total: f64 = test.x.outer_iter().zip(test.y.iter()).map(|(row, y)| (y - w.predict(row)).abs()).sum();
    Ok(total / test.samples() as f64)
}
