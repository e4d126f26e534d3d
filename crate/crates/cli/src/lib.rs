//! Experiment commands: accuracy, convergence, the two noise sweeps and the
//! cost sweep. Each returns a [`Report`] plus any failed structural checks.

pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use fcd_core::data::{gen_synthetic, load_csv, partition_equal, prepare, DataError, Prepared, Preset};
use fcd_core::party::csp::attack_demo_csp;
use fcd_core::protocol::{PartyId, ProtocolError};
use fcd_core::regression::{fit_cd_traced, fit_gd_traced, mae, RegressionError, DEFAULT_LEARNING_RATE};
use fcd_core::{run_session, Dataset, ModelWeights, PartyError, RegressionKind, RegressionSpec, SessionConfig, SessionOutcome, XiChoice};
use thiserror::Error;

pub use report::Report;
use report::{num, opt_num};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Party(#[from] PartyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// A bundled preset or any CSV with a named target column.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Preset(Preset),
    Csv { path: PathBuf, target: String },
}

impl DatasetSource {
    /// Preset names win over paths; `target` is required for paths.
    pub fn parse(dataset: &str, target: Option<&str>) -> Result<Self> {
        match (Preset::from_name(dataset), target) {
            (Some(p), None) => Ok(Self::Preset(p)),
            (_, Some(t)) => Ok(Self::Csv { path: PathBuf::from(dataset), target: t.to_string() }),
            (None, None) => Err(CliError::Usage(format!("{dataset:?} is not a preset; pass --target-col for CSV files"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Preset(p) => p.name().to_string(),
            Self::Csv { path, .. } => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        }
    }

    /// Loads, splits 80/20 and standardizes on the training split.
    pub fn prepare(&self, data_dir: &Path, seed: u64) -> Result<Prepared> {
        let table = match self {
            Self::Preset(p) => p.load(data_dir)?,
            Self::Csv { path, target } => load_csv(path, target, &[])?,
        };
        Ok(prepare(&table, seed)?)
    }
}

/// Settings shared by every session a command runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    pub owners: usize,
    pub iterations: usize,
    pub lambda: f64,
    pub key_bits: usize,
    pub seed: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self { owners: 5, iterations: 1000, lambda: 5.0, key_bits: 1024, seed: 1 }
    }
}

impl RunParams {
    /// Linear regression ignores the penalty.
    pub fn lambda_for(&self, kind: RegressionKind) -> f64 {
        match kind {
            RegressionKind::Linear => 0.0,
            _ => self.lambda,
        }
    }

    pub fn session(&self, kind: RegressionKind, iterations: usize) -> SessionConfig {
        SessionConfig {
            key_bits: self.key_bits,
            seed: self.seed.wrapping_add(2),
            ..SessionConfig::new(kind, self.lambda_for(kind), iterations)
        }
    }

    pub fn spec(&self, kind: RegressionKind, iterations: usize) -> RegressionSpec {
        RegressionSpec::new(kind, self.lambda_for(kind), iterations)
    }

    pub fn shards(&self, train: &Dataset) -> Result<Vec<Dataset>> {
        Ok(partition_equal(train, self.owners, self.seed.wrapping_add(1))?)
    }
}

/// A report and the checks it failed; empty `failures` means success.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub failures: Vec<String>,
}

fn timed<T>(label: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    log::info!("{label}: {:.3}s", start.elapsed().as_secs_f64());
    out
}

fn run(label: &str, config: &SessionConfig, shards: &[Dataset]) -> Result<SessionOutcome> {
    timed(label, || Ok(run_session(config, shards)?))
}

/// Final and per-sweep MAE of a centralized fit from `w0`.
struct Baseline {
    final_mae: f64,
    per_sweep: Vec<f64>,
}

fn cd_baseline(train: &Dataset, test: &Dataset, spec: &RegressionSpec, w0: &ModelWeights) -> Result<Baseline> {
    let mut per_sweep = vec![mae(w0, test)?];
    let fit = fit_cd_traced(train, spec, w0, |_, w| per_sweep.push(mae(w, test).unwrap_or(f64::NAN)))?;
    Ok(Baseline { final_mae: mae(&fit.weights, test)?, per_sweep })
}

/// `None` for lasso, which has no gradient baseline, and for divergent runs.
fn gd_baseline(train: &Dataset, test: &Dataset, spec: &RegressionSpec, w0: &ModelWeights) -> Option<Baseline> {
    if spec.kind == RegressionKind::Lasso {
        return None;
    }
    let mut per_sweep = vec![mae(w0, test).ok()?];
    let fit = fit_gd_traced(train, spec, w0, DEFAULT_LEARNING_RATE, |_, w| per_sweep.push(mae(w, test).unwrap_or(f64::NAN)));
    let fit = fit.ok()?;
    Some(Baseline { final_mae: mae(&fit.weights, test).ok()?, per_sweep })
}

fn at(series: &[f64], t: usize) -> f64 {
    series.get(t).or(series.last()).copied().unwrap_or(f64::NAN)
}

/// MAE of the session model and of both centralized baselines from the
/// same initial weights.
pub fn cmd_accuracy(
    source: &DatasetSource,
    data_dir: &Path,
    kind: RegressionKind,
    params: &RunParams,
    expect_mae: Option<(f64, f64)>,
) -> Result<Outcome> {
    let data = source.prepare(data_dir, params.seed)?;
    let shards = params.shards(&data.train)?;
    let out = run("accuracy session", &params.session(kind, params.iterations), &shards)?;
    let spec = params.spec(kind, params.iterations);
    let fcd = mae(out.weights(), &data.test)?;
    let cd = cd_baseline(&data.train, &data.test, &spec, &out.initial_weights)?;
    let gd = gd_baseline(&data.train, &data.test, &spec, &out.initial_weights);

    let mut report = Report::new(&[
        "dataset", "kind", "owners", "iterations", "lambda", "sweeps", "fcd_mae", "cd_mae", "gd_mae", "fcd_cd_gap",
    ]);
    report.push(vec![
        source.name(),
        kind.to_string(),
        params.owners.to_string(),
        params.iterations.to_string(),
        num(spec.lambda),
        out.sweeps.to_string(),
        num(fcd),
        num(cd.final_mae),
        opt_num(gd.map(|g| g.final_mae)),
        num((fcd - cd.final_mae).abs()),
    ]);
    let mut failures = Vec::new();
    if (fcd - cd.final_mae).abs() >= 5e-5 {
        failures.push(format!("session MAE {fcd:.6} differs from centralized MAE {:.6} in the first 4 decimals", cd.final_mae));
    }
    if let Some((target, tolerance)) = expect_mae {
        if (fcd - target).abs() > tolerance {
            failures.push(format!("session MAE {fcd:.5} is outside {target} ± {tolerance}"));
        }
    }
    Ok(Outcome { report, failures })
}

/// MAE every `step` sweeps up to `params.iterations`. Each checkpoint is a
/// fresh session with that iteration budget, since owners only ever see
/// final weights.
pub fn cmd_convergence(
    source: &DatasetSource,
    data_dir: &Path,
    kinds: &[RegressionKind],
    params: &RunParams,
    step: usize,
    within: Option<(usize, f64)>,
) -> Result<Outcome> {
    if step == 0 {
        return Err(CliError::Usage("checkpoint step must be positive".into()));
    }
    let data = source.prepare(data_dir, params.seed)?;
    let shards = params.shards(&data.train)?;
    let mut report = Report::new(&["kind", "iteration", "fcd_mae", "cd_mae", "gd_mae", "cd_converged_mae"]);
    let mut failures = Vec::new();
    for &kind in kinds {
        let mut previous: Option<SessionOutcome> = None;
        let mut fcd_series = Vec::new();
        let mut baselines = None;
        for t in (0..=params.iterations).step_by(step) {
            let out = match previous.take() {
                Some(p) if p.converged && p.sweeps <= t => p,
                _ => run(&format!("{kind} t={t}"), &params.session(kind, t), &shards)?,
            };
            let (cd, gd, converged) = match &baselines {
                Some(b) => b,
                None => {
                    let w0 = &out.initial_weights;
                    let traced = params.spec(kind, params.iterations);
                    let cd = cd_baseline(&data.train, &data.test, &traced, w0)?;
                    let gd = gd_baseline(&data.train, &data.test, &traced, w0);
                    let full = cd_baseline(&data.train, &data.test, &params.spec(kind, RunParams::default().iterations.max(params.iterations)), w0)?;
                    baselines.insert((cd, gd, full.final_mae))
                }
            };
            let fcd = mae(out.weights(), &data.test)?;
            fcd_series.push((t, fcd));
            report.push(vec![
                kind.to_string(),
                t.to_string(),
                num(fcd),
                num(at(&cd.per_sweep, t)),
                opt_num(gd.as_ref().map(|g| at(&g.per_sweep, t))),
                num(*converged),
            ]);
            previous = Some(out);
        }
        if let (Some((by, rel)), Some((_, _, target))) = (within, &baselines) {
            match fcd_series.iter().find(|(t, _)| *t >= by) {
                Some((t, fcd)) if (fcd - target).abs() <= rel * target => {
                    log::info!("{kind}: iteration {t} MAE {fcd:.6} within {rel} of {target:.6}");
                }
                Some((t, fcd)) => failures.push(format!(
                    "{kind}: MAE {fcd:.6} at iteration {t} is not within {:.1}% of the converged {target:.6}",
                    rel * 100.0
                )),
                None => failures.push(format!("{kind}: no checkpoint at or after iteration {by}")),
            }
        }
    }
    Ok(Outcome { report, failures })
}

/// Attack model the CSP could train from what it decrypts, for each uniform
/// `ξ`, beside the protected model.
pub fn cmd_sweep_xi(
    source: &DatasetSource,
    data_dir: &Path,
    kind: RegressionKind,
    params: &RunParams,
    xi_values: &[f64],
    min_attack_ratio: Option<f64>,
) -> Result<Outcome> {
    let data = source.prepare(data_dir, params.seed)?;
    let shards = params.shards(&data.train)?;
    let mut report = Report::new(&["xi", "model_mae", "attack_mae", "ratio"]);
    let mut failures = Vec::new();
    let mut model_maes = Vec::new();
    for &xi in xi_values {
        let config = SessionConfig { xi: XiChoice::Uniform(xi), ..params.session(kind, params.iterations) };
        let out = run(&format!("xi={xi}"), &config, &shards)?;
        let model = mae(out.weights(), &data.test)?;
        let attack_w =
            attack_demo_csp(&out.csp_view, kind, params.lambda_for(kind), params.iterations, &out.initial_weights)?;
        let attack = mae(&attack_w, &data.test)?;
        let ratio = attack / model;
        report.push(vec![num(xi), num(model), num(attack), num(ratio)]);
        model_maes.push(model);
        if xi == 1.0 {
            if (attack - model).abs() > 1e-4 {
                failures.push(format!("xi = 1: attack MAE {attack:.6} should equal model MAE {model:.6}"));
            }
        } else if let Some(min) = min_attack_ratio {
            if ratio.is_nan() || ratio <= min {
                failures.push(format!("xi = {xi}: attack/model MAE ratio {ratio:.3e} is not above {min:.0e}"));
            }
        }
    }
    if model_maes.iter().any(|m| (m - model_maes[0]).abs() > 1e-4) {
        failures.push("protected model MAE changes with xi".into());
    }
    Ok(Outcome { report, failures })
}

/// Noisy `ŵ* = w* + r` against the denoised model, with every `r_k = r`.
pub fn cmd_sweep_r(
    source: &DatasetSource,
    data_dir: &Path,
    kind: RegressionKind,
    params: &RunParams,
    r_values: &[f64],
) -> Result<Outcome> {
    let data = source.prepare(data_dir, params.seed)?;
    let shards = params.shards(&data.train)?;
    let mut report = Report::new(&["r", "noisy_mae", "denoised_mae"]);
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for &r in r_values {
        let config = SessionConfig { r_range: (r, r), ..params.session(kind, params.iterations) };
        let out = run(&format!("r={r}"), &config, &shards)?;
        let noisy = mae(&ModelWeights(out.w_hat.clone()), &data.test)?;
        let denoised = mae(out.weights(), &data.test)?;
        report.push(vec![num(r), num(noisy), num(denoised)]);
        if r == 0.0 && (noisy - denoised).abs() > 1e-9 {
            failures.push(format!("r = 0: noisy MAE {noisy:.6} differs from denoised {denoised:.6}"));
        }
        rows.push((r, noisy, denoised));
    }
    if rows.iter().any(|(_, _, d)| (d - rows[0].2).abs() > 1e-4) {
        failures.push("denoised MAE changes with r".into());
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.windows(2).any(|w| w[1].1 < w[0].1) {
        failures.push("noisy MAE is not monotone in r".into());
    }
    Ok(Outcome { report, failures })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostAxis {
    Features,
    Samples,
    Owners,
    Iterations,
}

impl std::str::FromStr for CostAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "features" | "n" => Ok(Self::Features),
            "samples" | "m" => Ok(Self::Samples),
            "dos" | "owners" => Ok(Self::Owners),
            "iterations" | "t" => Ok(Self::Iterations),
            _ => Err(CliError::Usage(format!("unknown cost axis {s:?}"))),
        }
    }
}

/// The fixed point of a cost sweep; one coordinate varies along the axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostBase {
    pub features: usize,
    pub samples: usize,
    pub owners: usize,
    pub iterations: usize,
}

impl Default for CostBase {
    fn default() -> Self {
        Self { features: 10, samples: 1000, owners: 5, iterations: 20 }
    }
}

/// Per-party operation and traffic counts over synthetic sessions. Every
/// session runs its full iteration budget.
pub fn cmd_sweep_cost(
    axis: CostAxis,
    grid: &[usize],
    base: &CostBase,
    kind: RegressionKind,
    params: &RunParams,
) -> Result<Outcome> {
    let mut report = Report::new(&[
        "value", "party", "encryptions", "decryptions", "additions", "scalar_muls", "rerandomizations", "messages",
        "bytes", "ciphertexts", "comparisons",
    ]);
    let mut failures = Vec::new();
    for &value in grid {
        let mut p = *base;
        match axis {
            CostAxis::Features => p.features = value,
            CostAxis::Samples => p.samples = value,
            CostAxis::Owners => p.owners = value,
            CostAxis::Iterations => p.iterations = value,
        }
        let data = gen_synthetic(p.samples, p.features, params.seed)?;
        let shards = partition_equal(&data, p.owners, params.seed.wrapping_add(1))?;
        let config = SessionConfig { tolerance: 0.0, ..params.session(kind, p.iterations) };
        let start = Instant::now();
        let out = run_session(&config, &shards)?;
        eprintln!("{axis:?}={value}: {:.3}s", start.elapsed().as_secs_f64());
        let comparisons = out.transcript.count("ComparisonRequest");
        for (party, c) in &out.costs.parties {
            report.push(vec![
                value.to_string(),
                party.to_string(),
                c.ops.encryptions.to_string(),
                c.ops.decryptions.to_string(),
                c.ops.additions.to_string(),
                c.ops.scalar_muls.to_string(),
                c.ops.rerandomizations.to_string(),
                c.messages_sent.to_string(),
                c.bytes_sent.to_string(),
                c.ciphertexts_sent.to_string(),
                if *party == PartyId::Evaluator { comparisons.to_string() } else { String::new() },
            ]);
        }
        let d = (p.features + 1) as u64;
        let bundle = d * d + 3 * d;
        for l in 1..=p.owners {
            let sent = out.costs.party(PartyId::DataOwner(l)).ciphertexts_sent;
            if sent != bundle {
                failures.push(format!("{axis:?}={value}: do-{l} sent {sent} ciphertexts, expected {bundle}"));
            }
        }
        let expected_comparisons = if kind == RegressionKind::Lasso { 2 * d as usize * out.sweeps } else { 0 };
        if comparisons != expected_comparisons {
            failures.push(format!("{axis:?}={value}: {comparisons} comparisons, expected {expected_comparisons}"));
        }
        let ev = out.costs.party(PartyId::Evaluator).ciphertexts_sent;
        let expected_ev = bundle + (comparisons + out.transcript.count("BlindDecryptRequest")) as u64;
        if ev != expected_ev {
            failures.push(format!("{axis:?}={value}: evaluator sent {ev} ciphertexts, expected {expected_ev}"));
        }
    }
    Ok(Outcome { report, failures })
}

/// Data directory from `FCD_DATA_DIR`, defaulting to `./data`.
pub fn data_dir_from_env() -> PathBuf {
    std::env::var_os("FCD_DATA_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_sources() {
        assert_eq!(DatasetSource::parse("Boston", None).unwrap(), DatasetSource::Preset(Preset::Boston));
        assert!(matches!(DatasetSource::parse("x.csv", None), Err(CliError::Usage(_))));
        let csv = DatasetSource::parse("dir/x.csv", Some("y")).unwrap();
        assert_eq!(csv.name(), "x");
    }

    #[test]
    fn penalties_apply_only_to_penalized_kinds() {
        let p = RunParams::default();
        assert_eq!(p.lambda_for(RegressionKind::Linear), 0.0);
        assert_eq!(p.lambda_for(RegressionKind::Ridge), 5.0);
        assert_eq!(p.session(RegressionKind::Lasso, 7).max_iterations, 7);
    }

    #[test]
    fn cost_axes_parse() {
        assert_eq!("DOs".parse::<CostAxis>().unwrap(), CostAxis::Owners);
        assert_eq!("features".parse::<CostAxis>().unwrap(), CostAxis::Features);
        assert!("colour".parse::<CostAxis>().is_err());
    }

    #[test]
    fn cost_sweep_counts_match_the_enumeration() {
        let params = RunParams { key_bits: 256, ..RunParams::default() };
        let base = CostBase { features: 2, samples: 30, owners: 2, iterations: 3 };
        for kind in RegressionKind::ALL {
            let out = cmd_sweep_cost(CostAxis::Features, &[1, 3], &base, kind, &params).unwrap();
            assert!(out.failures.is_empty(), "{kind}: {:?}", out.failures);
            assert_eq!(out.report.rows.len(), 2 * 4);
        }
    }
}
