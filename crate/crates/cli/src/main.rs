use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fcd_cli::{
    cmd_accuracy, cmd_convergence, cmd_sweep_cost, cmd_sweep_r, cmd_sweep_xi, data_dir_from_env, CostAxis, CostBase,
    DatasetSource, Outcome, Result, RunParams,
};
use fcd_core::RegressionKind;

/// Privacy-preserving regression experiments over federated coordinate descent.
#[derive(Parser)]
#[command(name = "fcd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Session MAE against centralized coordinate and gradient descent.
    Accuracy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "lasso")]
        kind: RegressionKind,
        /// Fail unless the session MAE is within --mae-tolerance of this.
        #[arg(long)]
        expect_mae: Option<f64>,
        #[arg(long, default_value_t = 0.02)]
        mae_tolerance: f64,
    },
    /// MAE series every --step iterations.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "linear,ridge,lasso")]
        kinds: Vec<RegressionKind>,
        #[arg(long, default_value_t = 2)]
        step: usize,
        /// Fail unless the MAE is within --within-rel of the converged
        /// baseline by this iteration.
        #[arg(long)]
        within_by: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        within_rel: f64,
    },
    /// CSP attack model under uniform cross-term perturbations.
    SweepXi {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ridge")]
        kind: RegressionKind,
        #[arg(long, value_delimiter = ',', default_value = "1,1.02,1.05,1.1,1.5,2,5,0.2,0.1")]
        xi: Vec<f64>,
        #[arg(long)]
        min_attack_ratio: Option<f64>,
    },
    /// Evaluator-side noisy model against the denoised one.
    SweepR {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ridge")]
        kind: RegressionKind,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0,0.25,0.5,0.75,1,1.25,1.5,1.75,2,2.25,2.5,2.75,3,3.25,3.5,3.75,4,4.25,4.5,4.75,5"
        )]
        r: Vec<f64>,
    },
    /// Operation and traffic counts on synthetic data.
    SweepCost {
        #[arg(long)]
        axis: CostAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<usize>,
        #[arg(long, default_value = "linear")]
        kind: RegressionKind,
        #[arg(long, default_value_t = CostBase::default().features)]
        features: usize,
        #[arg(long, default_value_t = CostBase::default().samples)]
        samples: usize,
        #[arg(long, default_value_t = CostBase::default().owners)]
        dos: usize,
        #[arg(long, default_value_t = CostBase::default().iterations)]
        iterations: usize,
        #[arg(long, default_value_t = RunParams::default().key_bits)]
        key_bits: usize,
        #[arg(long, default_value_t = RunParams::default().seed)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Preset name (diabetes, boston, abalone) or a CSV path.
    #[arg(long)]
    dataset: String,
    /// Target column; required for CSV paths.
    #[arg(long)]
    target_col: Option<String>,
    #[arg(long, default_value_t = RunParams::default().owners)]
    dos: usize,
    /// Defaults to 1000 for accuracy, 30 for convergence, 50 for sweeps.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = RunParams::default().lambda)]
    lambda: f64,
    #[arg(long, default_value_t = RunParams::default().key_bits)]
    key_bits: usize,
    #[arg(long, default_value_t = RunParams::default().seed)]
    seed: u64,
    /// CSV report path; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self, default_iterations: usize) -> Result<(DatasetSource, RunParams)> {
        let source = DatasetSource::parse(&self.dataset, self.target_col.as_deref())?;
        let params = RunParams {
            owners: self.dos,
            iterations: self.iterations.unwrap_or(default_iterations),
            lambda: self.lambda,
            key_bits: self.key_bits,
            seed: self.seed,
        };
        Ok((source, params))
    }
}

fn execute(command: Command) -> Result<(Outcome, Option<PathBuf>)> {
    let dir = data_dir_from_env();
    Ok(match command {
        Command::Accuracy { common, kind, expect_mae, mae_tolerance } => {
            let (source, params) = common.resolve(1000)?;
            (cmd_accuracy(&source, &dir, kind, &params, expect_mae.map(|m| (m, mae_tolerance)))?, common.out)
        }
        Command::Convergence { common, kinds, step, within_by, within_rel } => {
            let (source, params) = common.resolve(30)?;
            (cmd_convergence(&source, &dir, &kinds, &params, step, within_by.map(|b| (b, within_rel)))?, common.out)
        }
        Command::SweepXi { common, kind, xi, min_attack_ratio } => {
            let (source, params) = common.resolve(50)?;
            (cmd_sweep_xi(&source, &dir, kind, &params, &xi, min_attack_ratio)?, common.out)
        }
        Command::SweepR { common, kind, r } => {
            let (source, params) = common.resolve(50)?;
            (cmd_sweep_r(&source, &dir, kind, &params, &r)?, common.out)
        }
        Command::SweepCost { axis, grid, kind, features, samples, dos, iterations, key_bits, seed, out } => {
            let base = CostBase { features, samples, owners: dos, iterations };
            let params = RunParams { key_bits, seed, ..RunParams::default() };
            (cmd_sweep_cost(axis, &grid, &base, kind, &params)?, out)
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (outcome, out) = match execute(cli.command) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    print!("{}", outcome.report.render());
    if let Some(path) = out {
        if let Err(e) = outcome.report.write_csv(&path) {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    if outcome.failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    for f in &outcome.failures {
        eprintln!("check failed: {f}");
    }
    ExitCode::from(2)
}
