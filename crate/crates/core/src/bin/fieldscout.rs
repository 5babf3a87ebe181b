//! Command-line experiment runner: generate fields, run seeded mission
//! batches, and sweep the noise ratio or the path budget slack, emitting
//! CSV results.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fieldscout_core::error::Error;
use fieldscout_core::field::{
    generate_synthetic, DEFAULT_BAND, DEFAULT_PLOT_COLS, DEFAULT_PLOT_ROWS,
};
use fieldscout_core::fusion::MobileAvgVariance;
use fieldscout_core::gp::NoiseModel;
use fieldscout_core::harness::{
    emit_series_csv, emit_sweep_csv, run_batch, sweep_noise_ratio, sweep_slack, ExperimentConfig,
};
use fieldscout_core::planner::Strategy;

#[derive(Parser)]
#[command(
    name = "fieldscout",
    version,
    about = "Active sampling of crop fields: GP-driven informative path planning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic field and write its dataset CSV.
    GenerateField(GenerateFieldArgs),
    /// Run seeded missions and write the MAE series CSV.
    Run(RunArgs),
    /// Sweep the noise ratio k (sigma_m = k * sigma_s) and write the
    /// aggregate table.
    SweepNoise(SweepNoiseArgs),
    /// Sweep the path budget slack xi and write the aggregate table.
    SweepSlack(SweepSlackArgs),
}

#[derive(Args)]
struct GenerateFieldArgs {
    /// Plot columns.
    #[arg(long, default_value_t = DEFAULT_PLOT_COLS)]
    width: usize,
    /// Plot rows.
    #[arg(long, default_value_t = DEFAULT_PLOT_ROWS)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lower edge of the target band.
    #[arg(long, default_value_t = DEFAULT_BAND.0)]
    band_low: f64,
    /// Upper edge of the target band.
    #[arg(long, default_value_t = DEFAULT_BAND.1)]
    band_high: f64,
    #[arg(long, default_value = "field.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MobileAvgArg {
    /// Averaged mobile readings keep the single-reading variance.
    Fixed,
    /// Averaged mobile readings use sigma_m^2 / n.
    Scaled,
}

impl From<MobileAvgArg> for MobileAvgVariance {
    fn from(v: MobileAvgArg) -> Self {
        match v {
            MobileAvgArg::Fixed => MobileAvgVariance::Fixed,
            MobileAvgArg::Scaled => MobileAvgVariance::Scaled,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Field source: a dataset CSV path, or `synthetic:SEED` for per-seed
    /// synthetic fields on the default 25x15 layout.
    #[arg(long, default_value = "synthetic:0")]
    field: String,
    /// Number of mission seeds (0..N).
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Minimum planning iterations per mission (0 = no requirement).
    #[arg(long, default_value_t = 8)]
    iterations: u32,
    /// Static sites selected per iteration.
    #[arg(long, default_value_t = 4)]
    p: usize,
    /// Static measurement noise std.
    #[arg(long, default_value_t = 0.5)]
    sigma_s: f64,
    /// Mobile measurement noise std (default 2.5).
    #[arg(long, conflicts_with = "k")]
    sigma_m: Option<f64>,
    /// Noise ratio: sigma_m = k * sigma_s.
    #[arg(long)]
    k: Option<f64>,
    /// Path budget slack, in cells.
    #[arg(long, default_value_t = 0)]
    xi: u32,
    /// Held-out test plots per mission.
    #[arg(long, default_value_t = 40)]
    n_test: usize,
    /// Minimum distance per mission, in cells (0 = no requirement).
    #[arg(long, default_value_t = 250)]
    distance_cap: u32,
    /// Variance rule for averaged mobile readings.
    #[arg(long, value_enum, default_value_t = MobileAvgArg::Fixed)]
    mobile_avg_variance: MobileAvgArg,
    /// Refit hyperparameters every iteration instead of freezing them
    /// after the first.
    #[arg(long)]
    refit_each_iteration: bool,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

impl CommonArgs {
    fn experiment_config(&self, strategies: Vec<Strategy>) -> Result<ExperimentConfig, Error> {
        let sigma_m = match (self.sigma_m, self.k) {
            (Some(m), _) => m,
            (None, Some(k)) => k * self.sigma_s,
            (None, None) => 2.5,
        };
        Ok(ExperimentConfig {
            field: self.field.parse()?,
            strategies,
            seeds: (0..self.seeds).collect(),
            p: self.p,
            xi: self.xi,
            noise: NoiseModel::new(self.sigma_s, sigma_m)?,
            iterations: self.iterations,
            distance_cap: self.distance_cap,
            n_test: self.n_test,
            mobile_avg: self.mobile_avg_variance.into(),
            refit_each_iteration: self.refit_each_iteration,
            fit: Default::default(),
        })
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Strategy to run; repeat the flag to run several.
    #[arg(long = "strategy", value_parser = parse_strategy)]
    strategies: Vec<Strategy>,
}

#[derive(Args)]
struct SweepNoiseArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Noise ratios to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
    ks: Vec<f64>,
}

#[derive(Args)]
struct SweepSlackArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Slack values to sweep, in cells.
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,15")]
    xis: Vec<u32>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenerateField(args) => {
            let field = generate_synthetic(
                args.width,
                args.height,
                args.seed,
                &fieldscout_core::field::default_synthetic_params(),
                (args.band_low, args.band_high),
            )?;
            std::fs::write(&args.out, field.to_dataset_csv()).map_err(|source| Error::Io {
                path: args.out.display().to_string(),
                source,
            })?;
            eprintln!(
                "wrote {} plots ({}x{}) to {}",
                field.n_plots(),
                args.height,
                args.width,
                args.out.display()
            );
        }
        Command::Run(args) => {
            let strategies = if args.strategies.is_empty() {
                vec![Strategy::MaxEnt]
            } else {
                args.strategies.clone()
            };
            let config = args.common.experiment_config(strategies)?;
            let series = run_batch(&config)?;
            for e in &series.errors {
                eprintln!("cell ({}, seed {}) failed: {}", e.strategy, e.seed, e.message);
            }
            emit_series_csv(&series, &args.common.out)?;
            eprintln!(
                "wrote {} rows to {}",
                series.rows.len(),
                args.common.out.display()
            );
        }
        Command::SweepNoise(args) => {
            let config = args.common.experiment_config(vec![Strategy::MaxEnt])?;
            let table = sweep_noise_ratio(&config, &args.ks)?;
            for e in &table.errors {
                eprintln!("cell ({}, seed {}) failed: {}", e.strategy, e.seed, e.message);
            }
            emit_sweep_csv(&table, &args.common.out)?;
            for row in &table.rows {
                eprintln!(
                    "k={}: MAE {:.2}({:.2}) over {} seeds",
                    row.value, row.mae_mean, row.mae_std, row.n_seeds
                );
            }
        }
        Command::SweepSlack(args) => {
            let config = args.common.experiment_config(vec![Strategy::MaxEnt])?;
            let table = sweep_slack(&config, &args.xis)?;
            for e in &table.errors {
                eprintln!("cell ({}, seed {}) failed: {}", e.strategy, e.seed, e.message);
            }
            emit_sweep_csv(&table, &args.common.out)?;
            for row in &table.rows {
                eprintln!(
                    "xi={}: MAE {:.2}({:.2}) over {} seeds",
                    row.value, row.mae_mean, row.mae_std, row.n_seeds
                );
            }
        }
    }
    Ok(())
}
