//! Experiment harness: seeded mission batches, MAE metrics, noise-ratio
//! and slack sweeps, and CSV output.
//!
//! Batch cells are keyed by (strategy, seed); rows come out in config
//! order, so a batch run is byte-reproducible end to end. Synthetic fields
//! are regenerated per seed (field seed = base seed + mission seed), which
//! gives every simulation its own ground truth while strategies compared
//! at the same seed see the same field and test split.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::{
    default_field, generate_synthetic, load_dataset, Field, GroundTruthField, PlotId,
    DEFAULT_BAND, DEFAULT_PLOT_COLS, DEFAULT_PLOT_ROWS,
};
use crate::fusion::MobileAvgVariance;
use crate::gp::{FeatureVector, FitConfig, GpModel, NoiseModel};
use crate::planner::{run_mission, MissionConfig, MissionLog, Strategy};

/// Mean absolute error of the posterior means against ground truth over
/// the test plots.
pub fn compute_mae(
    model: &GpModel,
    test: &[(PlotId, FeatureVector)],
    truth: &GroundTruthField,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("MAE of an empty test set"));
    }
    let feats: Vec<FeatureVector> = test.iter().map(|t| t.1).collect();
    let post = model.posterior(&feats)?;
    let mut sum = 0.0;
    for (i, (plot, _)) in test.iter().enumerate() {
        sum += (post.mean[i] - truth.value(*plot)).abs();
    }
    Ok(sum / test.len() as f64)
}

/// Where the experiment field comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    /// Synthetic fields on the standard layout; each mission seed `s` uses
    /// field seed `base_seed + s`.
    Synthetic {
        base_seed: u64,
        plot_cols: usize,
        plot_rows: usize,
        band: (f64, f64),
    },
    /// A dataset CSV, shared by every mission.
    Dataset(PathBuf),
}

impl FieldSource {
    pub fn synthetic(base_seed: u64) -> Self {
        FieldSource::Synthetic {
            base_seed,
            plot_cols: DEFAULT_PLOT_COLS,
            plot_rows: DEFAULT_PLOT_ROWS,
            band: DEFAULT_BAND,
        }
    }

    fn resolve(&self, seed: u64) -> Result<Field> {
        match self {
            FieldSource::Synthetic {
                base_seed,
                plot_cols,
                plot_rows,
                band,
            } => generate_synthetic(
                *plot_cols,
                *plot_rows,
                base_seed.wrapping_add(seed),
                &crate::field::default_synthetic_params(),
                *band,
            ),
            FieldSource::Dataset(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                load_dataset(&text)
            }
        }
    }
}

impl FromStr for FieldSource {
    type Err = Error;

    /// `synthetic:SEED` or a dataset CSV path.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(seed) = s.strip_prefix("synthetic:") {
            let base_seed: u64 = seed
                .parse()
                .map_err(|_| Error::invalid(format!("bad synthetic seed '{seed}'")))?;
            Ok(FieldSource::synthetic(base_seed))
        } else {
            Ok(FieldSource::Dataset(PathBuf::from(s)))
        }
    }
}

impl fmt::Display for FieldSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSource::Synthetic { base_seed, .. } => write!(f, "synthetic:{base_seed}"),
            FieldSource::Dataset(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Batch configuration; the defaults mirror the standard experiment
/// setting (σ_s = 0.5, σ_m = 2.5, ξ = 0, p = 4, 8 iterations, 250-cell
/// distance target, 40 test plots, 20 seeds).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub field: FieldSource,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub p: usize,
    pub xi: u32,
    pub noise: NoiseModel,
    pub iterations: u32,
    pub distance_cap: u32,
    pub n_test: usize,
    pub mobile_avg: MobileAvgVariance,
    pub refit_each_iteration: bool,
    pub fit: FitConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            field: FieldSource::synthetic(0),
            strategies: vec![Strategy::MaxEnt],
            seeds: (0..20).collect(),
            p: 4,
            xi: 0,
            noise: NoiseModel::new(0.5, 2.5).expect("default noise model is valid"),
            iterations: 8,
            distance_cap: 250,
            n_test: 40,
            mobile_avg: MobileAvgVariance::Fixed,
            refit_each_iteration: false,
            fit: FitConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn mission_config(&self, strategy: Strategy, seed: u64) -> MissionConfig {
        MissionConfig {
            strategy,
            seed,
            p: self.p,
            xi: self.xi,
            noise: self.noise,
            iterations: self.iterations,
            distance_cap: self.distance_cap,
            n_test: self.n_test,
            mobile_avg: self.mobile_avg,
            refit_each_iteration: self.refit_each_iteration,
            fit: self.fit.clone(),
        }
    }
}

/// One measurement checkpoint of one mission: the state after an
/// iteration (iteration 0 is the prior model at distance 0).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub iteration: u32,
    pub distance: u64,
    pub mae: f64,
    pub n_static: usize,
    pub n_mobile: usize,
}

/// Per-mission MAE trajectories for a whole batch, plus any per-cell
/// failures (a failed cell never aborts the batch).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricSeries {
    pub rows: Vec<SeriesRow>,
    pub errors: Vec<CellError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellError {
    pub strategy: Strategy,
    pub seed: u64,
    pub message: String,
}

impl MetricSeries {
    /// (distance, mae, samples) trajectory of one mission, ascending.
    pub fn trajectory(&self, strategy: Strategy, seed: u64) -> Vec<(u64, f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.strategy == strategy && r.seed == seed)
            .map(|r| (r.distance, r.mae, (r.n_static + r.n_mobile) as f64))
            .collect()
    }
}

fn push_mission_rows(rows: &mut Vec<SeriesRow>, log: &MissionLog) {
    rows.push(SeriesRow {
        strategy: log.strategy,
        seed: log.seed,
        iteration: 0,
        distance: 0,
        mae: log.prior_mae,
        n_static: 0,
        n_mobile: 0,
    });
    for r in &log.records {
        rows.push(SeriesRow {
            strategy: log.strategy,
            seed: log.seed,
            iteration: r.iteration,
            distance: r.distance,
            mae: r.mae,
            n_static: r.n_static,
            n_mobile: r.n_mobile,
        });
    }
}

/// Runs every (strategy, seed) cell of the batch.
pub fn run_batch(config: &ExperimentConfig) -> Result<MetricSeries> {
    let mut fields: BTreeMap<u64, Field> = BTreeMap::new();
    let mut series = MetricSeries::default();
    for &strategy in &config.strategies {
        for &seed in &config.seeds {
            let field = match fields.entry(seed) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(config.field.resolve(seed)?)
                }
            };
            match run_mission(field, &config.mission_config(strategy, seed)) {
                Ok(log) => {
                    push_mission_rows(&mut series.rows, &log);
                    if let Some(reason) = &log.aborted {
                        series.errors.push(CellError {
                            strategy,
                            seed,
                            message: format!("mission aborted: {reason}"),
                        });
                    }
                }
                Err(err) => series.errors.push(CellError {
                    strategy,
                    seed,
                    message: err.to_string(),
                }),
            }
        }
    }
    Ok(series)
}

/// Linear interpolation of (mae, samples) at `distance` along one
/// mission trajectory; `None` beyond the mission's reach.
pub fn interpolate_at(trajectory: &[(u64, f64, f64)], distance: u64) -> Option<(f64, f64)> {
    if trajectory.is_empty() {
        return None;
    }
    if distance > trajectory.last().unwrap().0 {
        return None;
    }
    let mut prev = trajectory[0];
    if distance <= prev.0 {
        return Some((prev.1, prev.2));
    }
    for &point in &trajectory[1..] {
        if distance <= point.0 {
            let span = (point.0 - prev.0) as f64;
            if span == 0.0 {
                return Some((point.1, point.2));
            }
            let t = (distance - prev.0) as f64 / span;
            return Some((prev.1 + t * (point.1 - prev.1), prev.2 + t * (point.2 - prev.2)));
        }
        prev = point;
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub distance: u64,
    pub mae_mean: f64,
    pub mae_std: f64,
    /// Seeds with data at this distance; aggregates use only those.
    pub n_seeds: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates per-seed trajectories onto a common distance grid (every
/// `step` cells from zero).
pub fn checkpoint_aggregates(
    series: &MetricSeries,
    config: &ExperimentConfig,
    step: u64,
) -> BTreeMap<Strategy, Vec<Checkpoint>> {
    let max_distance = series.rows.iter().map(|r| r.distance).max().unwrap_or(0);
    let mut out = BTreeMap::new();
    for &strategy in &config.strategies {
        let mut checkpoints = Vec::new();
        let mut d = 0;
        while d <= max_distance {
            let maes: Vec<f64> = config
                .seeds
                .iter()
                .filter_map(|&seed| {
                    interpolate_at(&series.trajectory(strategy, seed), d).map(|(mae, _)| mae)
                })
                .collect();
            if !maes.is_empty() {
                let (mean, std) = mean_std(&maes);
                checkpoints.push(Checkpoint {
                    distance: d,
                    mae_mean: mean,
                    mae_std: std,
                    n_seeds: maes.len(),
                });
            }
            d += step;
        }
        out.insert(strategy, checkpoints);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub n_seeds: usize,
}

/// Per-iteration budget bookkeeping captured during slack sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetAudit {
    pub xi: u32,
    pub seed: u64,
    pub iteration: u32,
    pub c_min: u32,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    /// Swept parameter name (the CSV `param` column).
    pub param: String,
    pub rows: Vec<SweepRow>,
    pub audits: Vec<BudgetAudit>,
    pub errors: Vec<CellError>,
}

fn final_maes_over_seeds(
    config: &ExperimentConfig,
    strategy: Strategy,
    errors: &mut Vec<CellError>,
    mut audit: impl FnMut(&MissionLog),
) -> Result<Vec<f64>> {
    let mut finals = Vec::new();
    for &seed in &config.seeds {
        let field = config.field.resolve(seed)?;
        match run_mission(&field, &config.mission_config(strategy, seed)) {
            Ok(log) => {
                audit(&log);
                match &log.aborted {
                    None => finals.push(log.final_mae()),
                    Some(reason) => errors.push(CellError {
                        strategy,
                        seed,
                        message: format!("mission aborted: {reason}"),
                    }),
                }
            }
            Err(err) => errors.push(CellError {
                strategy,
                seed,
                message: err.to_string(),
            }),
        }
    }
    Ok(finals)
}

/// Final MaxEnt MAE per noise ratio `k` (σ_m = k·σ_s), mean and std over
/// the seeds. Ratios below 1 violate the noise-model ordering and are
/// rejected.
pub fn sweep_noise_ratio(config: &ExperimentConfig, ks: &[f64]) -> Result<SweepTable> {
    let mut table = SweepTable {
        param: "k".into(),
        rows: Vec::new(),
        audits: Vec::new(),
        errors: Vec::new(),
    };
    for &k in ks {
        let sigma_s = config.noise.static_std();
        let noise = NoiseModel::new(sigma_s, k * sigma_s)?;
        let cell_config = ExperimentConfig {
            noise,
            ..config.clone()
        };
        let finals =
            final_maes_over_seeds(&cell_config, Strategy::MaxEnt, &mut table.errors, |_| {})?;
        if !finals.is_empty() {
            let (mean, std) = mean_std(&finals);
            table.rows.push(SweepRow {
                value: k,
                mae_mean: mean,
                mae_std: std,
                n_seeds: finals.len(),
            });
        }
    }
    Ok(table)
}

/// Final MaxEnt MAE per slack value ξ, with per-iteration (c_min, cost)
/// audits for the budget contract.
pub fn sweep_slack(config: &ExperimentConfig, xis: &[u32]) -> Result<SweepTable> {
    let mut table = SweepTable {
        param: "xi".into(),
        rows: Vec::new(),
        audits: Vec::new(),
        errors: Vec::new(),
    };
    for &xi in xis {
        let cell_config = ExperimentConfig {
            xi,
            ..config.clone()
        };
        let audits = &mut table.audits;
        let mut local = Vec::new();
        let finals = final_maes_over_seeds(
            &cell_config,
            Strategy::MaxEnt,
            &mut table.errors,
            |log| {
                for r in &log.records {
                    local.push(BudgetAudit {
                        xi,
                        seed: log.seed,
                        iteration: r.iteration,
                        c_min: r.c_min,
                        cost: r.cost,
                    });
                }
            },
        )?;
        audits.extend(local);
        if !finals.is_empty() {
            let (mean, std) = mean_std(&finals);
            table.rows.push(SweepRow {
                value: xi as f64,
                mae_mean: mean,
                mae_std: std,
                n_seeds: finals.len(),
            });
        }
    }
    Ok(table)
}

/// Series CSV: `strategy,seed,iteration,distance,mae,n_static,n_mobile`,
/// LF line endings.
pub fn series_csv_string(series: &MetricSeries) -> String {
    let mut out = String::from("strategy,seed,iteration,distance,mae,n_static,n_mobile\n");
    for r in &series.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.strategy, r.seed, r.iteration, r.distance, r.mae, r.n_static, r.n_mobile
        ));
    }
    out
}

/// Sweep CSV: `param,value,mae_mean,mae_std,n_seeds`, LF line endings.
pub fn sweep_csv_string(table: &SweepTable) -> String {
    let mut out = String::from("param,value,mae_mean,mae_std,n_seeds\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            table.param, r.value, r.mae_mean, r.mae_std, r.n_seeds
        ));
    }
    out
}

pub fn emit_series_csv(series: &MetricSeries, path: &Path) -> Result<()> {
    write_file(path, &series_csv_string(series))
}

pub fn emit_sweep_csv(table: &SweepTable, path: &Path) -> Result<()> {
    write_file(path, &sweep_csv_string(table))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The default bundled field (the standard layout with synthetic data,
/// seed 0), used when no field source is given.
pub fn bundled_default_field() -> Result<Field> {
    default_field(0)
}
