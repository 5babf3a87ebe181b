//! Two-step informative planning and the baseline sampling strategies.
//!
//! Each iteration the agent (1) greedily picks the `p` unsampled plots
//! with maximum entropy conditioned on everything sampled so far — these
//! become accurate static measurement sites — and (2) enumerates every
//! no-U-turn path from its position that covers those sites within the
//! budget `c_min + ξ`, choosing the path whose drive-by (mobile) plots
//! have the highest conditional entropy given the sampled set and the
//! planned sites. Baselines share step (1) but pick paths differently, or
//! follow the fixed serpentine coverage route.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{default_start, Field, FeatureNormalizer, PlotId, Pos, SensorSim};
use crate::fusion::{ingest, MobileAvgVariance};
use crate::gp::{
    entropy_of_covariance, fit_hyperparameters, FeatureVector, FitConfig, GpModel, KernelParams,
    NoiseModel, TrainingSet,
};
use crate::graph::{build_graph, enumerate_feasible, shortest_cover_cost, CandidatePath};
use crate::harness::compute_mae;

/// Safety bound on mission length regardless of the stop targets.
const MAX_MISSION_ITERATIONS: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// Greedy max-entropy sites, then the feasible path with maximum
    /// conditional entropy of its mobile plots.
    MaxEnt,
    /// Same sites and feasible set, minimum-cost path.
    Shortest,
    /// Same sites and feasible set, the path whose mobile-plot count
    /// matches MaxEnt's choice (closest count on fallback).
    EquiSample,
    /// Serpentine full-coverage route, stopping at every plot.
    NaiveStatic,
    /// Serpentine full-coverage route, never stopping.
    NaiveMobile,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::MaxEnt,
        Strategy::Shortest,
        Strategy::EquiSample,
        Strategy::NaiveStatic,
        Strategy::NaiveMobile,
    ];

    pub fn is_informative(&self) -> bool {
        matches!(
            self,
            Strategy::MaxEnt | Strategy::Shortest | Strategy::EquiSample
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::MaxEnt => "maxent",
            Strategy::Shortest => "shortest",
            Strategy::EquiSample => "equisample",
            Strategy::NaiveStatic => "naive-static",
            Strategy::NaiveMobile => "naive-mobile",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxent" => Ok(Strategy::MaxEnt),
            "shortest" => Ok(Strategy::Shortest),
            "equisample" => Ok(Strategy::EquiSample),
            "naive-static" => Ok(Strategy::NaiveStatic),
            "naive-mobile" => Ok(Strategy::NaiveMobile),
            other => Err(Error::invalid(format!(
                "unknown strategy '{other}' (expected maxent, shortest, equisample, \
                 naive-static or naive-mobile)"
            ))),
        }
    }
}

/// One planned iteration: the selected static sites, the chosen path, the
/// plots it will measure in motion, and its conditional-entropy score.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub static_sites: Vec<PlotId>,
    pub path: CandidatePath,
    /// Cell walk of `path`, from the agent position.
    pub cells: Vec<Pos>,
    /// Per-edge cell runs of the walk, endpoint-inclusive: the units of
    /// mobile measurement.
    pub edge_walks: Vec<Vec<Pos>>,
    /// Plots measured in motion: along-path plots minus the static sites
    /// and minus unobservable (test) plots.
    pub mobile_plots: BTreeSet<PlotId>,
    /// Conditional entropy of `mobile_plots`; `-inf` when the set is empty.
    pub score: f64,
    /// Shortest covering cost the budget was derived from.
    pub c_min: u32,
}

pub enum PlanOutcome {
    Plan(Box<PlanResult>),
    /// Nothing left to plan: no eligible sites (informative) or the
    /// serpentine route is exhausted (naive).
    Complete,
}

/// Greedy max-entropy site selection: repeatedly picks the candidate with
/// the largest posterior variance given the training set and the already
/// selected sites (whose future measurements will carry `static_noise_var`).
/// Ties break toward the smallest plot id.
pub fn select_static_sites(
    model: &GpModel,
    candidates: &[(PlotId, FeatureVector)],
    p: usize,
    static_noise_var: f64,
) -> Result<Vec<PlotId>> {
    if candidates.len() < p {
        return Err(Error::invalid(format!(
            "cannot select {p} sites from {} candidates",
            candidates.len()
        )));
    }
    let mut remaining: Vec<(PlotId, FeatureVector)> = candidates.to_vec();
    remaining.sort_by_key(|c| c.0);
    let mut chosen = Vec::with_capacity(p);
    let mut planned: Vec<(FeatureVector, f64)> = Vec::with_capacity(p);
    for _ in 0..p {
        let feats: Vec<FeatureVector> = remaining.iter().map(|c| c.1).collect();
        let cov = model.conditional_covariance(&feats, &planned)?;
        let mut best = 0;
        let mut best_var = f64::NEG_INFINITY;
        for (i, _) in remaining.iter().enumerate() {
            let v = cov[(i, i)];
            if v > best_var {
                best_var = v;
                best = i;
            }
        }
        let (id, fv) = remaining.remove(best);
        chosen.push(id);
        planned.push((fv, static_noise_var));
    }
    Ok(chosen)
}

/// Conditional entropy of a path's mobile plots given the sampled set and
/// the planned static sites: the path-selection objective. An empty mobile
/// set scores `-inf`, ordering below every finite score.
pub fn score_path(
    model: &GpModel,
    planned_sites: &[(FeatureVector, f64)],
    mobile: &[FeatureVector],
    mobile_noise_var: f64,
) -> Result<f64> {
    if mobile.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    model.entropy_with_planned(mobile, planned_sites, Some(mobile_noise_var))
}

/// Everything a single planning step needs to see.
pub struct PlanInputs<'a> {
    pub strategy: Strategy,
    pub model: &'a GpModel,
    pub field: &'a Field,
    pub normalizer: &'a FeatureNormalizer,
    /// Plots the sensors may record (the train side of the split).
    pub observable: &'a BTreeSet<PlotId>,
    /// Static-site candidates: observable plots not yet statically sampled.
    pub eligible: &'a [PlotId],
    pub agent: Pos,
    pub p: usize,
    pub xi: u32,
    pub noise: &'a NoiseModel,
    /// Next serpentine column index (naive strategies only).
    pub next_column: usize,
}

/// Plans one iteration for any strategy.
pub fn plan_iteration(inputs: &PlanInputs<'_>) -> Result<PlanOutcome> {
    match inputs.strategy {
        Strategy::MaxEnt | Strategy::Shortest | Strategy::EquiSample => informative_plan(inputs),
        Strategy::NaiveStatic | Strategy::NaiveMobile => naive_plan(inputs),
    }
}

fn feature_of(inputs: &PlanInputs<'_>, plot: PlotId) -> FeatureVector {
    inputs.normalizer.feature_vector(inputs.field, plot)
}

fn informative_plan(inputs: &PlanInputs<'_>) -> Result<PlanOutcome> {
    if inputs.eligible.is_empty() {
        return Ok(PlanOutcome::Complete);
    }
    let candidates: Vec<(PlotId, FeatureVector)> = inputs
        .eligible
        .iter()
        .map(|id| (*id, feature_of(inputs, *id)))
        .collect();
    let p_eff = inputs.p.min(candidates.len());
    let sites = select_static_sites(
        inputs.model,
        &candidates,
        p_eff,
        inputs.noise.static_var(),
    )?;
    let site_set: BTreeSet<PlotId> = sites.iter().copied().collect();
    let waypoint_cells: Vec<Pos> = sites
        .iter()
        .map(|s| inputs.field.grid.waypoint_for(*s))
        .collect();
    let graph = build_graph(&inputs.field.grid, inputs.agent, &waypoint_cells)?;
    let c_min = shortest_cover_cost(&graph)?;
    let budget = c_min + inputs.xi;
    let feasible = enumerate_feasible(&graph, budget)?;
    if feasible.is_empty() {
        return Err(Error::Planning(format!(
            "no feasible covering path within budget {budget}"
        )));
    }

    // Conditional covariance of every plot that can appear in a mobile set,
    // given the training set plus the planned sites. Per-path scores are
    // log-determinants of submatrices: the conditional of a subset is
    // exactly the corresponding submatrix of the joint conditional.
    let planned: Vec<(FeatureVector, f64)> = sites
        .iter()
        .map(|s| (feature_of(inputs, *s), inputs.noise.static_var()))
        .collect();
    let universe: Vec<PlotId> = inputs
        .observable
        .iter()
        .filter(|id| !site_set.contains(id))
        .copied()
        .collect();
    let index: BTreeMap<PlotId, usize> = universe
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();
    let uni_feats: Vec<FeatureVector> =
        universe.iter().map(|id| feature_of(inputs, *id)).collect();
    let cov = if universe.is_empty() {
        DMatrix::zeros(0, 0)
    } else {
        inputs.model.conditional_covariance(&uni_feats, &planned)?
    };
    let mobile_noise = inputs.noise.mobile_var();
    let score_of = |path: &CandidatePath| -> Result<(f64, usize)> {
        let ids: Vec<usize> = path
            .mobile_plots
            .iter()
            .filter_map(|p| index.get(p).copied())
            .collect();
        if ids.is_empty() {
            return Ok((f64::NEG_INFINITY, 0));
        }
        let sub = DMatrix::from_fn(ids.len(), ids.len(), |i, j| cov[(ids[i], ids[j])]);
        Ok((entropy_of_covariance(sub, Some(mobile_noise))?, ids.len()))
    };

    // MaxEnt's pick is needed for EquiSample's target count too.
    let mut maxent_idx = 0;
    let mut maxent_score = f64::NEG_INFINITY;
    let mut maxent_count = 0;
    let mut scores = Vec::with_capacity(feasible.len());
    for (i, path) in feasible.iter().enumerate() {
        let (score, count) = score_of(path)?;
        scores.push((score, count));
        if score > maxent_score {
            maxent_score = score;
            maxent_idx = i;
            maxent_count = count;
        }
    }

    let chosen_idx = match inputs.strategy {
        Strategy::MaxEnt => maxent_idx,
        Strategy::Shortest => {
            let mut best = 0;
            for (i, path) in feasible.iter().enumerate() {
                if path.cost < feasible[best].cost {
                    best = i;
                }
            }
            best
        }
        Strategy::EquiSample => {
            let mut best = 0;
            let mut best_gap = usize::MAX;
            for (i, (_, count)) in scores.iter().enumerate() {
                let gap = count.abs_diff(maxent_count);
                if gap < best_gap {
                    best_gap = gap;
                    best = i;
                }
            }
            best
        }
        _ => unreachable!("naive strategies do not reach informative planning"),
    };

    let path = feasible[chosen_idx].clone();
    let score = scores[chosen_idx].0;
    let mobile_plots: BTreeSet<PlotId> = path
        .mobile_plots
        .iter()
        .filter(|p| index.contains_key(p))
        .copied()
        .collect();
    let cells = graph.path_cells(&path);
    let edge_walks = graph.path_edge_walks(&path);
    Ok(PlanOutcome::Plan(Box::new(PlanResult {
        static_sites: sites,
        path,
        cells,
        edge_walks,
        mobile_plots,
        score,
        c_min,
    })))
}

fn naive_plan(inputs: &PlanInputs<'_>) -> Result<PlanOutcome> {
    let columns = inputs.field.grid.plot_columns();
    if inputs.next_column >= columns.len() {
        return Ok(PlanOutcome::Complete);
    }
    let column = &columns[inputs.next_column];
    // the route always covers the full column; only observable plots are
    // recorded, and only NaiveStatic stops for accurate readings
    let waypoint_cells: Vec<Pos> = column
        .iter()
        .map(|p| inputs.field.grid.waypoint_for(*p))
        .collect();
    let graph = build_graph(&inputs.field.grid, inputs.agent, &waypoint_cells)?;
    let c_min = shortest_cover_cost(&graph)?;
    let path = enumerate_feasible(&graph, c_min)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Planning("no covering path for the serpentine leg".into()))?;
    let sites: Vec<PlotId> = match inputs.strategy {
        Strategy::NaiveStatic => column
            .iter()
            .filter(|p| inputs.observable.contains(p))
            .copied()
            .collect(),
        _ => Vec::new(),
    };
    let site_set: BTreeSet<PlotId> = sites.iter().copied().collect();
    let mobile_plots: BTreeSet<PlotId> = path
        .mobile_plots
        .iter()
        .filter(|p| inputs.observable.contains(p) && !site_set.contains(p))
        .copied()
        .collect();
    let planned: Vec<(FeatureVector, f64)> = sites
        .iter()
        .map(|s| (feature_of(inputs, *s), inputs.noise.static_var()))
        .collect();
    let mobile_feats: Vec<FeatureVector> = mobile_plots
        .iter()
        .map(|p| feature_of(inputs, *p))
        .collect();
    let score = score_path(
        inputs.model,
        &planned,
        &mobile_feats,
        inputs.noise.mobile_var(),
    )?;
    let cells = graph.path_cells(&path);
    let edge_walks = graph.path_edge_walks(&path);
    Ok(PlanOutcome::Plan(Box::new(PlanResult {
        static_sites: sites,
        path,
        cells,
        edge_walks,
        mobile_plots,
        score,
        c_min,
    })))
}

/// Mission parameters. A mission keeps iterating until it has run at least
/// `iterations` planning rounds *and* covered at least `distance_cap`
/// cells; setting either to zero drops that requirement.
#[derive(Debug, Clone)]
pub struct MissionConfig {
    pub strategy: Strategy,
    pub seed: u64,
    pub p: usize,
    pub xi: u32,
    pub noise: NoiseModel,
    pub iterations: u32,
    pub distance_cap: u32,
    pub n_test: usize,
    pub mobile_avg: MobileAvgVariance,
    /// Refit hyperparameters every iteration instead of freezing them
    /// after the first.
    pub refit_each_iteration: bool,
    pub fit: FitConfig,
}

impl MissionConfig {
    /// The experiment defaults: p = 4, ξ = 0, σ_s = 0.5, σ_m = 2.5,
    /// 8 iterations, 250-cell distance target, 40 test plots.
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        MissionConfig {
            strategy,
            seed,
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

/// Snapshot of one executed iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub iteration: u32,
    pub static_sites: Vec<PlotId>,
    pub cost: u32,
    pub c_min: u32,
    pub score: f64,
    /// Cumulative distance after this iteration, in cells.
    pub distance: u64,
    /// Cumulative reading counts.
    pub n_static: usize,
    pub n_mobile: usize,
    /// Fused training-set size after the model update.
    pub n_train: usize,
    /// Test MAE of the updated model (NaN when the test set is empty).
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionLog {
    pub strategy: Strategy,
    pub seed: u64,
    /// MAE of the prior model, before any measurement (distance 0).
    pub prior_mae: f64,
    pub records: Vec<IterationRecord>,
    pub test_plots: Vec<PlotId>,
    /// Cumulative reading count per cell of distance walked, as a step
    /// function: (distance, readings so far). Exact at every distance,
    /// unlike the per-iteration records.
    pub count_curve: Vec<(u64, u64)>,
    /// True when the mission ended because nothing was left to plan.
    pub completed: bool,
    /// Set when an iteration failed; the log holds everything completed
    /// before the failure.
    pub aborted: Option<String>,
}

impl MissionLog {
    pub fn final_mae(&self) -> f64 {
        self.records.last().map_or(self.prior_mae, |r| r.mae)
    }

    pub fn total_distance(&self) -> u64 {
        self.records.last().map_or(0, |r| r.distance)
    }

    /// Exact number of readings collected by the time the agent had walked
    /// `distance` cells.
    pub fn readings_at(&self, distance: u64) -> u64 {
        let mut count = 0;
        for &(d, c) in &self.count_curve {
            if d > distance {
                break;
            }
            count = c;
        }
        count
    }
}

/// Runs a full mission: plan, traverse (recording mobile readings beside
/// every cell walked and static readings at the planned sites), fuse the
/// log, update the model, and repeat. Hyperparameters are fitted on the
/// first iteration's data and frozen unless `refit_each_iteration` is set.
pub fn run_mission(field: &Field, config: &MissionConfig) -> Result<MissionLog> {
    if config.strategy.is_informative() && config.p == 0 {
        return Err(Error::invalid("informative strategies need p >= 1"));
    }
    let (train_ids, test_ids) = crate::field::test_split(&field.grid, config.n_test, config.seed)?;
    let observable: BTreeSet<PlotId> = train_ids.iter().copied().collect();
    let normalizer = FeatureNormalizer::from_field(field);
    let test_feats: Vec<(PlotId, FeatureVector)> = test_ids
        .iter()
        .map(|id| (*id, normalizer.feature_vector(field, *id)))
        .collect();
    let mut sim = SensorSim::new(
        config.noise.static_std(),
        config.noise.mobile_std(),
        config.seed,
    )?;

    let prior_params = KernelParams::isotropic(1.0, 1.0)?;
    let mut model = GpModel::prior(prior_params);
    let mut fitted_params: Option<KernelParams> = None;
    let mut log: Vec<crate::fusion::Measurement> = Vec::new();
    let mut statically_sampled: BTreeSet<PlotId> = BTreeSet::new();
    let mut agent = default_start(&field.grid);
    let mut next_column = 0usize;
    let mut n_static = 0usize;
    let mut n_mobile = 0usize;
    let mut distance = 0u64;

    let prior_mae = mae_or_nan(&model, &test_feats, field)?;
    let mut records = Vec::new();
    let mut count_curve: Vec<(u64, u64)> = vec![(0, 0)];
    let mut completed = false;
    let mut aborted = None;

    let mut iteration = 0u32;
    'mission: loop {
        let iter_target_met = iteration >= config.iterations;
        let dist_target_met =
            config.distance_cap == 0 || distance >= u64::from(config.distance_cap);
        if (iter_target_met && dist_target_met) || iteration >= MAX_MISSION_ITERATIONS {
            break;
        }

        let eligible: Vec<PlotId> = observable
            .iter()
            .filter(|id| !statically_sampled.contains(id))
            .copied()
            .collect();
        let inputs = PlanInputs {
            strategy: config.strategy,
            model: &model,
            field,
            normalizer: &normalizer,
            observable: &observable,
            eligible: &eligible,
            agent,
            p: config.p,
            xi: config.xi,
            noise: &config.noise,
            next_column,
        };
        // iteration failures (unplannable geometry, numerical trouble)
        // abort the mission but keep everything logged so far
        let plan = match plan_iteration(&inputs) {
            Ok(PlanOutcome::Complete) => {
                completed = true;
                break;
            }
            Ok(PlanOutcome::Plan(plan)) => plan,
            Err(err) => {
                aborted = Some(err.to_string());
                break 'mission;
            }
        };

        let step: Result<()> = (|| {
        // traverse: every traversed edge yields one mobile reading per
        // observable plot beside its cells (endpoints included, so plots
        // at shared junction cells are read by both adjacent edges), and
        // the agent stops for a static reading the first time it reaches a
        // site's measurement cell
        let mut sites_by_cell: BTreeMap<Pos, Vec<PlotId>> = BTreeMap::new();
        for site in &plan.static_sites {
            sites_by_cell
                .entry(field.grid.waypoint_for(*site))
                .or_default()
                .push(*site);
        }
        let mut sites_done: BTreeSet<PlotId> = BTreeSet::new();
        let mut walked = distance;
        // the agent is already standing on the first cell; stop for its
        // sites before moving
        if let Some(sites) = sites_by_cell.get(&plan.cells[0]) {
            for site in sites {
                if sites_done.insert(*site) {
                    log.push(sim.sample_static(field, *site)?);
                    n_static += 1;
                }
            }
            record_count(&mut count_curve, walked, (n_static + n_mobile) as u64);
        }
        for walk in &plan.edge_walks {
            for (j, cell) in walk.iter().enumerate() {
                if j > 0 {
                    walked += 1;
                }
                for plot in field.grid.plots_beside(*cell) {
                    if observable.contains(&plot) {
                        log.push(sim.sample_mobile(field, plot)?);
                        n_mobile += 1;
                    }
                }
                if j > 0 {
                    if let Some(sites) = sites_by_cell.get(cell) {
                        for site in sites {
                            if sites_done.insert(*site) {
                                log.push(sim.sample_static(field, *site)?);
                                n_static += 1;
                            }
                        }
                    }
                }
                record_count(&mut count_curve, walked, (n_static + n_mobile) as u64);
            }
        }
        debug_assert_eq!(sites_done.len(), plan.static_sites.len());
        agent = *plan.cells.last().expect("paths have at least one cell");
        distance += u64::from(plan.path.cost);
        statically_sampled.extend(plan.static_sites.iter().copied());
        if !config.strategy.is_informative() {
            next_column += 1;
        }

        // fuse the full log and refresh the model
        let fused = ingest(&log, &config.noise, field.n_plots(), config.mobile_avg)?;
        let mut points = Vec::with_capacity(fused.len());
        let mut targets = Vec::with_capacity(fused.len());
        let mut variances = Vec::with_capacity(fused.len());
        for (plot, obs) in &fused {
            points.push(normalizer.feature_vector(field, *plot));
            targets.push(obs.value);
            variances.push(obs.variance);
        }
        let shift = targets.iter().sum::<f64>() / targets.len() as f64;
        if fitted_params.is_none() || config.refit_each_iteration {
            let centered: Vec<f64> = targets.iter().map(|t| t - shift).collect();
            let spread = std_dev(&centered).max(0.1);
            let centered_train =
                TrainingSet::new(points.clone(), centered, variances.clone(), &config.noise)?;
            let init = KernelParams::isotropic(spread, 1.0)?;
            let outcome = fit_hyperparameters(&centered_train, &init, &config.fit)?;
            fitted_params = Some(outcome.params);
        }
        let params = fitted_params.clone().expect("params fitted above");
        let train = TrainingSet::new(points, targets, variances, &config.noise)?;
        model = GpModel::fit(train, params, shift)?;

        iteration += 1;
        records.push(IterationRecord {
            iteration,
            static_sites: plan.static_sites.clone(),
            cost: plan.path.cost,
            c_min: plan.c_min,
            score: plan.score,
            distance,
            n_static,
            n_mobile,
            n_train: model.train().len(),
            mae: mae_or_nan(&model, &test_feats, field)?,
        });
        Ok(())
        })();
        if let Err(err) = step {
            aborted = Some(err.to_string());
            break 'mission;
        }
    }

    Ok(MissionLog {
        strategy: config.strategy,
        seed: config.seed,
        prior_mae,
        records,
        test_plots: test_ids,
        count_curve,
        completed,
        aborted,
    })
}

fn record_count(curve: &mut Vec<(u64, u64)>, walked: u64, total: u64) {
    match curve.last_mut() {
        Some(point) if point.0 == walked => point.1 = total,
        Some(point) if point.1 == total => {}
        _ => curve.push((walked, total)),
    }
}

fn mae_or_nan(
    model: &GpModel,
    test_feats: &[(PlotId, FeatureVector)],
    field: &Field,
) -> Result<f64> {
    if test_feats.is_empty() {
        return Ok(f64::NAN);
    }
    compute_mae(model, test_feats, &field.truth)
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{attach_synthetic_features, default_synthetic_params, standard_layout};
    use crate::gp::combined_cov_matrix;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn toy_field(seed: u64) -> Field {
        attach_synthetic_features(
            standard_layout(5, 2),
            seed,
            &default_synthetic_params(),
            (20.0, 85.0),
        )
        .unwrap()
    }

    fn noise() -> NoiseModel {
        NoiseModel::new(0.5, 2.5).unwrap()
    }

    fn toy_model(
        field: &Field,
        normalizer: &FeatureNormalizer,
        plots: &[usize],
        seed: u64,
    ) -> GpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<FeatureVector> = plots
            .iter()
            .map(|p| normalizer.feature_vector(field, PlotId(*p)))
            .collect();
        let targets: Vec<f64> = plots.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let vars = vec![0.25; plots.len()];
        let train = TrainingSet::new(points, targets, vars, &noise()).unwrap();
        GpModel::fit(train, KernelParams::isotropic(1.0, 0.6).unwrap(), 0.0).unwrap()
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("bogus".parse::<Strategy>().is_err());
    }

    #[test]
    fn first_pick_under_prior_is_smallest_id() {
        let field = toy_field(1);
        let normalizer = FeatureNormalizer::from_field(&field);
        let model = GpModel::prior(KernelParams::isotropic(1.0, 1.0).unwrap());
        let candidates: Vec<(PlotId, FeatureVector)> = field
            .grid
            .plot_ids()
            .map(|id| (id, normalizer.feature_vector(&field, id)))
            .collect();
        // prior variance is identical everywhere, so the tie-break decides
        let sites = select_static_sites(&model, &candidates, 1, 0.25).unwrap();
        assert_eq!(sites, vec![PlotId(0)]);
    }

    #[test]
    fn select_rejects_small_candidate_pools() {
        let field = toy_field(1);
        let normalizer = FeatureNormalizer::from_field(&field);
        let model = GpModel::prior(KernelParams::isotropic(1.0, 1.0).unwrap());
        let candidates: Vec<(PlotId, FeatureVector)> = field
            .grid
            .plot_ids()
            .take(2)
            .map(|id| (id, normalizer.feature_vector(&field, id)))
            .collect();
        assert!(select_static_sites(&model, &candidates, 3, 0.25).is_err());
    }

    /// Brute-force greedy oracle: recomputes the full posterior variance by
    /// explicit matrix inversion at every step.
    fn oracle_greedy(
        model: &GpModel,
        candidates: &[(PlotId, FeatureVector)],
        p: usize,
        static_var: f64,
    ) -> Vec<PlotId> {
        let mut remaining: Vec<(PlotId, FeatureVector)> = candidates.to_vec();
        remaining.sort_by_key(|c| c.0);
        let mut conditioning: Vec<(FeatureVector, f64)> = model
            .train()
            .points()
            .iter()
            .zip(model.train().noise_variances())
            .map(|(p, v)| (*p, *v))
            .collect();
        let mut chosen = Vec::new();
        for _ in 0..p {
            let mut best = 0;
            let mut best_var = f64::NEG_INFINITY;
            for (i, (_, fv)) in remaining.iter().enumerate() {
                let var = oracle_posterior_var(model.params(), &conditioning, fv);
                if var > best_var {
                    best_var = var;
                    best = i;
                }
            }
            let (id, fv) = remaining.remove(best);
            chosen.push(id);
            conditioning.push((fv, static_var));
        }
        chosen
    }

    fn oracle_posterior_var(
        params: &KernelParams,
        conditioning: &[(FeatureVector, f64)],
        query: &FeatureVector,
    ) -> f64 {
        let prior = combined_cov_matrix(&[*query], &[*query], params, None).unwrap()[(0, 0)];
        if conditioning.is_empty() {
            return prior;
        }
        let pts: Vec<FeatureVector> = conditioning.iter().map(|c| c.0).collect();
        let mut sigma = combined_cov_matrix(&pts, &pts, params, None).unwrap();
        for (i, (_, v)) in conditioning.iter().enumerate() {
            sigma[(i, i)] += v;
        }
        let n = pts.len();
        let jitter = 1e-8 * sigma.trace() / n as f64;
        for i in 0..n {
            sigma[(i, i)] += jitter;
        }
        let inv = sigma.try_inverse().unwrap();
        let k = combined_cov_matrix(&pts, &[*query], params, None).unwrap();
        let kv = DVector::from_iterator(n, k.column(0).iter().copied());
        prior - (kv.transpose() * inv * kv)[(0, 0)]
    }

    #[test]
    fn greedy_matches_brute_force_oracle() {
        let field = toy_field(7);
        let normalizer = FeatureNormalizer::from_field(&field);
        let model = toy_model(&field, &normalizer, &[0, 3, 8], 11);
        let candidates: Vec<(PlotId, FeatureVector)> = [1usize, 2, 4, 5, 6, 9]
            .iter()
            .map(|p| (PlotId(*p), normalizer.feature_vector(&field, PlotId(*p))))
            .collect();
        let got = select_static_sites(&model, &candidates, 2, 0.25).unwrap();
        let want = oracle_greedy(&model, &candidates, 2, 0.25);
        assert_eq!(got, want);
    }

    #[test]
    fn greedy_pair_meets_submodular_bound() {
        // joint entropy of the greedy pair is at least (1 - 1/e) of the best
        // pair's, measured as set-function gain
        for seed in 0..6 {
            let field = toy_field(100 + seed);
            let normalizer = FeatureNormalizer::from_field(&field);
            let model = toy_model(&field, &normalizer, &[0, 5], 200 + seed);
            let cand_ids = [1usize, 2, 3, 6, 7];
            let candidates: Vec<(PlotId, FeatureVector)> = cand_ids
                .iter()
                .map(|p| (PlotId(*p), normalizer.feature_vector(&field, PlotId(*p))))
                .collect();
            let static_var = noise().static_var();
            let joint = |a: usize, b: usize| -> f64 {
                let feats = vec![candidates[a].1, candidates[b].1];
                model.entropy(&feats, Some(static_var)).unwrap()
            };
            let greedy = select_static_sites(&model, &candidates, 2, static_var).unwrap();
            let gi = candidates.iter().position(|c| c.0 == greedy[0]).unwrap();
            let gj = candidates.iter().position(|c| c.0 == greedy[1]).unwrap();
            let h_greedy = joint(gi, gj);
            let mut h_best = f64::NEG_INFINITY;
            for i in 0..candidates.len() {
                for j in (i + 1)..candidates.len() {
                    h_best = h_best.max(joint(i, j));
                }
            }
            assert!(h_best > 0.0, "entropies should be positive with noise");
            assert!(
                h_greedy >= (1.0 - 1.0 / std::f64::consts::E) * h_best,
                "seed {seed}: greedy {h_greedy} best {h_best}"
            );
        }
    }

    #[test]
    fn superset_paths_score_at_least_subsets() {
        let field = toy_field(3);
        let normalizer = FeatureNormalizer::from_field(&field);
        let model = toy_model(&field, &normalizer, &[0, 9], 5);
        let feats: Vec<FeatureVector> = (1..8)
            .map(|p| normalizer.feature_vector(&field, PlotId(p)))
            .collect();
        let small = score_path(&model, &[], &feats[..3], 6.25).unwrap();
        let big = score_path(&model, &[], &feats[..6], 6.25).unwrap();
        assert!(big >= small, "big {big} small {small}");
        assert_eq!(
            score_path(&model, &[], &[], 6.25).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn score_of_already_sampled_plots_is_pure_noise_entropy() {
        let field = toy_field(4);
        let normalizer = FeatureNormalizer::from_field(&field);
        // train on plots 1 and 2 with tiny noise, then score a "path" whose
        // mobile plots coincide with them
        let pts: Vec<FeatureVector> = [1usize, 2]
            .iter()
            .map(|p| normalizer.feature_vector(&field, PlotId(*p)))
            .collect();
        let train =
            TrainingSet::new(pts.clone(), vec![1.0, 2.0], vec![1e-6, 1e-6], &noise()).unwrap();
        let model = GpModel::fit(train, KernelParams::isotropic(1.0, 0.6).unwrap(), 0.0).unwrap();
        let got = score_path(&model, &[], &pts, 6.25).unwrap();
        // dense oracle on the degenerate case: residual latent variance is
        // negligible, the score is the entropy of the mobile-noise block
        let want = 2.0 * 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 6.25).ln();
        assert!((got - want).abs() < 1e-3, "got {got} want {want}");
    }

    #[test]
    fn maxent_choice_survives_rescoring() {
        let field = toy_field(8);
        let normalizer = FeatureNormalizer::from_field(&field);
        let model = toy_model(&field, &normalizer, &[0, 4], 9);
        let observable: BTreeSet<PlotId> = field.grid.plot_ids().collect();
        let eligible: Vec<PlotId> = observable
            .iter()
            .filter(|p| ![0usize, 4].contains(&p.0))
            .copied()
            .collect();
        let inputs = PlanInputs {
            strategy: Strategy::MaxEnt,
            model: &model,
            field: &field,
            normalizer: &normalizer,
            observable: &observable,
            eligible: &eligible,
            agent: default_start(&field.grid),
            p: 2,
            xi: 2,
            noise: &noise(),
            next_column: 0,
        };
        let PlanOutcome::Plan(plan) = plan_iteration(&inputs).unwrap() else {
            panic!("expected a plan");
        };
        // rescore every feasible path through the public scoring op
        let waypoints: Vec<Pos> = plan
            .static_sites
            .iter()
            .map(|s| field.grid.waypoint_for(*s))
            .collect();
        let graph = build_graph(&field.grid, inputs.agent, &waypoints).unwrap();
        let c_min = shortest_cover_cost(&graph).unwrap();
        assert_eq!(c_min, plan.c_min);
        let planned: Vec<(FeatureVector, f64)> = plan
            .static_sites
            .iter()
            .map(|s| (normalizer.feature_vector(&field, *s), noise().static_var()))
            .collect();
        let site_set: BTreeSet<PlotId> = plan.static_sites.iter().copied().collect();
        let mut best = f64::NEG_INFINITY;
        for path in enumerate_feasible(&graph, c_min + 2).unwrap() {
            let feats: Vec<FeatureVector> = path
                .mobile_plots
                .iter()
                .filter(|p| !site_set.contains(p))
                .map(|p| normalizer.feature_vector(&field, *p))
                .collect();
            let s = score_path(&model, &planned, &feats, noise().mobile_var()).unwrap();
            best = best.max(s);
        }
        assert!(
            (plan.score - best).abs() < 1e-9,
            "plan score {} vs best rescored {best}",
            plan.score
        );
        assert!(plan.path.cost <= plan.c_min + 2);
    }

    #[test]
    fn shortest_picks_lexicographically_least_among_ties() {
        let field = toy_field(2);
        let normalizer = FeatureNormalizer::from_field(&field);
        let model = GpModel::prior(KernelParams::isotropic(1.0, 1.0).unwrap());
        let observable: BTreeSet<PlotId> = field.grid.plot_ids().collect();
        let eligible: Vec<PlotId> = observable.iter().copied().collect();
        let inputs = PlanInputs {
            strategy: Strategy::Shortest,
            model: &model,
            field: &field,
            normalizer: &normalizer,
            observable: &observable,
            eligible: &eligible,
            agent: default_start(&field.grid),
            p: 2,
            xi: 0,
            noise: &noise(),
            next_column: 0,
        };
        let PlanOutcome::Plan(plan) = plan_iteration(&inputs).unwrap() else {
            panic!("expected a plan");
        };
        assert_eq!(plan.path.cost, plan.c_min);
        // reproduce the feasible set; its first element is the expected pick
        let waypoints: Vec<Pos> = plan
            .static_sites
            .iter()
            .map(|s| field.grid.waypoint_for(*s))
            .collect();
        let graph = build_graph(&field.grid, inputs.agent, &waypoints).unwrap();
        let feasible = enumerate_feasible(&graph, plan.c_min).unwrap();
        assert_eq!(plan.path.nodes, feasible[0].nodes);
    }

    #[test]
    fn naive_static_first_leg_covers_column_one() {
        let field = attach_synthetic_features(
            standard_layout(25, 15),
            0,
            &default_synthetic_params(),
            (20.0, 85.0),
        )
        .unwrap();
        let normalizer = FeatureNormalizer::from_field(&field);
        let model = GpModel::prior(KernelParams::isotropic(1.0, 1.0).unwrap());
        let observable: BTreeSet<PlotId> = field.grid.plot_ids().collect();
        let eligible: Vec<PlotId> = observable.iter().copied().collect();
        let inputs = PlanInputs {
            strategy: Strategy::NaiveStatic,
            model: &model,
            field: &field,
            normalizer: &normalizer,
            observable: &observable,
            eligible: &eligible,
            agent: default_start(&field.grid),
            p: 4,
            xi: 0,
            noise: &noise(),
            next_column: 0,
        };
        let PlanOutcome::Plan(plan) = plan_iteration(&inputs).unwrap() else {
            panic!("expected a plan");
        };
        assert_eq!(plan.static_sites.len(), 25);
        assert_eq!(plan.path.cost, 24);
        let first_column: Vec<PlotId> = field.grid.plot_columns()[0].clone();
        assert_eq!(plan.static_sites, first_column);
    }

    #[test]
    fn zero_iteration_mission_is_empty() {
        let field = toy_field(5);
        let mut config = MissionConfig::new(Strategy::MaxEnt, 1);
        config.iterations = 0;
        config.distance_cap = 0;
        config.n_test = 2;
        let log = run_mission(&field, &config).unwrap();
        assert!(log.records.is_empty());
        assert!(log.prior_mae.is_finite());
    }

    #[test]
    fn default_maxent_mission_runs_eight_iterations() {
        let field = crate::field::default_field(0).unwrap();
        let mut config = MissionConfig::new(Strategy::MaxEnt, 0);
        config.distance_cap = 0; // iteration-driven, like the baseline setup
        config.fit = FitConfig {
            restarts: 2,
            max_iters: 40,
            perturbation: 0.5,
        };
        let log = run_mission(&field, &config).unwrap();
        assert_eq!(log.records.len(), 8);
        let all_sites: Vec<PlotId> = log
            .records
            .iter()
            .flat_map(|r| r.static_sites.iter().copied())
            .collect();
        assert_eq!(all_sites.len(), 32);
        // sites are never re-selected
        let unique: BTreeSet<PlotId> = all_sites.iter().copied().collect();
        assert_eq!(unique.len(), 32);
        // and never test plots
        let test: BTreeSet<PlotId> = log.test_plots.iter().copied().collect();
        assert!(all_sites.iter().all(|s| !test.contains(s)));
    }

    #[test]
    fn missions_are_deterministic() {
        let field = toy_field(9);
        let mut config = MissionConfig::new(Strategy::MaxEnt, 3);
        config.iterations = 2;
        config.distance_cap = 0;
        config.n_test = 2;
        config.p = 2;
        config.fit = FitConfig {
            restarts: 1,
            max_iters: 15,
            perturbation: 0.5,
        };
        let a = run_mission(&field, &config).unwrap();
        let b = run_mission(&field, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unplannable_iteration_aborts_with_partial_log() {
        // on a single-corridor layout the no-U-turn rule can strand the
        // agent with selected sites on both sides; the mission keeps what
        // it has and reports why it stopped
        let grid = crate::field::load_grid("...\nP.P\nP.P\nP.P\nP.P\nP.P\nP.P\n...\n").unwrap();
        let field = attach_synthetic_features(grid, 19, &default_synthetic_params(), (20.0, 85.0))
            .unwrap();
        let mut config = MissionConfig::new(Strategy::MaxEnt, 19);
        config.iterations = 3;
        config.distance_cap = 0;
        config.n_test = 2;
        config.p = 2;
        config.fit = FitConfig {
            restarts: 1,
            max_iters: 10,
            perturbation: 0.5,
        };
        let log = run_mission(&field, &config).unwrap();
        let reason = log.aborted.as_ref().expect("mission should abort");
        assert!(reason.contains("covered"), "{reason}");
        assert_eq!(log.records.len(), 2);
        assert!(!log.completed);
    }

    #[test]
    fn serpentine_completes_and_signals() {
        let field = toy_field(6);
        let mut config = MissionConfig::new(Strategy::NaiveStatic, 2);
        config.iterations = 50;
        config.distance_cap = 0;
        config.n_test = 2;
        config.fit = FitConfig {
            restarts: 1,
            max_iters: 10,
            perturbation: 0.5,
        };
        let log = run_mission(&field, &config).unwrap();
        // 2 plot columns -> 2 legs, then the route is exhausted
        assert_eq!(log.records.len(), 2);
        assert!(log.completed);
    }
}
