//! Monte-Carlo benchmark harness: the four RMSE metrics, the N_obs /
//! normalized-density sweep, the transmitter-distance sweep, and the
//! scenario-by-density table with per-point retraining.

use std::collections::HashSet;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Result, RmeError};
use crate::estimators::EstimatorConfig;
use crate::geo::{
    quantize, sample_patch, split_clustered, split_uniform, CombiningMode, EstimationInstance,
    GridSpec, Location, Measurement, MeasurementSet, QuantizedGrid,
};
use crate::rng::{stream, Domain};
use crate::synth::{generate_map, lawnmower_locations, sample_measurements, PropagationConfig};
use crate::training::{train_traditional, SearchGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    /// Error at unobserved measurement locations, uniform splits.
    Rmse,
    /// Error at unobserved measurement locations, clustered (grid-cell) splits.
    RmseG,
    /// Grid-entry error at unobserved occupied entries.
    GridNobs,
    /// Grid-entry error at all occupied entries.
    GridAll,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Rmse => "rmse",
            MetricKind::RmseG => "rmse_g",
            MetricKind::GridNobs => "rmse_grid_nobs",
            MetricKind::GridAll => "rmse_grid_all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rmse" => Ok(MetricKind::Rmse),
            "rmse_g" => Ok(MetricKind::RmseG),
            "rmse_grid_nobs" => Ok(MetricKind::GridNobs),
            "rmse_grid_all" => Ok(MetricKind::GridAll),
            other => Err(RmeError::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// One aggregated sweep result row.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub estimator: String,
    pub metric: MetricKind,
    pub n_obs: usize,
    pub normalized_density: f64,
    /// Root of the mean per-iteration MSE, dB.
    pub mean_error: f64,
    /// Standard error of the RMSE (delta method), dB.
    pub std_error: f64,
    pub iterations: usize,
}

/// Observations per squared-wavelength area: N_obs * lambda^2 / l^2.
pub fn normalized_density(n_obs: usize, wavelength: f64, patch_side: f64) -> f64 {
    n_obs as f64 * wavelength * wavelength / (patch_side * patch_side)
}

/// Mean squared error of one iteration's estimates at held-out locations.
pub fn iteration_mse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(RmeError::InvalidArgument(
            "iteration requires matching non-empty estimate/truth slices".into(),
        ));
    }
    let acc: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    Ok(acc / estimates.len() as f64)
}

/// The nested RMSE estimator: mean over iterations of the per-iteration mean
/// squared error, then one square root.
pub fn metric_rmse(iterations: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if iterations.is_empty() {
        return Err(RmeError::InvalidArgument("no iterations".into()));
    }
    let mses: Result<Vec<f64>> = iterations
        .iter()
        .map(|(est, truth)| iteration_mse(est, truth))
        .collect();
    let mses = mses?;
    Ok((mses.iter().sum::<f64>() / mses.len() as f64).sqrt())
}

/// Per-iteration squared grid error: GridNobs averages over occupied entries
/// outside the observed set, GridAll over all occupied entries.
pub fn grid_squared_error(
    kind: MetricKind,
    gamma_hat: &Array2<f64>,
    grid: &QuantizedGrid,
    observed: &HashSet<(usize, usize)>,
) -> Result<f64> {
    let occupied = grid.occupied();
    if occupied.is_empty() {
        return Err(RmeError::InvalidArgument("grid has no occupied entries".into()));
    }
    let eval: Vec<(usize, usize)> = match kind {
        MetricKind::GridAll => occupied,
        MetricKind::GridNobs => occupied
            .into_iter()
            .filter(|rc| !observed.contains(rc))
            .collect(),
        _ => {
            return Err(RmeError::InvalidArgument(
                "grid_squared_error applies to grid metrics only".into(),
            ))
        }
    };
    if eval.is_empty() {
        return Err(RmeError::InvalidArgument(
            "no unobserved occupied entries to evaluate".into(),
        ));
    }
    let acc: f64 = eval
        .iter()
        .map(|&(r, c)| {
            let d = gamma_hat[[r, c]] - grid.values[[r, c]];
            d * d
        })
        .sum();
    Ok(acc / eval.len() as f64)
}

/// Single-iteration grid RMSE in dB.
pub fn metric_grid(
    kind: MetricKind,
    gamma_hat: &Array2<f64>,
    grid: &QuantizedGrid,
    observed: &HashSet<(usize, usize)>,
) -> Result<f64> {
    Ok(grid_squared_error(kind, gamma_hat, grid, observed)?.sqrt())
}

/// Aggregate per-iteration MSEs into (rmse, delta-method standard error).
fn aggregate(mses: &[f64]) -> (f64, f64) {
    let n = mses.len() as f64;
    let mean = mses.iter().sum::<f64>() / n;
    let rmse = mean.sqrt();
    if rmse == 0.0 || mses.len() < 2 {
        return (rmse, 0.0);
    }
    let var = mses.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1.0);
    let se_mean = (var / n).sqrt();
    (rmse, se_mean / (2.0 * rmse))
}

const DRAW_RETRY: usize = 100;

/// Draw a patch instance suitable for the metric: at least `min_meas`
/// measurements (and, for grid metrics, at least `min_occupied` occupied
/// entries after quantization).
fn draw_instance(
    sets: &[MeasurementSet],
    patch_side: f64,
    min_meas: usize,
    min_occupied: usize,
    rng: &mut impl Rng,
) -> Result<(usize, EstimationInstance)> {
    for _ in 0..DRAW_RETRY {
        let set_idx = rng.gen_range(0..sets.len());
        let inst = sample_patch(&sets[set_idx], patch_side, rng)?;
        if inst.len() < min_meas {
            continue;
        }
        if min_occupied > 0 {
            let spec = GridSpec::for_patch(&inst.patch, sets[set_idx].grid_spacing);
            let occ = crate::geo::grid_assignment(&inst, &spec)
                .into_iter()
                .collect::<HashSet<_>>()
                .len();
            if occ < min_occupied {
                continue;
            }
        }
        return Ok((set_idx, inst));
    }
    Err(RmeError::EmptyPatch {
        attempts: DRAW_RETRY,
    })
}

fn run_iteration(
    sets: &[MeasurementSet],
    estimator: &EstimatorConfig,
    metric: MetricKind,
    n_obs: usize,
    patch_side: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    match metric {
        MetricKind::Rmse | MetricKind::RmseG => {
            let (set_idx, inst) = draw_instance(sets, patch_side, 2, 0, rng)?;
            let spacing = sets[set_idx].grid_spacing;
            let spec = GridSpec::for_patch(&inst.patch, spacing);
            let split = match metric {
                MetricKind::Rmse => {
                    let n = n_obs.clamp(1, inst.len() - 1);
                    split_uniform(&inst, n, rng)?
                }
                _ => {
                    let occ = crate::geo::grid_assignment(&inst, &spec)
                        .into_iter()
                        .collect::<HashSet<_>>()
                        .len();
                    let mut n = n_obs.clamp(1, occ);
                    // Keep at least one held-out measurement.
                    loop {
                        let split = split_clustered(&inst, &spec, n, rng)?;
                        if !split.nobs.is_empty() {
                            break split;
                        }
                        if n == 1 {
                            return Err(RmeError::InvalidArgument(
                                "cannot form a non-empty held-out set".into(),
                            ));
                        }
                        n -= 1;
                        continue;
                    }
                }
            };
            let obs: Vec<Measurement> =
                split.obs.iter().map(|&k| inst.measurements[k]).collect();
            let estimate = estimator.fit(&obs, &spec)?;
            let (est, truth): (Vec<f64>, Vec<f64>) = split
                .nobs
                .iter()
                .map(|&k| {
                    let m = inst.measurements[k];
                    (estimate.evaluate(&m.loc), m.power_db)
                })
                .unzip();
            iteration_mse(&est, &truth)
        }
        MetricKind::GridNobs | MetricKind::GridAll => {
            let min_occ = if metric == MetricKind::GridNobs { 2 } else { 1 };
            let (set_idx, inst) = draw_instance(sets, patch_side, 1, min_occ, rng)?;
            let spec = GridSpec::for_patch(&inst.patch, sets[set_idx].grid_spacing);
            let grid = quantize(&inst, &spec, CombiningMode::DbMean);
            let occupied = grid.occupied();
            let cap = if metric == MetricKind::GridNobs {
                occupied.len() - 1
            } else {
                occupied.len()
            };
            let n = n_obs.clamp(1, cap);
            let picked = rand::seq::index::sample(rng, occupied.len(), n);
            let observed: HashSet<(usize, usize)> =
                picked.iter().map(|k| occupied[k]).collect();
            let obs: Vec<Measurement> = occupied
                .iter()
                .filter(|rc| observed.contains(rc))
                .map(|&(r, c)| Measurement {
                    loc: spec.point0(r, c),
                    power_db: grid.values[[r, c]],
                })
                .collect();
            let estimate = estimator.fit(&obs, &spec)?;
            let gamma_hat = estimate.grid_values(&spec);
            grid_squared_error(metric, &gamma_hat, &grid, &observed)
        }
    }
}

/// The main Monte-Carlo sweep: one report row per (metric, n_obs) pair.
/// Iterations use independent child rng streams and run in parallel; results
/// are aggregated in iteration order, so reports are identical for any
/// thread count.
pub fn run_sweep(
    sets: &[MeasurementSet],
    estimator: &EstimatorConfig,
    metrics: &[MetricKind],
    n_obs_list: &[usize],
    patch_side: f64,
    iterations: usize,
    seed: u64,
) -> Result<Vec<MetricReport>> {
    if sets.is_empty() || metrics.is_empty() || n_obs_list.is_empty() || iterations == 0 {
        return Err(RmeError::InvalidArgument(
            "sweep requires sets, metrics, n_obs values and iterations >= 1".into(),
        ));
    }
    let wavelength = sets[0].wavelength;
    let mut reports = Vec::with_capacity(metrics.len() * n_obs_list.len());
    for (mi, &metric) in metrics.iter().enumerate() {
        for (ni, &n_obs) in n_obs_list.iter().enumerate() {
            let base = ((mi * n_obs_list.len() + ni) * iterations) as u64;
            let mses: Result<Vec<f64>> = (0..iterations)
                .into_par_iter()
                .map(|it| {
                    let mut rng = stream(seed, Domain::McIteration, base + it as u64);
                    run_iteration(sets, estimator, metric, n_obs, patch_side, &mut rng)
                })
                .collect();
            let mses = mses?;
            let (mean_error, std_error) = aggregate(&mses);
            reports.push(MetricReport {
                estimator: estimator.id().to_string(),
                metric,
                n_obs,
                normalized_density: normalized_density(n_obs, wavelength, patch_side),
                mean_error,
                std_error,
                iterations,
            });
        }
    }
    Ok(reports)
}

/// Settings shared by the synthetic sweeps.
#[derive(Debug, Clone)]
pub struct SyntheticSweepConfig {
    pub region: (f64, f64),
    pub grid_spacing: f64,
    /// Serpentine sampling-path spacings for measurement collection.
    pub line_spacing: f64,
    pub along_spacing: f64,
    pub patch_side: f64,
    pub iterations: usize,
    pub maps_per_point: usize,
}

fn synthesize_sets(
    template: &PropagationConfig,
    sweep: &SyntheticSweepConfig,
    map_seed_base: u64,
) -> Result<Vec<MeasurementSet>> {
    (0..sweep.maps_per_point)
        .map(|k| {
            let mut cfg = template.clone();
            cfg.seed = map_seed_base.wrapping_add(k as u64);
            let map = generate_map(sweep.region, sweep.grid_spacing, &cfg)?;
            let locs = lawnmower_locations(sweep.region, sweep.line_spacing, sweep.along_spacing);
            Ok(sample_measurements(&map, &locs, &cfg))
        })
        .collect()
}

fn n_obs_for_density(density: f64, wavelength: f64, patch_side: f64) -> usize {
    ((density * patch_side * patch_side / (wavelength * wavelength)).round() as usize).max(1)
}

/// RMSE vs transmitter distance at a fixed normalized density. The
/// transmitter sits `distance` meters from the region center, along +x.
pub fn distance_sweep(
    template: &PropagationConfig,
    distances: &[f64],
    estimator: &EstimatorConfig,
    density: f64,
    sweep: &SyntheticSweepConfig,
    seed: u64,
) -> Result<Vec<(f64, MetricReport)>> {
    if distances.iter().any(|&d| d <= 0.0) {
        return Err(RmeError::InvalidArgument("distances must be > 0".into()));
    }
    let n_obs = n_obs_for_density(density, template.wavelength, sweep.patch_side);
    distances
        .iter()
        .enumerate()
        .map(|(di, &d)| {
            let mut cfg = template.clone();
            cfg.tx_location = Location::new(sweep.region.0 / 2.0 + d, sweep.region.1 / 2.0);
            let sets = synthesize_sets(
                &cfg,
                sweep,
                seed.wrapping_mul(1000).wrapping_add(di as u64 * sweep.maps_per_point as u64),
            )?;
            let mut reports = run_sweep(
                &sets,
                estimator,
                &[MetricKind::Rmse],
                &[n_obs],
                sweep.patch_side,
                sweep.iterations,
                seed.wrapping_add(di as u64),
            )?;
            Ok((d, reports.pop().expect("one report")))
        })
        .collect()
}

/// A named propagation scenario for the scenario-by-density table.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub config: PropagationConfig,
}

#[derive(Debug, Clone)]
pub struct ScenarioRow {
    pub scenario: String,
    pub density: f64,
    pub report: MetricReport,
}

/// For each (scenario, density): retrain Kriging hyperparameters on patches
/// from a disjoint training split of synthetic maps, then evaluate RMSE on
/// the test split.
pub fn scenario_sweep(
    scenarios: &[Scenario],
    densities: &[f64],
    search: &SearchGrid,
    sweep: &SyntheticSweepConfig,
    train_budget: usize,
    seed: u64,
) -> Result<Vec<ScenarioRow>> {
    if scenarios.is_empty() || densities.is_empty() {
        return Err(RmeError::InvalidArgument(
            "scenario sweep needs scenarios and densities".into(),
        ));
    }
    let mut rows = Vec::new();
    for (si, sc) in scenarios.iter().enumerate() {
        let base = seed.wrapping_add(si as u64 * 100_000);
        // Disjoint map seeds for train and test.
        let train_sets = synthesize_sets(&sc.config, sweep, base)?;
        let test_sets = synthesize_sets(&sc.config, sweep, base + sweep.maps_per_point as u64)?;
        let mut patch_rng = stream(seed, Domain::PatchSampling, si as u64);
        let train_instances: Vec<EstimationInstance> = (0..sweep.maps_per_point.max(8))
            .map(|_| {
                let k = patch_rng.gen_range(0..train_sets.len());
                sample_patch(&train_sets[k], sweep.patch_side, &mut patch_rng)
            })
            .collect::<Result<_>>()?;
        for (di, &density) in densities.iter().enumerate() {
            let n_obs = n_obs_for_density(density, sc.config.wavelength, sweep.patch_side);
            let trained = train_traditional(
                &train_instances,
                search,
                (n_obs, n_obs),
                train_budget,
                base + di as u64,
            )?;
            let estimator = EstimatorConfig::Kriging(trained.kriging);
            let mut reports = run_sweep(
                &test_sets,
                &estimator,
                &[MetricKind::Rmse],
                &[n_obs],
                sweep.patch_side,
                sweep.iterations,
                base + 10_000 + di as u64,
            )?;
            rows.push(ScenarioRow {
                scenario: sc.name.clone(),
                density,
                report: reports.pop().expect("one report"),
            });
        }
    }
    Ok(rows)
}
