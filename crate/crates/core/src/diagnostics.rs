//! Post-processing of trajectory batches: sublinear expectations, capacities,
//! convergence statistics and upcrossing counts.
//!
//! Every supremum here is over the finite scenario family that produced the
//! batch, so it is a lower bound on the corresponding quantity over all
//! admissible measures. "Quasi-sure" statements are checked as "holds on every
//! trial of every scenario".

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{derive_seed, norm, Batch, StopReason, Trajectory, FAMILY_CAVEAT};
use crate::error::{domain, Result};
use crate::lyapunov::LyapunovSpec;
use crate::SCHEMA_VERSION;

/// Two-sided 95% normal quantile used for Wilson intervals.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMean {
    pub scenario_id: u64,
    pub n: usize,
    pub excluded_nonfinite: usize,
    pub mean: f64,
    pub std_err: f64,
}

/// `Ê[X] ≈ max over scenarios of the Monte Carlo mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublinearEstimate {
    pub schema_version: u32,
    pub sup: f64,
    pub argmax_scenario: u64,
    pub sup_std_err: f64,
    pub per_scenario: Vec<ScenarioMean>,
    pub lower_bound: bool,
    pub caveat: String,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn nonempty(batch: &Batch) -> Result<()> {
    if batch.trajectories().next().is_none() {
        return Err(domain("batch contains no trajectories"));
    }
    Ok(())
}

/// Per-scenario Monte Carlo means of `functional` and their maximum.
/// Non-finite functional values are dropped and counted.
pub fn sublinear_expectation<F>(functional: F, batch: &Batch) -> Result<SublinearEstimate>
where
    F: Fn(&Trajectory) -> f64 + Sync,
{
    nonempty(batch)?;
    let per_scenario: Vec<ScenarioMean> = batch
        .scenario_ids
        .iter()
        .map(|&id| {
            let trajs: Vec<&Trajectory> = batch.for_scenario(id).collect();
            let raw: Vec<f64> = trajs.par_iter().map(|t| functional(t)).collect();
            let values: Vec<f64> = raw.iter().copied().filter(|v| v.is_finite()).collect();
            let (mean, std_err) = if values.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_and_se(&values)
            };
            ScenarioMean {
                scenario_id: id,
                n: values.len(),
                excluded_nonfinite: raw.len() - values.len(),
                mean,
                std_err,
            }
        })
        .collect();
    let best = per_scenario
        .iter()
        .filter(|s| s.mean.is_finite())
        .fold(None::<&ScenarioMean>, |acc, s| match acc {
            Some(a) if a.mean >= s.mean => Some(a),
            _ => Some(s),
        })
        .ok_or_else(|| domain("functional is non-finite on every trajectory"))?;
    Ok(SublinearEstimate {
        schema_version: SCHEMA_VERSION,
        sup: best.mean,
        argmax_scenario: best.scenario_id,
        sup_std_err: best.std_err,
        lower_bound: true,
        caveat: FAMILY_CAVEAT.to_string(),
        per_scenario: per_scenario.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProbability {
    pub scenario_id: u64,
    pub n: usize,
    pub hits: usize,
    pub probability: f64,
    pub std_err: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

/// `c(A) ≈ max over scenarios of the empirical probability of A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub schema_version: u32,
    pub event: String,
    pub per_scenario: Vec<ScenarioProbability>,
    pub supremum: f64,
    pub argmax_scenario: u64,
    pub family_size: usize,
    pub lower_bound: bool,
    pub caveat: String,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if hits as f64 == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

pub fn capacity<F>(event_name: &str, event: F, batch: &Batch) -> Result<CapacityEstimate>
where
    F: Fn(&Trajectory) -> bool + Sync,
{
    nonempty(batch)?;
    let per_scenario: Vec<ScenarioProbability> = batch
        .scenario_ids
        .iter()
        .map(|&id| {
            let trajs: Vec<&Trajectory> = batch.for_scenario(id).collect();
            let hits = trajs.par_iter().filter(|t| event(t)).count();
            let n = trajs.len();
            let p = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
            let (wilson_lo, wilson_hi) = wilson_interval(hits, n);
            ScenarioProbability {
                scenario_id: id,
                n,
                hits,
                probability: p,
                std_err: if n == 0 {
                    0.0
                } else {
                    (p * (1.0 - p) / n as f64).sqrt()
                },
                wilson_lo,
                wilson_hi,
            }
        })
        .collect();
    let best = per_scenario
        .iter()
        .filter(|s| s.n > 0)
        .fold(&per_scenario[0], |a, s| {
            if s.probability > a.probability {
                s
            } else {
                a
            }
        });
    Ok(CapacityEstimate {
        schema_version: SCHEMA_VERSION,
        event: event_name.to_string(),
        supremum: best.probability,
        argmax_scenario: best.scenario_id,
        family_size: per_scenario.len(),
        lower_bound: true,
        caveat: FAMILY_CAVEAT.to_string(),
        per_scenario,
    })
}

/// Distance from a state to the set where η vanishes.
pub type KernelFn = dyn Fn(&[f64]) -> f64 + Sync;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub scenario_id: u64,
    pub seed: u64,
    pub horizon: f64,
    /// max − min of V(x(t),t) over the tail window.
    pub tail_oscillation: f64,
    pub initial_eta: Option<f64>,
    pub terminal_eta: Option<f64>,
    /// `(1/T) log(|x(T)| / |x(0)|)`
    pub exponent: f64,
    /// Set when |x(T)| underflowed and was clamped to the smallest normal.
    pub exponent_clamped: bool,
    pub kernel_distance: f64,
    pub min_norm: f64,
    pub terminal_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplodedRun {
    pub scenario_id: u64,
    pub seed: u64,
    pub step: usize,
    pub non_finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceAggregates {
    pub trajectories: usize,
    pub max_tail_oscillation: f64,
    pub max_terminal_eta: Option<f64>,
    pub min_initial_eta: Option<f64>,
    /// Every trajectory ends with η below its starting value.
    pub eta_decreased_everywhere: Option<bool>,
    pub max_exponent: f64,
    pub median_exponent: f64,
    pub q90_exponent: f64,
    pub clamped_exponents: usize,
    pub max_kernel_distance: f64,
    pub min_norm_over_all: f64,
    pub max_terminal_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub system: String,
    pub lyapunov: String,
    pub tail_fraction: f64,
    pub aggregates: ConvergenceAggregates,
    pub exploded: Vec<ExplodedRun>,
    pub failed_runs: usize,
    pub per_trajectory: Vec<TrajectoryMetrics>,
    pub caveat: String,
}

impl ConvergenceReport {
    /// Summary without the per-trajectory table.
    pub fn brief(&self) -> Self {
        Self {
            per_trajectory: Vec::new(),
            ..self.clone()
        }
    }
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

fn metrics(
    t: &Trajectory,
    spec: &LyapunovSpec,
    kernel_distance: &KernelFn,
    tail_fraction: f64,
) -> TrajectoryMetrics {
    let horizon = t.terminal_time();
    let start = horizon * (1.0 - tail_fraction);
    let (lo, hi) = (0..t.len())
        .filter(|&i| t.time(i) >= start)
        .map(|i| spec.value(t.state(i), t.time(i)))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let r0 = t.initial_norm();
    let r_end = t.terminal_norm();
    let clamped = r_end < f64::MIN_POSITIVE;
    let exponent = if horizon > 0.0 {
        (r_end.max(f64::MIN_POSITIVE) / r0).ln() / horizon
    } else {
        0.0
    };
    TrajectoryMetrics {
        scenario_id: t.scenario_id,
        seed: t.seed,
        horizon,
        tail_oscillation: (hi - lo).max(0.0),
        initial_eta: spec.eta(t.initial()),
        terminal_eta: spec.eta(t.terminal()),
        exponent,
        exponent_clamped: clamped,
        kernel_distance: kernel_distance(t.terminal()),
        min_norm: t.min_norm,
        terminal_norm: r_end,
    }
}

/// Finite-horizon convergence diagnostics. `kernel_distance` defaults to
/// `|x|` (distance to Ker η = {0}). Exploded runs are listed separately and
/// excluded from the aggregates.
pub fn convergence_report(
    batch: &Batch,
    spec: &LyapunovSpec,
    kernel_distance: Option<&KernelFn>,
    tail_fraction: f64,
) -> Result<ConvergenceReport> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(domain(format!(
            "tail_fraction must lie in (0, 1), got {tail_fraction}"
        )));
    }
    nonempty(batch)?;
    let default_kernel = |x: &[f64]| norm(x);
    let kernel = kernel_distance.unwrap_or(&default_kernel);

    let mut exploded = Vec::new();
    let mut healthy = Vec::new();
    for t in batch.trajectories() {
        match t.stop_reason {
            StopReason::Exploded {
                step, non_finite, ..
            } => exploded.push(ExplodedRun {
                scenario_id: t.scenario_id,
                seed: t.seed,
                step,
                non_finite,
            }),
            _ => healthy.push(t),
        }
    }
    let per_trajectory: Vec<TrajectoryMetrics> = healthy
        .par_iter()
        .map(|t| metrics(t, spec, kernel, tail_fraction))
        .collect();

    let fmax = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = per_trajectory.iter().map(|m| m.exponent).collect();
    exps.sort_by(f64::total_cmp);
    let etas: Option<Vec<(f64, f64)>> = per_trajectory
        .iter()
        .map(|m| Some((m.initial_eta?, m.terminal_eta?)))
        .collect();
    let etas = etas.filter(|v| !v.is_empty());
    let aggregates = ConvergenceAggregates {
        trajectories: per_trajectory.len(),
        max_tail_oscillation: fmax(&mut per_trajectory.iter().map(|m| m.tail_oscillation)),
        max_terminal_eta: etas
            .as_ref()
            .map(|v| v.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max)),
        min_initial_eta: etas
            .as_ref()
            .map(|v| v.iter().map(|e| e.0).fold(f64::INFINITY, f64::min)),
        eta_decreased_everywhere: etas.as_ref().map(|v| v.iter().all(|(a, b)| b < a)),
        max_exponent: exps.last().copied().unwrap_or(f64::NAN),
        median_exponent: nearest_rank(&exps, 0.5),
        q90_exponent: nearest_rank(&exps, 0.9),
        clamped_exponents: per_trajectory.iter().filter(|m| m.exponent_clamped).count(),
        max_kernel_distance: fmax(&mut per_trajectory.iter().map(|m| m.kernel_distance)),
        min_norm_over_all: per_trajectory
            .iter()
            .map(|m| m.min_norm)
            .fold(f64::INFINITY, f64::min),
        max_terminal_norm: fmax(&mut per_trajectory.iter().map(|m| m.terminal_norm)),
    };
    Ok(ConvergenceReport {
        schema_version: SCHEMA_VERSION,
        system: batch.system.clone(),
        lyapunov: spec.name().to_string(),
        tail_fraction,
        aggregates,
        exploded,
        failed_runs: batch.failures().count(),
        per_trajectory,
        caveat: FAMILY_CAVEAT.to_string(),
    })
}

/// Number of completed upcrossings of `[alpha, beta]`: wait for a value
/// `≤ alpha`, then for a value `≥ beta`, and repeat.
pub fn upcrossings(series: &[f64], alpha: f64, beta: f64) -> Result<usize> {
    if !(alpha < beta) {
        return Err(domain(format!(
            "upcrossing band needs alpha < beta, got [{alpha}, {beta}]"
        )));
    }
    let mut count = 0;
    let mut below = false;
    for &v in series {
        if !below {
            below = v <= alpha;
        } else if v >= beta {
            count += 1;
            below = false;
        }
    }
    Ok(count)
}

/// A discrete-time process sampled under one of finitely many measures.
pub trait DiscreteProcess: Sync {
    fn n_measures(&self) -> usize;
    /// Path `M(0), …, M(horizon)` under measure `measure`.
    fn sample_path(&self, measure: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// `M(n) = M(0) + Σ (drift + σ Z)` with one step variance per measure.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWalk {
    pub start: f64,
    pub drift: f64,
    pub step_variances: Vec<f64>,
}

impl DiscreteProcess for GaussianWalk {
    fn n_measures(&self) -> usize {
        self.step_variances.len()
    }

    fn sample_path(&self, measure: usize, horizon: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let sd = self.step_variances[measure].sqrt();
        let mut m = self.start;
        let mut path = Vec::with_capacity(horizon + 1);
        path.push(m);
        for _ in 0..horizon {
            let z: f64 = StandardNormal.sample(rng);
            m += self.drift + sd * z;
            path.push(m);
        }
        path
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpcrossingMeasureRow {
    pub measure: usize,
    pub mean_upcrossings: f64,
    pub upcrossings_se: f64,
    /// `E[(M(N) − α)⁺] / (β − α)`
    pub mean_bound: f64,
    pub bound_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpcrossingReport {
    pub schema_version: u32,
    pub alpha: f64,
    pub beta: f64,
    pub n_paths: usize,
    pub horizon: usize,
    pub per_measure: Vec<UpcrossingMeasureRow>,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub pass: bool,
    /// Set on failure: the submartingale hypothesis is likely violated.
    pub hypothesis_violation_suspected: bool,
    pub caveat: String,
}

/// Monte Carlo check of `Ê[U(α,β)] ≤ Ê[(M(N) − α)⁺] / (β − α)` with both
/// sides taken as suprema over the process's measures. PASS iff
/// `lhs ≤ rhs + 3·sqrt(se_lhs² + se_rhs²)`.
pub fn upcrossing_inequality_check<P: DiscreteProcess>(
    process: &P,
    alpha: f64,
    beta: f64,
    n_paths: usize,
    horizon: usize,
    seed: u64,
) -> Result<UpcrossingReport> {
    if !(alpha < beta) {
        return Err(domain(format!(
            "upcrossing band needs alpha < beta, got [{alpha}, {beta}]"
        )));
    }
    if n_paths == 0 || process.n_measures() == 0 {
        return Err(domain("need at least one path and one measure"));
    }
    let per_measure: Vec<UpcrossingMeasureRow> = (0..process.n_measures())
        .map(|measure| {
            let pairs: Vec<(f64, f64)> = (0..n_paths as u64)
                .into_par_iter()
                .map(|j| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, measure as u64, j));
                    let path = process.sample_path(measure, horizon, &mut rng);
                    let u = upcrossings(&path, alpha, beta).expect("band checked") as f64;
                    let end = *path.last().expect("path is nonempty");
                    (u, (end - alpha).max(0.0) / (beta - alpha))
                })
                .collect();
            let (us, bs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (mu, su) = mean_and_se(&us);
            let (mb, sb) = mean_and_se(&bs);
            UpcrossingMeasureRow {
                measure,
                mean_upcrossings: mu,
                upcrossings_se: su,
                mean_bound: mb,
                bound_se: sb,
            }
        })
        .collect();
    let lhs_row = per_measure.iter().fold(&per_measure[0], |a, r| {
        if r.mean_upcrossings > a.mean_upcrossings {
            r
        } else {
            a
        }
    });
    let rhs_row = per_measure.iter().fold(&per_measure[0], |a, r| {
        if r.mean_bound > a.mean_bound {
            r
        } else {
            a
        }
    });
    let slack = 3.0 * (lhs_row.upcrossings_se.powi(2) + rhs_row.bound_se.powi(2)).sqrt();
    let pass = lhs_row.mean_upcrossings <= rhs_row.mean_bound + slack;
    Ok(UpcrossingReport {
        schema_version: SCHEMA_VERSION,
        alpha,
        beta,
        n_paths,
        horizon,
        lhs: lhs_row.mean_upcrossings,
        lhs_se: lhs_row.upcrossings_se,
        rhs: rhs_row.mean_bound,
        rhs_se: rhs_row.bound_se,
        pass,
        hypothesis_violation_suspected: !pass,
        caveat: "suprema over a finite measure family; the submartingale hypothesis is asserted by the caller"
            .into(),
        per_measure,
    })
}
