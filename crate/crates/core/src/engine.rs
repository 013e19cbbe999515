//! Euler–Maruyama simulation of G-SDEs under a fixed volatility scenario.
//!
//! The system `dx = f(x,t) dt + g(x,t) dB + h(x,t) d⟨B⟩` is stepped as
//!
//! ```text
//! X(n+1) = X(n) + f Δt + g ΔB(t_n) + h Δ⟨B⟩(t_n)
//! ΔBᵢ ~ N(0, σᵢ,ₙ² Δt),  Δ⟨Bᵢ⟩ = σᵢ,ₙ² Δt
//! ```
//!
//! with independent components and zero cross-variation, so `h` is only
//! contracted on its diagonal noise indices.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::scenarios::{ScenarioFamily, VolatilityScenario};
use crate::SCHEMA_VERSION;

/// Callback writing a vector- or tensor-valued field at `(x, t)` into `out`.
pub type FieldFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;

pub const DEFAULT_EXPLODE_RADIUS: f64 = 1e8;

/// Coefficients `(f, g, h)` of a G-SDE with state dimension `d` and noise
/// dimension `m`.
///
/// Buffer layouts: drift has length `d`; diffusion is row-major `d×m`
/// (`g^{ki}` at `k*m + i`); the quadratic-variation drift is `d×m×m`
/// (`h^{kij}` at `(k*m + i)*m + j`).
#[derive(Clone)]
pub struct GSdeSystem {
    name: String,
    d: usize,
    m: usize,
    drift: Arc<FieldFn>,
    diffusion: Arc<FieldFn>,
    qv_drift: Option<Arc<FieldFn>>,
}

impl std::fmt::Debug for GSdeSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GSdeSystem")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("has_qv_drift", &self.qv_drift.is_some())
            .finish()
    }
}

impl GSdeSystem {
    /// Builds a system. `qv_drift = None` means `h ≡ 0`. The symmetry
    /// `h^{kij} = h^{kji}` is spot-checked on a fixed set of sample points.
    pub fn new(
        name: impl Into<String>,
        d: usize,
        m: usize,
        drift: Arc<FieldFn>,
        diffusion: Arc<FieldFn>,
        qv_drift: Option<Arc<FieldFn>>,
    ) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(config(format!(
                "dimensions must be positive, got d = {d}, m = {m}"
            )));
        }
        let sys = Self {
            name: name.into(),
            d,
            m,
            drift,
            diffusion,
            qv_drift,
        };
        sys.spot_check_symmetry()?;
        Ok(sys)
    }

    fn spot_check_symmetry(&self) -> Result<()> {
        let Some(h) = &self.qv_drift else {
            return Ok(());
        };
        let (d, m) = (self.d, self.m);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut buf = vec![0.0; d * m * m];
        for sample in 0..16 {
            let scale = [0.1, 1.0, 10.0, 100.0][sample % 4];
            let x: Vec<f64> = (0..d)
                .map(|_| {
                    scale * {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z
                    }
                })
                .collect();
            let t = (sample / 4) as f64;
            h(&x, t, &mut buf);
            for k in 0..d {
                for i in 0..m {
                    for j in 0..i {
                        let a = buf[(k * m + i) * m + j];
                        let b = buf[(k * m + j) * m + i];
                        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                            return Err(config(format!(
                                "h is not symmetric in its noise indices: h[{k}][{i}][{j}] = {a}, h[{k}][{j}][{i}] = {b}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn has_qv_drift(&self) -> bool {
        self.qv_drift.is_some()
    }

    pub fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.drift)(x, t, out)
    }

    pub fn diffusion_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.diffusion)(x, t, out)
    }

    /// Writes `h`, or zeros when the system has no quadratic-variation drift.
    pub fn qv_drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match &self.qv_drift {
            Some(h) => h(x, t, out),
            None => out.fill(0.0),
        }
    }

    pub fn drift(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.drift_into(x, t, &mut out);
        out
    }

    pub fn diffusion(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.d * self.m];
        self.diffusion_into(x, t, &mut out);
        out
    }

    pub fn qv_drift(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.d * self.m * self.m];
        self.qv_drift_into(x, t, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    /// `|x| ≥ threshold` or a non-finite state at `step`.
    Exploded {
        step: usize,
        threshold: f64,
        non_finite: bool,
    },
    /// `|x| ≤ radius` at `step`.
    HitTarget {
        step: usize,
        radius: f64,
    },
}

impl StopReason {
    pub fn label(&self) -> &'static str {
        match self {
            StopReason::Completed => "completed",
            StopReason::Exploded { .. } => "exploded",
            StopReason::HitTarget { .. } => "hit_target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimOptions {
    pub explode_radius: f64,
    /// 0 disables target stopping.
    pub target_radius: f64,
    /// Keep every `record_stride`-th state (the first and last are always kept).
    pub record_stride: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            explode_radius: DEFAULT_EXPLODE_RADIUS,
            target_radius: 0.0,
            record_stride: 1,
        }
    }
}

/// A simulated path. Norm extremes and accumulated quadratic variation are
/// tracked over every step, including steps not kept by the recording stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scenario_id: u64,
    pub seed: u64,
    pub d: usize,
    pub dt: f64,
    /// Step index of each recorded state.
    pub steps: Vec<usize>,
    /// Row-major recorded states.
    states: Vec<f64>,
    pub stop_reason: StopReason,
    pub min_norm: f64,
    pub max_norm: f64,
    /// Σₙ Δ⟨Bᵢ⟩(tₙ) per noise component over the steps taken.
    pub quadratic_variation: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.d..(i + 1) * self.d]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks(self.d)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.steps[i] as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn initial(&self) -> &[f64] {
        self.state(0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn terminal_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn initial_norm(&self) -> f64 {
        norm(self.initial())
    }

    pub fn terminal_norm(&self) -> f64 {
        norm(self.terminal())
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs the Euler–Maruyama scheme for one scenario. The Gaussian stream is
/// ChaCha8 keyed by `seed`; step `n` consumes the next `m` normals, so the
/// path is a pure function of the arguments.
pub fn simulate(
    sys: &GSdeSystem,
    scen: &VolatilityScenario,
    x0: &[f64],
    seed: u64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let (d, m) = (sys.d, sys.m);
    if x0.len() != d {
        return Err(domain(format!(
            "x0 has length {}, system dimension is {d}",
            x0.len()
        )));
    }
    if scen.m() != m {
        return Err(domain(format!(
            "scenario has {} noise components, system has {m}",
            scen.m()
        )));
    }
    if opts.record_stride == 0 {
        return Err(config("record_stride must be at least 1"));
    }
    let r0 = norm(x0);
    if !r0.is_finite() {
        return Err(domain("x0 is not finite"));
    }
    if !(opts.explode_radius > r0) {
        return Err(domain(format!(
            "explode radius {} must exceed |x0| = {r0}",
            opts.explode_radius
        )));
    }
    if opts.target_radius < 0.0 || (opts.target_radius > 0.0 && r0 <= opts.target_radius) {
        return Err(domain(format!(
            "target radius {} must be 0 (disabled) or below |x0| = {r0}",
            opts.target_radius
        )));
    }

    let dt = scen.dt;
    let n_steps = scen.n_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut f = vec![0.0; d];
    let mut g = vec![0.0; d * m];
    let mut h = vec![0.0; if sys.qv_drift.is_some() { d * m * m } else { 0 }];
    let mut db = vec![0.0; m];
    let mut dq = vec![0.0; m];
    let mut qv = vec![0.0; m];

    let mut steps = vec![0];
    let mut states = x.clone();
    let mut min_norm = r0;
    let mut max_norm = r0;
    let mut stop_reason = StopReason::Completed;

    for n in 0..n_steps {
        let t = n as f64 * dt;
        let sig = scen.sigma_sq(n);
        sys.drift_into(&x, t, &mut f);
        sys.diffusion_into(&x, t, &mut g);
        for i in 0..m {
            let z: f64 = StandardNormal.sample(&mut rng);
            db[i] = (sig[i] * dt).sqrt() * z;
            dq[i] = sig[i] * dt;
            qv[i] += dq[i];
        }
        for k in 0..d {
            let mut dx = f[k] * dt;
            for i in 0..m {
                dx += g[k * m + i] * db[i];
            }
            next[k] = x[k] + dx;
        }
        if let Some(hf) = &sys.qv_drift {
            hf(&x, t, &mut h);
            for k in 0..d {
                for i in 0..m {
                    next[k] += h[(k * m + i) * m + i] * dq[i];
                }
            }
        }
        std::mem::swap(&mut x, &mut next);

        let step = n + 1;
        let r = norm(&x);
        if !r.is_finite() {
            stop_reason = StopReason::Exploded {
                step,
                threshold: opts.explode_radius,
                non_finite: true,
            };
        } else {
            min_norm = min_norm.min(r);
            max_norm = max_norm.max(r);
            if r >= opts.explode_radius {
                stop_reason = StopReason::Exploded {
                    step,
                    threshold: opts.explode_radius,
                    non_finite: false,
                };
            } else if opts.target_radius > 0.0 && r <= opts.target_radius {
                stop_reason = StopReason::HitTarget {
                    step,
                    radius: opts.target_radius,
                };
            }
        }
        let stopped = stop_reason != StopReason::Completed;
        if stopped || step % opts.record_stride == 0 || step == n_steps {
            steps.push(step);
            states.extend_from_slice(&x);
        }
        if stopped {
            log::debug!(
                "scenario {} seed {seed}: stopped at step {step} ({})",
                scen.id,
                stop_reason.label()
            );
            break;
        }
    }

    Ok(Trajectory {
        scenario_id: scen.id,
        seed,
        d,
        dt,
        steps,
        states,
        stop_reason,
        min_norm,
        max_norm,
        quadratic_variation: qv,
    })
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Per-trial seed derived from `(base_seed, scenario_id, trial)`. Depends only
/// on the key, never on the position of the scenario in a family.
pub fn derive_seed(base_seed: u64, scenario_id: u64, trial: u64) -> u64 {
    let a = mix64(base_seed.wrapping_add(GOLDEN));
    let b = mix64(a ^ scenario_id.wrapping_mul(GOLDEN).wrapping_add(1));
    mix64(b ^ trial.wrapping_mul(0xd1b5_4a32_d192_ed03).wrapping_add(2))
}

/// Where the initial state of each trial comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Fixed {
        x0: Vec<f64>,
    },
    /// Uniform on the sphere of the given radius; trial `j` gets the same
    /// point under every scenario.
    Sphere {
        d: usize,
        radius: f64,
    },
}

impl InitialState {
    pub fn sample(&self, base_seed: u64, trial: u64) -> Vec<f64> {
        match self {
            InitialState::Fixed { x0 } => x0.clone(),
            InitialState::Sphere { d, radius } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, u64::MAX, trial));
                sample_sphere(&mut rng, *d, *radius)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialState::Fixed { x0 } => x0.len(),
            InitialState::Sphere { d, .. } => *d,
        }
    }
}

pub(crate) fn sample_sphere<R: rand::Rng>(rng: &mut R, d: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|c| radius * c / n).collect();
        }
    }
}

/// One (scenario, trial) cell of a batch.
#[derive(Debug, Clone)]
pub struct BatchRun {
    pub scenario_id: u64,
    pub trial: u64,
    pub seed: u64,
    pub outcome: Result<Trajectory, Error>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub system: String,
    pub base_seed: u64,
    pub n_trials: usize,
    pub dt: f64,
    pub n_steps: usize,
    /// Scenario ids in family order.
    pub scenario_ids: Vec<u64>,
    pub runs: Vec<BatchRun>,
}

impl Batch {
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &BatchRun> {
        self.runs.iter().filter(|r| r.outcome.is_err())
    }

    pub fn for_scenario(&self, id: u64) -> impl Iterator<Item = &Trajectory> {
        self.trajectories().filter(move |t| t.scenario_id == id)
    }

    pub fn summary(&self) -> BatchSummary {
        BatchSummary::from_batch(self)
    }
}

/// Simulates `n_trials` trajectories for every scenario of `family`, in
/// parallel. Trial seeds come from [`derive_seed`]; errors are recorded per
/// run and never abort the batch.
pub fn simulate_batch(
    sys: &GSdeSystem,
    family: &ScenarioFamily,
    x0: &InitialState,
    n_trials: usize,
    base_seed: u64,
    opts: &SimOptions,
) -> Result<Batch> {
    if n_trials == 0 {
        return Err(config("n_trials must be at least 1"));
    }
    if x0.dim() != sys.d {
        return Err(domain(format!(
            "initial state has dimension {}, system has {}",
            x0.dim(),
            sys.d
        )));
    }
    let cells: Vec<(&VolatilityScenario, u64)> = family
        .scenarios()
        .iter()
        .flat_map(|s| (0..n_trials as u64).map(move |j| (s, j)))
        .collect();
    let runs = cells
        .into_par_iter()
        .map(|(scen, trial)| {
            let seed = derive_seed(base_seed, scen.id, trial);
            let start = x0.sample(base_seed, trial);
            BatchRun {
                scenario_id: scen.id,
                trial,
                seed,
                outcome: simulate(sys, scen, &start, seed, opts),
            }
        })
        .collect();
    Ok(Batch {
        system: sys.name.clone(),
        base_seed,
        n_trials,
        dt: family.dt(),
        n_steps: family.n_steps(),
        scenario_ids: family.scenarios().iter().map(|s| s.id).collect(),
        runs,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StopCounts {
    pub completed: usize,
    pub exploded: usize,
    pub hit_target: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTerminalStats {
    pub scenario_id: u64,
    pub trajectories: usize,
    pub counts: StopCounts,
    pub mean_terminal_norm: f64,
    pub max_terminal_norm: f64,
    pub min_terminal_norm: f64,
    pub mean_log_terminal_norm: f64,
    pub min_norm_over_paths: f64,
    pub max_norm_over_paths: f64,
}

/// Per-batch summary document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub schema_version: u32,
    pub system: String,
    pub base_seed: u64,
    pub n_scenarios: usize,
    pub n_trials_per_scenario: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub horizon: f64,
    pub counts: StopCounts,
    pub max_terminal_norm: f64,
    pub min_norm_over_paths: f64,
    pub max_norm_over_paths: f64,
    pub scenarios: Vec<ScenarioTerminalStats>,
    pub caveat: String,
}

pub const FAMILY_CAVEAT: &str = "suprema are taken over a finite family of piecewise-constant \
volatility scenarios and are lower bounds on the sublinear quantities over all admissible measures";

fn count_into(c: &mut StopCounts, run: &BatchRun) {
    match &run.outcome {
        Err(_) => c.failed += 1,
        Ok(t) => match t.stop_reason {
            StopReason::Completed => c.completed += 1,
            StopReason::Exploded { .. } => c.exploded += 1,
            StopReason::HitTarget { .. } => c.hit_target += 1,
        },
    }
}

impl BatchSummary {
    pub fn from_batch(batch: &Batch) -> Self {
        let mut counts = StopCounts::default();
        batch.runs.iter().for_each(|r| count_into(&mut counts, r));
        let scenarios: Vec<ScenarioTerminalStats> = batch
            .scenario_ids
            .iter()
            .map(|&id| {
                let mut c = StopCounts::default();
                batch
                    .runs
                    .iter()
                    .filter(|r| r.scenario_id == id)
                    .for_each(|r| count_into(&mut c, r));
                let trajs: Vec<&Trajectory> = batch.for_scenario(id).collect();
                let norms: Vec<f64> = trajs.iter().map(|t| t.terminal_norm()).collect();
                let n = norms.len().max(1) as f64;
                ScenarioTerminalStats {
                    scenario_id: id,
                    trajectories: trajs.len(),
                    counts: c,
                    mean_terminal_norm: norms.iter().sum::<f64>() / n,
                    max_terminal_norm: norms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    min_terminal_norm: norms.iter().copied().fold(f64::INFINITY, f64::min),
                    mean_log_terminal_norm: norms
                        .iter()
                        .map(|r| r.max(f64::MIN_POSITIVE).ln())
                        .sum::<f64>()
                        / n,
                    min_norm_over_paths: trajs
                        .iter()
                        .map(|t| t.min_norm)
                        .fold(f64::INFINITY, f64::min),
                    max_norm_over_paths: trajs
                        .iter()
                        .map(|t| t.max_norm)
                        .fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            system: batch.system.clone(),
            base_seed: batch.base_seed,
            n_scenarios: batch.scenario_ids.len(),
            n_trials_per_scenario: batch.n_trials,
            dt: batch.dt,
            n_steps: batch.n_steps,
            horizon: batch.n_steps as f64 * batch.dt,
            counts,
            max_terminal_norm: scenarios
                .iter()
                .map(|s| s.max_terminal_norm)
                .fold(f64::NEG_INFINITY, f64::max),
            min_norm_over_paths: scenarios
                .iter()
                .map(|s| s.min_norm_over_paths)
                .fold(f64::INFINITY, f64::min),
            max_norm_over_paths: scenarios
                .iter()
                .map(|s| s.max_norm_over_paths)
                .fold(f64::NEG_INFINITY, f64::max),
            scenarios,
            caveat: FAMILY_CAVEAT.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Writes `t, x_1..x_d, sigma_sq_1..sigma_sq_m` rows. The variance on a row is
/// the one driving the step that leaves that state (the final row repeats
/// the last step's).
pub fn write_trajectory_csv<W: Write>(
    out: W,
    traj: &Trajectory,
    scen: &VolatilityScenario,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.d).map(|k| format!("x_{k}")));
    header.extend((1..=scen.m()).map(|i| format!("sigma_sq_{i}")));
    w.write_record(&header)?;
    let last = scen.n_steps() - 1;
    for i in 0..traj.len() {
        let mut row = vec![traj.time(i).to_string()];
        row.extend(traj.state(i).iter().map(|v| v.to_string()));
        row.extend(
            scen.sigma_sq(traj.steps[i].min(last))
                .iter()
                .map(|v| v.to_string()),
        );
        w.write_record(&row)?;
    }
    w.flush()
}
