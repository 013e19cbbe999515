//! Piecewise-constant volatility scenarios.
//!
//! Each scenario fixes σᵢ,ₙ² for every noise component i and time step n,
//! which selects one classical probability measure from the family the
//! sublinear expectation takes its supremum over. Estimates computed over a
//! finite family are lower bounds on the true sublinear quantities.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::gfunc::{UncertaintyKind, UncertaintySet};

/// Largest number of non-degenerate components enumerated exhaustively in
/// [`ScenarioMode::Endpoints`] mode (2^8 = 256 combinations).
pub const MAX_ENDPOINT_COMPONENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    /// One scenario per grid level, held fixed over time and components.
    Constant,
    /// Every entry drawn uniformly from the grid levels.
    PiecewiseRandom,
    /// Constant extreme combinations only.
    Endpoints,
}

/// One admissible volatility path: an N×m table of variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityScenario {
    pub id: u64,
    pub dt: f64,
    m: usize,
    /// Row-major, `values[n * m + i]` is σᵢ,ₙ².
    values: Vec<f64>,
}

impl VolatilityScenario {
    pub fn new(id: u64, dt: f64, m: usize, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(domain(format!(
                "time step must be positive and finite, got {dt}"
            )));
        }
        if m == 0 || values.is_empty() || !values.len().is_multiple_of(m) {
            return Err(domain(format!(
                "scenario needs a nonempty N x {m} table, got {} values",
                values.len()
            )));
        }
        Ok(Self { id, dt, m, values })
    }

    /// The same variances at every one of `n_steps` steps.
    pub fn constant(id: u64, dt: f64, n_steps: usize, sigma_sq: &[f64]) -> Result<Self> {
        let values = sigma_sq
            .iter()
            .copied()
            .cycle()
            .take(n_steps * sigma_sq.len())
            .collect();
        Self::new(id, dt, sigma_sq.len(), values)
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() / self.m
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Variances used on step `n`.
    pub fn sigma_sq(&self, n: usize) -> &[f64] {
        &self.values[n * self.m..(n + 1) * self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }
}

/// A set of scenarios sharing N, m and dt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFamily {
    pub mode: ScenarioMode,
    pub grid_k: usize,
    pub seed: u64,
    scenarios: Vec<VolatilityScenario>,
}

impl ScenarioFamily {
    pub fn from_scenarios(
        mode: ScenarioMode,
        grid_k: usize,
        seed: u64,
        scenarios: Vec<VolatilityScenario>,
    ) -> Result<Self> {
        let Some(first) = scenarios.first() else {
            return Err(config("scenario family is empty"));
        };
        if scenarios
            .iter()
            .any(|s| s.m != first.m || s.n_steps() != first.n_steps() || s.dt != first.dt)
        {
            return Err(config("scenarios in a family must share N, m and dt"));
        }
        Ok(Self {
            mode,
            grid_k,
            seed,
            scenarios,
        })
    }

    pub fn scenarios(&self) -> &[VolatilityScenario] {
        &self.scenarios
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.scenarios[0].n_steps()
    }

    pub fn dt(&self) -> f64 {
        self.scenarios[0].dt
    }

    pub fn m(&self) -> usize {
        self.scenarios[0].m
    }

    pub fn get(&self, id: u64) -> Option<&VolatilityScenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    /// Same family with scenarios in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let scenarios = order.iter().map(|&i| self.scenarios[i].clone()).collect();
        Self {
            scenarios,
            ..self.clone()
        }
    }
}

/// Config block `scenarios: {mode, grid_k, count, seed}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSettings {
    pub mode: ScenarioMode,
    pub grid_k: usize,
    /// Number of scenarios for random modes.
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_count() -> usize {
    16
}

impl ScenarioSettings {
    pub fn generate(&self, u: &UncertaintySet, n_steps: usize, dt: f64) -> Result<ScenarioFamily> {
        generate_family(
            u,
            n_steps,
            dt,
            self.grid_k,
            self.mode,
            self.count,
            self.seed,
        )
    }
}

/// Builds a scenario family from the grid `σ̲ᵢ² = s₀ < … < s_k = σ̄ᵢ²`.
///
/// The grid is uniform in variance and includes both endpoints. A set with
/// a single point always yields exactly one constant scenario.
pub fn generate_family(
    u: &UncertaintySet,
    n_steps: usize,
    dt: f64,
    grid_k: usize,
    mode: ScenarioMode,
    n_scenarios: usize,
    seed: u64,
) -> Result<ScenarioFamily> {
    if n_steps == 0 {
        return Err(config("n_steps must be at least 1"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(config(format!("dt must be positive and finite, got {dt}")));
    }
    if n_scenarios == 0 {
        return Err(config("scenario count must be at least 1"));
    }

    if u.kind() == UncertaintyKind::VertexSet {
        return vertex_family(u, n_steps, dt, grid_k, mode, n_scenarios, seed);
    }

    let bounds = u.component_bounds();
    let m = bounds.len();
    if u.is_degenerate() {
        let level: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let s = VolatilityScenario::constant(0, dt, n_steps, &level)?;
        return ScenarioFamily::from_scenarios(mode, grid_k, seed, vec![s]);
    }
    if grid_k == 0 {
        return Err(config(
            "grid_k must be at least 1 for a non-degenerate uncertainty set",
        ));
    }

    let grid: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| grid_levels(lo, hi, grid_k))
        .collect();

    let scenarios = match mode {
        ScenarioMode::Constant => (0..=grid_k)
            .map(|j| {
                let level: Vec<f64> = grid.iter().map(|g| g[j]).collect();
                VolatilityScenario::constant(j as u64, dt, n_steps, &level)
            })
            .collect::<Result<Vec<_>>>()?,
        ScenarioMode::PiecewiseRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n_scenarios)
                .map(|id| {
                    let values = (0..n_steps * m)
                        .map(|idx| {
                            let g = &grid[idx % m];
                            g[rng.random_range(0..g.len())]
                        })
                        .collect();
                    VolatilityScenario::new(id as u64, dt, m, values)
                })
                .collect::<Result<Vec<_>>>()?
        }
        ScenarioMode::Endpoints => endpoint_levels(&bounds, n_scenarios, seed)
            .into_iter()
            .enumerate()
            .map(|(id, level)| VolatilityScenario::constant(id as u64, dt, n_steps, &level))
            .collect::<Result<Vec<_>>>()?,
    };
    ScenarioFamily::from_scenarios(mode, grid_k, seed, scenarios)
}

fn grid_levels(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if lo == hi {
        return vec![lo; k + 1];
    }
    (0..=k)
        .map(|j| {
            if j == k {
                hi
            } else {
                lo + (hi - lo) * j as f64 / k as f64
            }
        })
        .collect()
}

fn endpoint_levels(bounds: &[(f64, f64)], n_scenarios: usize, seed: u64) -> Vec<Vec<f64>> {
    let free: Vec<usize> = (0..bounds.len())
        .filter(|&i| bounds[i].0 != bounds[i].1)
        .collect();
    let base: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let pick = |mask: &dyn Fn(usize) -> bool| {
        let mut level = base.clone();
        for (bit, &i) in free.iter().enumerate() {
            if mask(bit) {
                level[i] = bounds[i].1;
            }
        }
        level
    };
    if free.len() <= MAX_ENDPOINT_COMPONENTS {
        (0..1usize << free.len())
            .map(|combo| pick(&|bit| combo >> bit & 1 == 1))
            .collect()
    } else {
        log::warn!(
            "{} free noise components exceed the exhaustive endpoint limit; sampling {} random extreme combinations",
            free.len(),
            n_scenarios
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_scenarios)
            .map(|_| {
                let bits: Vec<bool> = free.iter().map(|_| rng.random_bool(0.5)).collect();
                pick(&|bit| bits[bit])
            })
            .collect()
    }
}

fn vertex_family(
    u: &UncertaintySet,
    n_steps: usize,
    dt: f64,
    grid_k: usize,
    mode: ScenarioMode,
    n_scenarios: usize,
    seed: u64,
) -> Result<ScenarioFamily> {
    let diagonals = vertex_diagonals(u)?;
    let m = u.m();
    let scenarios = match mode {
        ScenarioMode::Constant | ScenarioMode::Endpoints => diagonals
            .iter()
            .enumerate()
            .map(|(id, d)| VolatilityScenario::constant(id as u64, dt, n_steps, d))
            .collect::<Result<Vec<_>>>()?,
        ScenarioMode::PiecewiseRandom if diagonals.len() == 1 => {
            vec![VolatilityScenario::constant(0, dt, n_steps, &diagonals[0])?]
        }
        ScenarioMode::PiecewiseRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n_scenarios)
                .map(|id| {
                    let mut values = Vec::with_capacity(n_steps * m);
                    for _ in 0..n_steps {
                        values.extend_from_slice(&diagonals[rng.random_range(0..diagonals.len())]);
                    }
                    VolatilityScenario::new(id as u64, dt, m, values)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    ScenarioFamily::from_scenarios(mode, grid_k, seed, scenarios)
}

/// Distinct vertex diagonals; the simulation scheme has no cross-variation so
/// only diagonal vertices can be simulated.
fn vertex_diagonals(u: &UncertaintySet) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (idx, v) in u.vertices().iter().enumerate() {
        let m = v.nrows();
        if (0..m).any(|i| (0..m).any(|j| i != j && v[(i, j)] != 0.0)) {
            return Err(config(format!(
                "vertex {idx} has off-diagonal entries; scenario simulation assumes zero cross-variation"
            )));
        }
        let d: Vec<f64> = (0..m).map(|i| v[(i, i)]).collect();
        if !out.contains(&d) {
            out.push(d);
        }
    }
    Ok(out)
}

/// True iff every σᵢ,ₙ² is admissible for `u` (closed bounds).
pub fn validate_scenario(s: &VolatilityScenario, u: &UncertaintySet) -> Result<bool> {
    if s.values.is_empty() {
        return Err(domain("scenario has no values"));
    }
    if s.m != u.m() {
        return Err(domain(format!(
            "scenario has {} components, uncertainty set has {}",
            s.m,
            u.m()
        )));
    }
    if u.kind() == UncertaintyKind::VertexSet {
        let diagonals = vertex_diagonals(u)?;
        return Ok(s
            .values
            .chunks(s.m)
            .all(|row| diagonals.iter().any(|d| d.as_slice() == row)));
    }
    let bounds = u.component_bounds();
    Ok(s.values.chunks(s.m).all(|row| {
        row.iter()
            .zip(&bounds)
            .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }))
}
