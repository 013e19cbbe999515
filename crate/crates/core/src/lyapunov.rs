//! The G-generator of a Lyapunov function and sampled checks of the
//! invariance-principle hypotheses.
//!
//! For `V ∈ C^{2,1}` the generator along a G-SDE is
//!
//! ```text
//! LV = V_t + V_{x_i} f^i + G(κ),
//! κ_ij = V_{x_k}(h^{kij} + h^{kji}) + V_{x_k x_l} g^{ki} g^{lj}
//! ```
//!
//! All region checks are falsification harnesses: a PASS means no
//! counterexample was found at the stated sample density.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{norm, sample_sphere, GSdeSystem};
use crate::error::{config, domain, Error, Result};
use crate::gfunc::{c_constant_matrix, g_matrix, UncertaintySet};
use crate::SCHEMA_VERSION;

pub type ScalarFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;
pub type GradientFn = dyn Fn(&[f64], f64) -> DVector<f64> + Send + Sync;
pub type HessianFn = dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync;
pub type EtaFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub type GammaFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Radius of the ball around the origin that region samplers never enter.
pub const EXCLUDED_BALL: f64 = 1e-6;

pub const NO_COUNTEREXAMPLE: &str =
    "PASS means no counterexample was found at the stated sample density";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    Analytic,
    /// Central differences; `None` picks the step from machine epsilon.
    FiniteDifference(Option<f64>),
}

/// A Lyapunov candidate `V(x, t)` with optional analytic derivatives and the
/// comparison functions `η(x)` and `γ(t)`.
#[derive(Clone)]
pub struct LyapunovSpec {
    name: String,
    d: usize,
    value: Arc<ScalarFn>,
    time_partial: Option<Arc<ScalarFn>>,
    gradient: Option<Arc<GradientFn>>,
    hessian: Option<Arc<HessianFn>>,
    eta: Option<Arc<EtaFn>>,
    gamma: Option<Arc<GammaFn>>,
    mode: DerivativeMode,
}

impl std::fmt::Debug for LyapunovSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LyapunovSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("mode", &self.mode)
            .field("has_eta", &self.eta.is_some())
            .field("has_gamma", &self.gamma.is_some())
            .finish()
    }
}

/// `V`, `V_t`, `∇V` and `∇²V` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub time_partial: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl LyapunovSpec {
    /// A candidate known only through its values; derivatives are taken by
    /// finite differences.
    pub fn new(name: impl Into<String>, d: usize, value: Arc<ScalarFn>) -> Self {
        Self {
            name: name.into(),
            d,
            value,
            time_partial: None,
            gradient: None,
            hessian: None,
            eta: None,
            gamma: None,
            mode: DerivativeMode::FiniteDifference(None),
        }
    }

    /// Supplies analytic derivatives and switches to [`DerivativeMode::Analytic`].
    /// `time_partial = None` declares V time-independent.
    pub fn with_analytic(
        mut self,
        time_partial: Option<Arc<ScalarFn>>,
        gradient: Arc<GradientFn>,
        hessian: Arc<HessianFn>,
    ) -> Self {
        self.time_partial = time_partial;
        self.gradient = Some(gradient);
        self.hessian = Some(hessian);
        self.mode = DerivativeMode::Analytic;
        self
    }

    pub fn with_mode(mut self, mode: DerivativeMode) -> Result<Self> {
        if mode == DerivativeMode::Analytic && (self.gradient.is_none() || self.hessian.is_none()) {
            return Err(config(format!(
                "{}: analytic mode needs gradient and hessian callbacks",
                self.name
            )));
        }
        if let DerivativeMode::FiniteDifference(Some(h)) = mode {
            if !(h > 0.0 && h.is_finite()) {
                return Err(config(format!(
                    "finite-difference step must be positive, got {h}"
                )));
            }
        }
        self.mode = mode;
        Ok(self)
    }

    pub fn with_eta(mut self, eta: Arc<EtaFn>) -> Self {
        self.eta = Some(eta);
        self
    }

    pub fn with_gamma(mut self, gamma: Arc<GammaFn>) -> Self {
        self.gamma = Some(gamma);
        self
    }

    /// `V(x,t) = e^{λt}|x|^p` with analytic derivatives.
    pub fn power_norm(d: usize, p: f64, lambda: f64) -> Self {
        let value = move |x: &[f64], t: f64| (lambda * t).exp() * norm(x).powf(p);
        let grad = move |x: &[f64], t: f64| {
            let r = norm(x);
            let c = (lambda * t).exp() * p * r.powf(p - 2.0);
            DVector::from_iterator(x.len(), x.iter().map(|v| c * v))
        };
        let hess = move |x: &[f64], t: f64| {
            let r = norm(x);
            let e = (lambda * t).exp();
            let xv = DVector::from_column_slice(x);
            let mut h = &xv * xv.transpose() * (e * p * (p - 2.0) * r.powf(p - 4.0));
            for i in 0..x.len() {
                h[(i, i)] += e * p * r.powf(p - 2.0);
            }
            h
        };
        let time_partial: Option<Arc<ScalarFn>> = if lambda == 0.0 {
            None
        } else {
            Some(Arc::new(move |x: &[f64], t: f64| {
                lambda * (lambda * t).exp() * norm(x).powf(p)
            }))
        };
        let name = if lambda == 0.0 {
            format!("|x|^{p}")
        } else {
            format!("exp({lambda} t)|x|^{p}")
        };
        Self::new(name, d, Arc::new(value)).with_analytic(
            time_partial,
            Arc::new(grad),
            Arc::new(hess),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mode(&self) -> DerivativeMode {
        self.mode
    }

    pub fn has_eta(&self) -> bool {
        self.eta.is_some()
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        (self.value)(x, t)
    }

    pub fn eta(&self, x: &[f64]) -> Option<f64> {
        self.eta.as_ref().map(|e| e(x))
    }

    /// γ(t), zero when not supplied.
    pub fn gamma(&self, t: f64) -> f64 {
        self.gamma.as_ref().map_or(0.0, |g| g(t))
    }

    pub fn derivatives(&self, x: &[f64], t: f64) -> Derivatives {
        match self.mode {
            DerivativeMode::Analytic => self.analytic(x, t),
            DerivativeMode::FiniteDifference(step) => self.finite_difference(x, t, step),
        }
    }

    fn analytic(&self, x: &[f64], t: f64) -> Derivatives {
        let gradient = self
            .gradient
            .as_ref()
            .expect("analytic mode has a gradient");
        let hessian = self.hessian.as_ref().expect("analytic mode has a hessian");
        Derivatives {
            value: self.value(x, t),
            time_partial: self.time_partial.as_ref().map_or(0.0, |vt| vt(x, t)),
            gradient: gradient(x, t),
            hessian: hessian(x, t),
        }
    }

    /// Central differences. First derivatives use a step of `ε^{1/3}` and the
    /// Hessian `ε^{1/4}`, both scaled by `max(1, |x|)` unless a step is given.
    pub fn finite_difference(&self, x: &[f64], t: f64, step: Option<f64>) -> Derivatives {
        let d = x.len();
        let scale = norm(x).max(1.0);
        let h1 = step.unwrap_or(f64::EPSILON.cbrt() * scale);
        let h2 = step.unwrap_or(f64::EPSILON.sqrt().sqrt() * scale);
        let v = |y: &[f64]| (self.value)(y, t);
        let v0 = v(x);

        let mut y = x.to_vec();
        let mut shifted = |i: usize, di: f64, j: usize, dj: f64| {
            y.copy_from_slice(x);
            y[i] += di;
            y[j] += dj;
            v(&y)
        };

        let gradient = DVector::from_iterator(
            d,
            (0..d).map(|i| (shifted(i, h1, i, 0.0) - shifted(i, -h1, i, 0.0)) / (2.0 * h1)),
        );
        let mut hessian = DMatrix::zeros(d, d);
        for i in 0..d {
            hessian[(i, i)] =
                (shifted(i, h2, i, 0.0) - 2.0 * v0 + shifted(i, -h2, i, 0.0)) / (h2 * h2);
            for j in 0..i {
                let e = (shifted(i, h2, j, h2) - shifted(i, h2, j, -h2) - shifted(i, -h2, j, h2)
                    + shifted(i, -h2, j, -h2))
                    / (4.0 * h2 * h2);
                hessian[(i, j)] = e;
                hessian[(j, i)] = e;
            }
        }

        let ht = step.unwrap_or(f64::EPSILON.cbrt() * t.abs().max(1.0));
        let time_partial = if t >= ht {
            ((self.value)(x, t + ht) - (self.value)(x, t - ht)) / (2.0 * ht)
        } else {
            // one-sided second-order stencil so V is never queried at t < 0
            (-3.0 * v0 + 4.0 * (self.value)(x, t + ht) - (self.value)(x, t + 2.0 * ht)) / (2.0 * ht)
        };
        Derivatives {
            value: v0,
            time_partial,
            gradient,
            hessian,
        }
    }

    /// Largest relative disagreement between analytic and finite-difference
    /// derivatives at `(x, t)`, or `None` without analytic callbacks.
    pub fn derivative_discrepancy(&self, x: &[f64], t: f64) -> Option<f64> {
        self.gradient.as_ref()?;
        self.hessian.as_ref()?;
        let a = self.analytic(x, t);
        let n = self.finite_difference(x, t, None);
        let rel = |p: f64, q: f64, s: f64| (p - q).abs() / s.max(1e-300);
        let gs = a.gradient.amax().max(a.value.abs()).max(1.0);
        let hs = a.hessian.amax().max(gs);
        let mut worst = rel(
            a.time_partial,
            n.time_partial,
            a.time_partial.abs().max(a.value.abs()).max(1.0),
        );
        for (p, q) in a.gradient.iter().zip(n.gradient.iter()) {
            worst = worst.max(rel(*p, *q, gs));
        }
        for (p, q) in a.hessian.iter().zip(n.hessian.iter()) {
            worst = worst.max(rel(*p, *q, hs));
        }
        Some(worst)
    }
}

/// The pieces of `LV` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorEval {
    pub value: f64,
    pub time_partial: f64,
    /// `⟨∇V, f⟩`
    pub drift_term: f64,
    /// Symmetric m×m matrix handed to G.
    pub kappa: DMatrix<f64>,
    pub g_term: f64,
    pub lv: f64,
}

fn check_dims(sys: &GSdeSystem, spec: &LyapunovSpec, u: &UncertaintySet, x: &[f64]) -> Result<()> {
    if spec.d != sys.d() || x.len() != sys.d() {
        return Err(domain(format!(
            "dimension mismatch: system d = {}, V d = {}, x has {}",
            sys.d(),
            spec.d,
            x.len()
        )));
    }
    if u.m() != sys.m() {
        return Err(domain(format!(
            "system has m = {}, uncertainty set has m = {}",
            sys.m(),
            u.m()
        )));
    }
    Ok(())
}

/// The κ matrix from `∇V`, `∇²V`, `g` and `h`, symmetrized.
pub fn kappa(
    d: usize,
    m: usize,
    gradient: &DVector<f64>,
    hessian: &DMatrix<f64>,
    g: &[f64],
    h: &[f64],
) -> DMatrix<f64> {
    let gm = DMatrix::from_row_slice(d, m, g);
    let mut k = gm.transpose() * hessian * &gm;
    for kk in 0..d {
        let vk = gradient[kk];
        if vk == 0.0 {
            continue;
        }
        for i in 0..m {
            for j in 0..m {
                k[(i, j)] += vk * (h[(kk * m + i) * m + j] + h[(kk * m + j) * m + i]);
            }
        }
    }
    (&k + k.transpose()) * 0.5
}

/// Evaluates `LV(x, t)` and its components.
pub fn generator_terms(
    sys: &GSdeSystem,
    spec: &LyapunovSpec,
    u: &UncertaintySet,
    x: &[f64],
    t: f64,
) -> Result<GeneratorEval> {
    check_dims(sys, spec, u, x)?;
    let der = spec.derivatives(x, t);
    let numerical = |what: &str| Error::Numerical {
        what: what.to_string(),
        point: x.to_vec(),
        t,
    };
    if !der.value.is_finite() || !der.time_partial.is_finite() {
        return Err(numerical("V or V_t is not finite"));
    }
    if der.gradient.iter().any(|v| !v.is_finite()) {
        return Err(numerical("gradient of V is not finite"));
    }
    if der.hessian.iter().any(|v| !v.is_finite()) {
        return Err(numerical("hessian of V is not finite"));
    }
    let (d, m) = (sys.d(), sys.m());
    let f = sys.drift(x, t);
    let g = sys.diffusion(x, t);
    let h = sys.qv_drift(x, t);
    if f.iter().chain(&g).chain(&h).any(|v| !v.is_finite()) {
        return Err(numerical("system coefficients are not finite"));
    }
    let drift_term: f64 = der.gradient.iter().zip(&f).map(|(a, b)| a * b).sum();
    let kappa = kappa(d, m, &der.gradient, &der.hessian, &g, &h);
    let g_term = g_matrix(&kappa, u)?;
    Ok(GeneratorEval {
        value: der.value,
        time_partial: der.time_partial,
        drift_term,
        g_term,
        lv: der.time_partial + drift_term + g_term,
        kappa,
    })
}

/// `LV(x, t) = V_t + ⟨∇V, f⟩ + G(κ)`.
pub fn evaluate_generator(
    sys: &GSdeSystem,
    spec: &LyapunovSpec,
    u: &UncertaintySet,
    x: &[f64],
    t: f64,
) -> Result<f64> {
    generator_terms(sys, spec, u, x, t).map(|e| e.lv)
}

/// Points drawn as uniform directions times log-uniform radii in
/// `[r_lo, r_hi]`. Radii below [`EXCLUDED_BALL`] are never sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellRegion {
    pub r_lo: f64,
    pub r_hi: f64,
    pub samples: usize,
    pub seed: u64,
}

impl ShellRegion {
    pub fn new(r_lo: f64, r_hi: f64, samples: usize, seed: u64) -> Self {
        Self {
            r_lo,
            r_hi,
            samples,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.r_lo >= 0.0 && self.r_hi >= self.r_lo && self.r_hi.is_finite()) {
            return Err(domain(format!(
                "invalid shell radii [{}, {}]",
                self.r_lo, self.r_hi
            )));
        }
        if self.r_hi <= EXCLUDED_BALL {
            return Err(domain(format!(
                "shell lies inside the excluded ball of radius {EXCLUDED_BALL}"
            )));
        }
        if self.samples == 0 {
            return Err(domain("region needs at least one sample"));
        }
        Ok(())
    }

    pub fn effective_r_lo(&self) -> f64 {
        self.r_lo.max(EXCLUDED_BALL)
    }

    pub fn sample_points(&self, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (lo, hi) = (self.effective_r_lo().ln(), self.r_hi.ln());
        (0..self.samples)
            .map(|_| {
                let r = if hi > lo {
                    rng.random_range(lo..=hi).exp()
                } else {
                    self.r_hi
                };
                sample_sphere(&mut rng, d, r)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorSample {
    pub x: Vec<f64>,
    pub t: f64,
    pub lv: f64,
    /// `γ(t) − η(x)`
    pub bound: f64,
    pub margin: f64,
    pub negative_eta: bool,
    /// Row-major κ.
    pub kappa: Vec<f64>,
}

/// Outcome of a sampled check of `LV(x,t) ≤ γ(t) − η(x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub schema_version: u32,
    pub check: String,
    pub system: String,
    pub lyapunov: String,
    pub region: ShellRegion,
    pub excluded_ball_radius: f64,
    pub t_samples: Vec<f64>,
    pub sample_count: usize,
    pub nonfinite_count: usize,
    pub negative_eta_count: usize,
    pub tolerance: f64,
    /// `max (LV − γ(t) + η(x))` over the samples.
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub worst_t: f64,
    pub pass: bool,
    pub note: String,
    #[serde(skip)]
    pub samples: Vec<GeneratorSample>,
}

/// Samples the shell and reports the worst margin of `LV ≤ γ − η`.
pub fn check_generator_bound(
    sys: &GSdeSystem,
    spec: &LyapunovSpec,
    u: &UncertaintySet,
    region: &ShellRegion,
    t_samples: &[f64],
    tolerance: f64,
) -> Result<GeneratorReport> {
    let Some(eta) = spec.eta.clone() else {
        return Err(config(format!(
            "{}: generator bound check needs an eta function",
            spec.name
        )));
    };
    region.validate()?;
    if t_samples.is_empty() {
        return Err(domain("need at least one time sample"));
    }
    check_dims(sys, spec, u, &vec![0.0; sys.d()])?;

    let points = region.sample_points(sys.d());
    let samples: Vec<Option<GeneratorSample>> = points
        .par_iter()
        .flat_map_iter(|x| t_samples.iter().map(move |&t| (x, t)))
        .map(|(x, t)| {
            let e = generator_terms(sys, spec, u, x, t).ok()?;
            let eta_x = eta(x);
            let bound = spec.gamma(t) - eta_x;
            let margin = e.lv - bound;
            margin.is_finite().then(|| GeneratorSample {
                x: x.clone(),
                t,
                lv: e.lv,
                bound,
                margin,
                negative_eta: eta_x < 0.0,
                kappa: e.kappa.transpose().iter().copied().collect(),
            })
        })
        .collect();

    let nonfinite_count = samples.iter().filter(|s| s.is_none()).count();
    let samples: Vec<GeneratorSample> = samples.into_iter().flatten().collect();
    let worst = samples
        .iter()
        .fold(None::<&GeneratorSample>, |acc, s| match acc {
            Some(a) if a.margin >= s.margin => Some(a),
            _ => Some(s),
        });
    let (worst_margin, worst_point, worst_t) = worst
        .map_or((f64::INFINITY, Vec::new(), f64::NAN), |w| {
            (w.margin, w.x.clone(), w.t)
        });
    // η must be nonnegative; a negative η makes the bound vacuous.
    let negative_eta_count = samples.iter().filter(|s| s.negative_eta).count();
    let pass = nonfinite_count == 0 && negative_eta_count == 0 && worst_margin <= tolerance;
    let note = if region.r_lo < EXCLUDED_BALL {
        format!("{NO_COUNTEREXAMPLE}; the ball |x| < {EXCLUDED_BALL} was excluded from sampling")
    } else {
        NO_COUNTEREXAMPLE.to_string()
    };
    Ok(GeneratorReport {
        schema_version: SCHEMA_VERSION,
        check: "generator_bound".into(),
        system: sys.name().to_string(),
        lyapunov: spec.name.clone(),
        region: *region,
        excluded_ball_radius: EXCLUDED_BALL,
        t_samples: t_samples.to_vec(),
        sample_count: samples.len() + nonfinite_count,
        nonfinite_count,
        negative_eta_count,
        tolerance,
        worst_margin,
        worst_point,
        worst_t,
        pass,
        note,
        samples,
    })
}

/// Heuristic check of `lim_{|x|→∞} inf_t V(x,t) = ∞` on a few spheres.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialReport {
    pub schema_version: u32,
    pub check: String,
    pub radii: Vec<f64>,
    pub t_samples: Vec<f64>,
    pub directions: usize,
    /// Minimum of V over directions and times on each sphere.
    pub min_values: Vec<f64>,
    pub max_values: Vec<f64>,
    pub pass: bool,
    pub heuristic: bool,
    pub note: String,
}

const RADIAL_RANDOM_DIRECTIONS: usize = 64;

/// PASS iff the sphere minima strictly increase and the outermost minimum
/// exceeds every value seen on the innermost sphere.
pub fn check_radial_unboundedness(
    spec: &LyapunovSpec,
    radii: &[f64],
    t_samples: &[f64],
) -> Result<RadialReport> {
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] > w[0])) || radii[0] <= 0.0 {
        return Err(domain(
            "radii must be positive, strictly increasing and at least two",
        ));
    }
    if t_samples.is_empty() {
        return Err(domain("need at least one time sample"));
    }
    let d = spec.d;
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[i] = s;
            directions.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1ec);
    directions.extend((0..RADIAL_RANDOM_DIRECTIONS).map(|_| sample_sphere(&mut rng, d, 1.0)));

    let (mut min_values, mut max_values) = (Vec::new(), Vec::new());
    for &r in radii {
        let vals = directions.iter().flat_map(|e| {
            let x: Vec<f64> = e.iter().map(|c| c * r).collect();
            t_samples
                .iter()
                .map(move |&t| spec.value(&x, t))
                .collect::<Vec<_>>()
        });
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            if v.is_nan() {
                (f64::NAN, f64::NAN)
            } else {
                (lo.min(v), hi.max(v))
            }
        });
        min_values.push(lo);
        max_values.push(hi);
    }
    let increasing = min_values.windows(2).all(|w| w[1] > w[0]);
    let growth = *min_values.last().unwrap() > max_values[0];
    Ok(RadialReport {
        schema_version: SCHEMA_VERSION,
        check: "radial_unboundedness".into(),
        radii: radii.to_vec(),
        t_samples: t_samples.to_vec(),
        directions: directions.len(),
        min_values,
        max_values,
        pass: increasing && growth,
        heuristic: true,
        note: "heuristic: growth of V is only observed on finitely many spheres".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentialReport {
    pub schema_version: u32,
    pub check: String,
    pub lambda: f64,
    pub p: f64,
    pub region: ShellRegion,
    pub t_samples: Vec<f64>,
    pub tolerance: f64,
    /// `max (e^{λt}|x|^p − V) / max(1, V)`; must be ≤ tolerance.
    pub lower_bound_worst_margin: f64,
    pub lower_bound_pass: bool,
    /// `max (LV − γ(t))`; must be ≤ tolerance.
    pub generator_worst_margin: f64,
    pub generator_worst_point: Vec<f64>,
    pub generator_worst_t: f64,
    pub generator_pass: bool,
    pub nonfinite_count: usize,
    pub pass: bool,
    /// `−λ/p` when both hypotheses hold.
    pub certified_rate: Option<f64>,
    pub note: String,
}

/// Checks `e^{λt}|x|^p ≤ V(x,t)` and `LV ≤ γ(t)` on the region; on success
/// the almost-sure exponent `limsup (1/t) log|x(t)|` is at most `−λ/p`.
#[allow(clippy::too_many_arguments)]
pub fn exponential_certificate(
    sys: &GSdeSystem,
    spec: &LyapunovSpec,
    u: &UncertaintySet,
    lambda: f64,
    p: f64,
    region: &ShellRegion,
    t_samples: &[f64],
    tolerance: f64,
) -> Result<ExponentialReport> {
    if !(lambda > 0.0 && p > 0.0) {
        return Err(domain(format!(
            "lambda and p must be positive, got {lambda}, {p}"
        )));
    }
    region.validate()?;
    if t_samples.is_empty() {
        return Err(domain("need at least one time sample"));
    }
    check_dims(sys, spec, u, &vec![0.0; sys.d()])?;

    let points = region.sample_points(sys.d());
    let evals: Vec<Option<(f64, f64, usize, f64)>> = points
        .par_iter()
        .enumerate()
        .flat_map_iter(|(idx, x)| t_samples.iter().map(move |&t| (idx, x, t)))
        .map(|(idx, x, t)| {
            let e = generator_terms(sys, spec, u, x, t).ok()?;
            let lower = (lambda * t).exp() * norm(x).powf(p);
            let lb = (lower - e.value) / e.value.abs().max(1.0);
            let gm = e.lv - spec.gamma(t);
            (lb.is_finite() && gm.is_finite()).then_some((lb, gm, idx, t))
        })
        .collect();
    let nonfinite_count = evals.iter().filter(|e| e.is_none()).count();
    let mut lb_worst = f64::NEG_INFINITY;
    let mut gm_worst = (f64::NEG_INFINITY, usize::MAX, f64::NAN);
    for (lb, gm, idx, t) in evals.into_iter().flatten() {
        lb_worst = lb_worst.max(lb);
        if gm > gm_worst.0 {
            gm_worst = (gm, idx, t);
        }
    }
    let lower_bound_pass = lb_worst <= tolerance;
    let generator_pass = gm_worst.0 <= tolerance;
    let pass = nonfinite_count == 0 && lower_bound_pass && generator_pass;
    Ok(ExponentialReport {
        schema_version: SCHEMA_VERSION,
        check: "exponential_certificate".into(),
        lambda,
        p,
        region: *region,
        t_samples: t_samples.to_vec(),
        tolerance,
        lower_bound_worst_margin: lb_worst,
        lower_bound_pass,
        generator_worst_margin: gm_worst.0,
        generator_worst_point: points.get(gm_worst.1).cloned().unwrap_or_default(),
        generator_worst_t: gm_worst.2,
        generator_pass,
        nonfinite_count,
        pass,
        certified_rate: pass.then_some(-lambda / p),
        note: NO_COUNTEREXAMPLE.to_string(),
    })
}

/// Smallest gain `k = (−L / c₋₁)^{1/2}` above which the feedback noise
/// `k Σⱼ x dBⱼ` stabilizes a drift with one-sided Lipschitz constant `L`,
/// where `c₋₁ = G(−1_{m×m})`.
pub fn gain_rule_one_sided(l: f64, u: &UncertaintySet) -> Result<f64> {
    if !(l >= 0.0 && l.is_finite()) {
        return Err(domain(format!(
            "one-sided Lipschitz constant must be nonnegative, got {l}"
        )));
    }
    let c = c_constant_matrix(-1.0, u);
    if c >= 0.0 {
        return Err(domain(format!(
            "G(-1) = {c} is not negative; the lower volatility bound is degenerate"
        )));
    }
    Ok((-l / c).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    /// `max ⟨x, f(x)⟩ / |x|²` over the samples, a lower bound on L.
    pub value: f64,
    pub argmax: Vec<f64>,
    pub samples: usize,
    pub note: String,
}

/// Sampled lower bound on the one-sided Lipschitz constant of `f`.
pub fn estimate_one_sided_lipschitz<F>(
    d: usize,
    f: F,
    region: &ShellRegion,
) -> Result<LipschitzEstimate>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    region.validate()?;
    let points = region.sample_points(d);
    let ratios: Vec<f64> = points
        .par_iter()
        .map(|x| {
            let mut fx = vec![0.0; d];
            f(x, &mut fx);
            let r2: f64 = x.iter().map(|v| v * v).sum();
            x.iter().zip(&fx).map(|(a, b)| a * b).sum::<f64>() / r2
        })
        .collect();
    let (idx, value) = ratios
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, &v)| {
            if v > acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    Ok(LipschitzEstimate {
        value,
        argmax: points.get(idx).cloned().unwrap_or_default(),
        samples: points.len(),
        note: "sampled maximum; a lower bound on the true one-sided Lipschitz constant".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn null_system(d: usize) -> GSdeSystem {
        GSdeSystem::new(
            "null",
            d,
            1,
            Arc::new(|_, _, o: &mut [f64]| o.fill(0.0)),
            Arc::new(|_, _, o: &mut [f64]| o.fill(0.0)),
            None,
        )
        .unwrap()
    }

    #[test]
    fn null_system_time_independent_v() {
        let u = UncertaintySet::scalar(1.0, 2.0).unwrap();
        let v = LyapunovSpec::power_norm(3, 2.0, 0.0);
        assert_eq!(
            evaluate_generator(&null_system(3), &v, &u, &[1.0, -2.0, 0.5], 3.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn null_system_exponential_v_fails_certificate() {
        let u = UncertaintySet::scalar(1.0, 2.0).unwrap();
        let v = LyapunovSpec::power_norm(2, 2.0, 0.5);
        let x = [1.0, 1.0];
        let lv = evaluate_generator(&null_system(2), &v, &u, &x, 0.0).unwrap();
        assert!((lv - 0.5 * 2.0).abs() < 1e-12);
        let region = ShellRegion::new(0.1, 10.0, 200, 1);
        let rep = exponential_certificate(
            &null_system(2),
            &v,
            &u,
            0.5,
            2.0,
            &region,
            &[0.0, 1.0],
            1e-9,
        )
        .unwrap();
        assert!(rep.lower_bound_pass);
        assert!(!rep.generator_pass);
        assert!(!rep.pass);
        assert_eq!(rep.certified_rate, None);
    }

    #[test]
    fn finite_difference_matches_power_norm() {
        let v = LyapunovSpec::power_norm(3, 2.0, 1.5);
        for (x, t) in [
            ([1.0, 2.0, -0.5], 0.0),
            ([0.3, -0.1, 2.0], 0.7),
            ([10.0, 3.0, 1.0], 2.0),
        ] {
            assert!(
                v.derivative_discrepancy(&x, t).unwrap() < 1e-5,
                "at {x:?}, {t}"
            );
        }
    }

    #[test]
    fn analytic_mode_requires_derivatives() {
        let v = LyapunovSpec::new("v", 2, Arc::new(|x: &[f64], _| x[0] * x[0]));
        assert!(v.clone().with_mode(DerivativeMode::Analytic).is_err());
        assert!(v
            .clone()
            .with_mode(DerivativeMode::FiniteDifference(Some(-1.0)))
            .is_err());
        assert!(v
            .with_mode(DerivativeMode::FiniteDifference(Some(1e-4)))
            .is_ok());
    }

    #[test]
    fn generator_bound_requires_eta() {
        let u = UncertaintySet::scalar(1.0, 2.0).unwrap();
        let v = LyapunovSpec::power_norm(2, 2.0, 0.0);
        let region = ShellRegion::new(0.1, 1.0, 10, 0);
        let res = check_generator_bound(&null_system(2), &v, &u, &region, &[0.0], 1e-9);
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_derivative_is_numerical_error() {
        let u = UncertaintySet::scalar(1.0, 2.0).unwrap();
        let v = LyapunovSpec::power_norm(2, 0.5, 0.0);
        let res = evaluate_generator(&null_system(2), &v, &u, &[0.0, 0.0], 0.0);
        assert!(matches!(res, Err(Error::Numerical { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let u = UncertaintySet::scalar(1.0, 2.0).unwrap();
        let v = LyapunovSpec::power_norm(2, 2.0, 0.0);
        assert!(matches!(
            evaluate_generator(&null_system(3), &v, &u, &[1.0, 0.0, 0.0], 0.0),
            Err(Error::Domain(_))
        ));
        let u2 = UncertaintySet::iid(2, 1.0, 2.0).unwrap();
        assert!(matches!(
            evaluate_generator(&null_system(2), &v, &u2, &[1.0, 0.0], 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn radial_examples() {
        let quad = LyapunovSpec::power_norm(3, 2.0, 0.0);
        assert!(
            check_radial_unboundedness(&quad, &[1.0, 10.0, 100.0], &[0.0])
                .unwrap()
                .pass
        );

        let expo = LyapunovSpec::power_norm(3, 1.5, 0.7);
        let rep = check_radial_unboundedness(&expo, &[1.0, 10.0, 100.0], &[0.0, 1.0, 5.0]).unwrap();
        assert!(rep.pass);
        assert!((rep.min_values[1] - 10f64.powf(1.5)).abs() < 1e-9);

        let bounded = LyapunovSpec::new("sin^2", 3, Arc::new(|x: &[f64], _| norm(x).sin().powi(2)));
        assert!(
            !check_radial_unboundedness(&bounded, &[1.0, 10.0, 100.0], &[0.0])
                .unwrap()
                .pass
        );

        assert!(check_radial_unboundedness(&quad, &[10.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn gain_rule() {
        let u = UncertaintySet::scalar(40.0, 50.0).unwrap();
        let k = gain_rule_one_sided(10.0, &u).unwrap();
        assert!((k - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(gain_rule_one_sided(1e-12, &u).unwrap() < 1e-6);
        let degenerate = UncertaintySet::scalar(0.0, 50.0).unwrap();
        assert!(matches!(
            gain_rule_one_sided(10.0, &degenerate),
            Err(Error::Domain(_))
        ));
        assert!(gain_rule_one_sided(-1.0, &u).is_err());
    }

    #[test]
    fn lipschitz_of_minus_identity() {
        let est = estimate_one_sided_lipschitz(
            3,
            |x: &[f64], o: &mut [f64]| o.iter_mut().zip(x).for_each(|(a, b)| *a = -b),
            &ShellRegion::new(0.1, 10.0, 100, 3),
        )
        .unwrap();
        assert!((est.value + 1.0).abs() < 1e-15);
    }

    #[test]
    fn shell_sampler_respects_radii() {
        let region = ShellRegion::new(0.0, 2.0, 500, 8);
        for x in region.sample_points(4) {
            let r = norm(&x);
            assert!((EXCLUDED_BALL * (1.0 - 1e-12)..=2.0 * (1.0 + 1e-12)).contains(&r));
        }
        assert_eq!(region.sample_points(4), region.sample_points(4));
    }
}
