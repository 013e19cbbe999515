//! The three controlled systems used throughout the test suite and CLI:
//! a G-stochastically stabilized linear network, the Lorenz system under
//! multiplicative feedback noise, and a damped oscillator with two noise
//! channels. Each bundle carries its default simulation protocol and the
//! claims it is expected to certify.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::engine::{GSdeSystem, InitialState, SimOptions, DEFAULT_EXPLODE_RADIUS};
use crate::error::{config, Result};
use crate::gfunc::{c_constant_matrix, UncertaintySet};
use crate::lyapunov::{gain_rule_one_sided, LyapunovSpec, ShellRegion};
use crate::scenarios::{ScenarioFamily, ScenarioMode, ScenarioSettings};

type Mat3 = [[f64; 3]; 3];

fn mat(m: &Mat3) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j])
}

/// Case-specific constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum CaseParams {
    /// `dx = Ax dt + Dx dB + Cx d⟨B⟩`, V = |x|², η = eta_coef·|x|².
    Example1 {
        a: Mat3,
        c: Mat3,
        d: Mat3,
        eta_coef: f64,
    },
    /// Lorenz drift with feedback `k x dB`, V = |x|^α.
    Example2 {
        sigma: f64,
        rho: f64,
        beta: f64,
        k: f64,
        /// Defaults to half of the admissible upper bound `1 + L/(k² c₋₁)`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
    },
    /// `dx = C f(x) dt + [A₁x, A₂x] dB`, V = |x|^α, η = eta_coef·|x|^α.
    Example3 {
        c: Mat3,
        a1: Mat3,
        a2: Mat3,
        alpha: f64,
        eta_coef: f64,
    },
}

/// Simulation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub horizon: f64,
    pub dt: f64,
    pub trials: usize,
    pub seed: u64,
    pub scenarios: ScenarioSettings,
    pub x0: InitialState,
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default = "default_explode")]
    pub explode_radius: f64,
    #[serde(default)]
    pub target_radius: f64,
}

fn one() -> usize {
    1
}

fn default_explode() -> f64 {
    DEFAULT_EXPLODE_RADIUS
}

impl Protocol {
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.dt.is_finite() && self.horizon.is_finite())
        {
            return Err(config(format!(
                "horizon and dt must be positive, got T = {}, dt = {}",
                self.horizon, self.dt
            )));
        }
        let n = (self.horizon / self.dt).round();
        if (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(config(format!(
                "horizon {} is not a multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            explode_radius: self.explode_radius,
            target_radius: self.target_radius,
            record_stride: self.record_stride,
        }
    }

    pub fn family(&self, u: &UncertaintySet) -> Result<ScenarioFamily> {
        self.scenarios.generate(u, self.n_steps()?, self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentialPlan {
    pub lambda: f64,
    pub p: f64,
}

/// Region checks run by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyPlan {
    pub region: ShellRegion,
    pub t_samples: Vec<f64>,
    pub tolerance: f64,
    pub radial_radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponential: Option<ExponentialPlan>,
}

/// The config manifest a bundle is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseManifest {
    pub case: CaseParams,
    pub uncertainty: UncertaintySet,
    pub protocol: Protocol,
    pub verify: VerifyPlan,
}

impl CaseManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub statement: String,
    pub value: f64,
    pub source: String,
}

/// A ready-to-run system, Lyapunov candidate and protocol.
#[derive(Debug, Clone)]
pub struct CaseBundle {
    pub manifest: CaseManifest,
    pub system: GSdeSystem,
    pub lyapunov: LyapunovSpec,
    pub claims: Vec<Claim>,
    pub warnings: Vec<String>,
}

impl CaseBundle {
    pub fn name(&self) -> &'static str {
        match self.manifest.case {
            CaseParams::Example1 { .. } => "example1",
            CaseParams::Example2 { .. } => "example2",
            CaseParams::Example3 { .. } => "example3",
        }
    }

    pub fn uncertainty(&self) -> &UncertaintySet {
        &self.manifest.uncertainty
    }

    pub fn protocol(&self) -> &Protocol {
        &self.manifest.protocol
    }

    /// `V = e^{λt}|x|^p` for the exponential certificate, if configured.
    pub fn exponential_spec(&self) -> Option<(ExponentialPlan, LyapunovSpec)> {
        let plan = self.manifest.verify.exponential?;
        Some((
            plan,
            LyapunovSpec::power_norm(self.system.d(), plan.p, plan.lambda),
        ))
    }

    pub fn from_manifest(manifest: CaseManifest) -> Result<Self> {
        if manifest.protocol.x0.dim() != 3 {
            return Err(config(
                "all bundled cases are three-dimensional; x0 must have d = 3",
            ));
        }
        manifest.protocol.n_steps()?;
        match manifest.case.clone() {
            CaseParams::Example1 { a, c, d, eta_coef } => {
                build_example1(manifest, a, c, d, eta_coef)
            }
            CaseParams::Example2 {
                sigma,
                rho,
                beta,
                k,
                alpha,
            } => build_example2(manifest, sigma, rho, beta, k, alpha),
            CaseParams::Example3 {
                c,
                a1,
                a2,
                alpha,
                eta_coef,
            } => build_example3(manifest, c, a1, a2, alpha, eta_coef),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(example1_linear()),
            "example2" => Ok(example2_lorenz(5.0)),
            "example3" => Ok(example3_oscillator()),
            other => Err(config(format!(
                "unknown case `{other}` (expected example1, example2 or example3)"
            ))),
        }
    }
}

fn check_m(manifest: &CaseManifest, m: usize) -> Result<()> {
    if manifest.uncertainty.m() != m {
        return Err(config(format!(
            "this case has {m} noise component(s); the uncertainty set has {}",
            manifest.uncertainty.m()
        )));
    }
    Ok(())
}

fn linear_field(m: Matrix3<f64>) -> impl Fn(&[f64], f64, &mut [f64]) + Send + Sync {
    move |x: &[f64], _, out: &mut [f64]| {
        let y = m * Vector3::new(x[0], x[1], x[2]);
        out.copy_from_slice(y.as_slice());
    }
}

fn build_example1(
    manifest: CaseManifest,
    a: Mat3,
    c: Mat3,
    d: Mat3,
    eta_coef: f64,
) -> Result<CaseBundle> {
    check_m(&manifest, 1)?;
    let system = GSdeSystem::new(
        "example1-linear",
        3,
        1,
        Arc::new(linear_field(mat(&a))),
        Arc::new(linear_field(mat(&d))),
        Some(Arc::new(linear_field(mat(&c)))),
    )?;
    let lyapunov = LyapunovSpec::power_norm(3, 2.0, 0.0).with_eta(Arc::new(move |x: &[f64]| {
        eta_coef * x.iter().map(|v| v * v).sum::<f64>()
    }));
    let mut claims = vec![Claim {
        statement: "LV(x) <= -eta_coef |x|^2".into(),
        value: -eta_coef,
        source: "bound on the quadratic form 2x'Ax + G(2|Dx|^2 + 4x'Cx)".into(),
    }];
    if let Some(plan) = manifest.verify.exponential {
        claims.push(Claim {
            statement: "limsup (1/t) log|x(t)| <= -lambda/p quasi-surely".into(),
            value: -plan.lambda / plan.p,
            source: "exponential certificate with V = exp(lambda t)|x|^p".into(),
        });
    }
    Ok(CaseBundle {
        manifest,
        system,
        lyapunov,
        claims,
        warnings: Vec::new(),
    })
}

/// Lorenz drift `[σ(x₂−x₁), ρx₁ − x₁x₃ − x₂, x₁x₂ − βx₃]`.
pub fn lorenz_drift(
    sigma: f64,
    rho: f64,
    beta: f64,
) -> impl Fn(&[f64], &mut [f64]) + Send + Sync + Copy {
    move |x: &[f64], out: &mut [f64]| {
        out[0] = sigma * (x[1] - x[0]);
        out[1] = rho * x[0] - x[0] * x[2] - x[1];
        out[2] = x[0] * x[1] - beta * x[2];
    }
}

/// Upper bound `(σ+ρ)/2` on the one-sided Lipschitz constant of the Lorenz drift.
pub fn lorenz_one_sided_bound(sigma: f64, rho: f64) -> f64 {
    0.5 * (sigma + rho)
}

fn build_example2(
    manifest: CaseManifest,
    sigma: f64,
    rho: f64,
    beta: f64,
    k: f64,
    alpha: Option<f64>,
) -> Result<CaseBundle> {
    check_m(&manifest, 1)?;
    let u = &manifest.uncertainty;
    let l = lorenz_one_sided_bound(sigma, rho);
    let c_minus = c_constant_matrix(-1.0, u);
    let mut warnings = Vec::new();
    let threshold = gain_rule_one_sided(l, u).ok();
    match threshold {
        Some(th) if k > th => {}
        Some(th) => warnings.push(format!(
            "gain k = {k} does not exceed the stabilizing threshold {th}"
        )),
        None => warnings.push("lower volatility bound is zero; no gain threshold exists".into()),
    }
    let alpha_bound = 1.0 + l / (k * k * c_minus);
    let alpha = alpha.unwrap_or(if alpha_bound > 0.0 && alpha_bound.is_finite() {
        0.5 * alpha_bound
    } else {
        0.5
    });
    if !(alpha > 0.0 && alpha < alpha_bound) {
        warnings.push(format!(
            "alpha = {alpha} is outside (0, {alpha_bound}); the decay certificate does not apply"
        ));
    }
    for w in &warnings {
        log::warn!("example2: {w}");
    }

    let drift = lorenz_drift(sigma, rho, beta);
    let system = GSdeSystem::new(
        format!("example2-lorenz-k{k}"),
        3,
        1,
        Arc::new(move |x: &[f64], _, out: &mut [f64]| drift(x, out)),
        Arc::new(move |x: &[f64], _, out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = k * v;
            }
        }),
        None,
    )?;
    // LV ≤ α|x|^α (L + k² c₋₁ (1 − α)); η is the negative of that rate.
    let rate = -(l + k * k * c_minus * (1.0 - alpha));
    let lyapunov =
        LyapunovSpec::power_norm(3, alpha, 0.0).with_eta(Arc::new(move |x: &[f64]| {
            alpha * crate::engine::norm(x).powf(alpha) * rate
        }));
    let mut claims = vec![Claim {
        statement: "one-sided Lipschitz constant L <= (sigma + rho)/2".into(),
        value: l,
        source: "completing the square in <x, f(x)>".into(),
    }];
    if let Some(th) = threshold {
        claims.push(Claim {
            statement: "stabilizing gain threshold (-L / G(-1))^(1/2)".into(),
            value: th,
            source: "one-sided Lipschitz gain rule".into(),
        });
    }
    Ok(CaseBundle {
        manifest,
        system,
        lyapunov,
        claims,
        warnings,
    })
}

fn build_example3(
    manifest: CaseManifest,
    c: Mat3,
    a1: Mat3,
    a2: Mat3,
    alpha: f64,
    eta_coef: f64,
) -> Result<CaseBundle> {
    check_m(&manifest, 2)?;
    let cm = mat(&c);
    let (a1m, a2m) = (mat(&a1), mat(&a2));
    let system = GSdeSystem::new(
        "example3-oscillator",
        3,
        2,
        Arc::new(move |x: &[f64], _, out: &mut [f64]| {
            let y = cm * Vector3::new(-x[0], x[1].atan(), x[2].tanh());
            out.copy_from_slice(y.as_slice());
        }),
        Arc::new(move |x: &[f64], _, out: &mut [f64]| {
            let xv = Vector3::new(x[0], x[1], x[2]);
            let (c1, c2) = (a1m * xv, a2m * xv);
            for k in 0..3 {
                out[2 * k] = c1[k];
                out[2 * k + 1] = c2[k];
            }
        }),
        None,
    )?;
    let lyapunov =
        LyapunovSpec::power_norm(3, alpha, 0.0).with_eta(Arc::new(move |x: &[f64]| {
            eta_coef * crate::engine::norm(x).powf(alpha)
        }));
    let claims = vec![Claim {
        statement: "LV(x) <= -eta_coef |x|^alpha on R^3 without the origin".into(),
        value: -eta_coef,
        source: "quadratic-form bounds on A_j and the component-wise G-function".into(),
    }];
    Ok(CaseBundle {
        manifest,
        system,
        lyapunov,
        claims,
        warnings: Vec::new(),
    })
}

pub const EXAMPLE1_A: Mat3 = [[11.0, 5.0, 2.0], [5.0, 11.0, 2.0], [2.0, 2.0, 14.0]];
pub const EXAMPLE1_C: Mat3 = [[-19.0, 11.0, 2.0], [11.0, -19.0, 2.0], [2.0, 2.0, -10.0]];
pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
pub const EXAMPLE3_C: Mat3 = [[1.0, 1.0, 4.0], [5.0, -1.0, 4.0], [8.0, 1.0, 0.0]];
pub const EXAMPLE3_A1: Mat3 = [[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
pub const EXAMPLE3_A2: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]];

/// Linear network with `λ_max(A) = 18`, stabilized with D = I and C.
pub fn example1_linear() -> CaseBundle {
    let manifest = CaseManifest {
        case: CaseParams::Example1 {
            a: EXAMPLE1_A,
            c: EXAMPLE1_C,
            d: IDENTITY3,
            eta_coef: 2.5,
        },
        uncertainty: UncertaintySet::scalar(3.5, 4.0).expect("valid interval"),
        protocol: Protocol {
            horizon: 10.0,
            dt: 1e-3,
            trials: 400,
            seed: 2024,
            scenarios: ScenarioSettings {
                mode: ScenarioMode::Constant,
                grid_k: 5,
                count: 6,
                seed: 0,
            },
            x0: InitialState::Sphere { d: 3, radius: 1.0 },
            record_stride: 10,
            explode_radius: DEFAULT_EXPLODE_RADIUS,
            target_radius: 0.0,
        },
        verify: VerifyPlan {
            region: ShellRegion::new(0.1, 10.0, 10_000, 1),
            t_samples: vec![0.0],
            tolerance: 1e-9,
            radial_radii: vec![1.0, 10.0, 100.0],
            exponential: Some(ExponentialPlan {
                lambda: 1.5,
                p: 2.0,
            }),
        },
    };
    CaseBundle::from_manifest(manifest).expect("example 1 defaults are valid")
}

/// Lorenz system (σ = ρ = 10, β = 8/3) with feedback noise of gain `k`.
/// Gains below the stabilizing threshold produce a warning, not an error.
pub fn example2_lorenz(k: f64) -> CaseBundle {
    let manifest = CaseManifest {
        case: CaseParams::Example2 {
            sigma: 10.0,
            rho: 10.0,
            beta: 8.0 / 3.0,
            k,
            alpha: None,
        },
        uncertainty: UncertaintySet::scalar(40.0, 50.0).expect("valid interval"),
        protocol: Protocol {
            horizon: 5.0,
            dt: 1e-4,
            trials: 400,
            seed: 2024,
            scenarios: ScenarioSettings {
                mode: ScenarioMode::Endpoints,
                grid_k: 1,
                count: 2,
                seed: 0,
            },
            x0: InitialState::Sphere { d: 3, radius: 10.0 },
            record_stride: 100,
            explode_radius: DEFAULT_EXPLODE_RADIUS,
            target_radius: 0.0,
        },
        verify: VerifyPlan {
            region: ShellRegion::new(0.01, 50.0, 10_000, 2),
            t_samples: vec![0.0],
            tolerance: 1e-9,
            radial_radii: vec![1.0, 10.0, 100.0],
            exponential: None,
        },
    };
    CaseBundle::from_manifest(manifest).expect("example 2 defaults are valid")
}

/// Oscillator `C f(x)` with two i.i.d. noise channels, V = |x|^{2/25}.
pub fn example3_oscillator() -> CaseBundle {
    let manifest = CaseManifest {
        case: CaseParams::Example3 {
            c: EXAMPLE3_C,
            a1: EXAMPLE3_A1,
            a2: EXAMPLE3_A2,
            alpha: 2.0 / 25.0,
            eta_coef: 3.0 / 25.0,
        },
        uncertainty: UncertaintySet::iid(2, 40.0, 50.0).expect("valid intervals"),
        protocol: Protocol {
            horizon: 5.0,
            dt: 1e-4,
            trials: 400,
            seed: 2024,
            scenarios: ScenarioSettings {
                mode: ScenarioMode::Endpoints,
                grid_k: 1,
                count: 4,
                seed: 0,
            },
            x0: InitialState::Sphere { d: 3, radius: 1.0 },
            record_stride: 100,
            explode_radius: DEFAULT_EXPLODE_RADIUS,
            target_radius: 0.0,
        },
        verify: VerifyPlan {
            region: ShellRegion::new(0.5, 5.0, 10_000, 3),
            t_samples: vec![0.0],
            tolerance: 1e-8,
            radial_radii: vec![1.0, 10.0, 100.0],
            exponential: None,
        },
    };
    CaseBundle::from_manifest(manifest).expect("example 3 defaults are valid")
}
