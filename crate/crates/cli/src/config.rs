//! Run configuration: a bundled case or an inline linear system, plus
//! command-line overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use gsde::casebook::{
    CaseBundle, CaseManifest, CaseParams, Claim, ExponentialPlan, Protocol, VerifyPlan,
};
use gsde::engine::GSdeSystem;
use gsde::gfunc::UncertaintySet;
use gsde::lyapunov::LyapunovSpec;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Contents of a `--config` TOML file. Exactly one of `case`,
/// `case_params` and `system` must be present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `example1`, `example2` or `example3` with its default constants.
    pub case: Option<String>,
    /// A bundled case with explicit constants.
    pub case_params: Option<CaseParams>,
    pub system: Option<InlineSystem>,
    pub uncertainty: Option<UncertaintySet>,
    pub protocol: Option<Protocol>,
    pub verify: Option<VerifyPlan>,
    pub out_dir: Option<PathBuf>,
    /// Trajectory CSVs written per scenario by `simulate`.
    pub csv_per_scenario: Option<usize>,
}

/// `dx = Ax dt + Σᵢ Dᵢx dBᵢ + Σᵢ Cᵢx d⟨Bᵢ⟩` with `V = e^{λt}|x|^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    #[serde(default = "inline_name")]
    pub name: String,
    pub drift: Vec<Vec<f64>>,
    /// One d×d matrix per noise component.
    pub diffusion: Vec<Vec<Vec<f64>>>,
    /// One d×d matrix per noise component, or empty.
    #[serde(default)]
    pub qv: Vec<Vec<Vec<f64>>>,
    pub lyapunov: Option<InlineLyapunov>,
}

fn inline_name() -> String {
    "inline-linear".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineLyapunov {
    pub p: f64,
    #[serde(default)]
    pub lambda: f64,
    /// `η(x) = eta_coef·|x|^p`; required by `verify`.
    pub eta_coef: Option<f64>,
}

/// Command-line overrides, applied after the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub case: Option<String>,
    pub trials: Option<usize>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub grid_k: Option<usize>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub tolerance: Option<f64>,
    pub csv_per_scenario: Option<usize>,
}

/// Everything a command needs, after validation.
#[derive(Debug)]
pub struct Setup {
    pub system: GSdeSystem,
    pub lyapunov: Option<LyapunovSpec>,
    pub uncertainty: UncertaintySet,
    pub protocol: Protocol,
    pub verify: Option<VerifyPlan>,
    pub claims: Vec<Claim>,
    pub warnings: Vec<String>,
    pub csv_per_scenario: usize,
    pub out_dir: Option<PathBuf>,
    /// The effective configuration, written next to the outputs.
    pub resolved: RunConfig,
}

pub const DEFAULT_CSV_PER_SCENARIO: usize = 2;

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Parse errors carry the line and column of the offending key.
pub fn parse(text: &str) -> Result<RunConfig, toml::de::Error> {
    toml::from_str(text)
}

fn cfg<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

pub fn resolve(mut config: RunConfig, ov: &Overrides) -> Result<Setup, CliError> {
    if let Some(case) = &ov.case {
        if config.system.is_some() || config.case_params.is_some() {
            return Err(CliError::Config(
                "--case conflicts with `system` or `case_params` in the config".into(),
            ));
        }
        config.case = Some(case.clone());
    }
    let sources = [
        config.case.is_some(),
        config.case_params.is_some(),
        config.system.is_some(),
    ];
    match sources.iter().filter(|&&s| s).count() {
        1 => {}
        0 => {
            return Err(CliError::Config(
                "no system given: pass --case or a config with `case`, `case_params` or `system`"
                    .into(),
            ))
        }
        _ => {
            return Err(CliError::Config(
                "`case`, `case_params` and `system` are mutually exclusive".into(),
            ))
        }
    }
    if let Some(n) = ov.csv_per_scenario {
        config.csv_per_scenario = Some(n);
    }
    if config.system.is_some() {
        resolve_inline(config, ov)
    } else {
        resolve_case(config, ov)
    }
}

fn case_name(params: &CaseParams) -> &'static str {
    match params {
        CaseParams::Example1 { .. } => "example1",
        CaseParams::Example2 { .. } => "example2",
        CaseParams::Example3 { .. } => "example3",
    }
}

fn apply_protocol(p: &mut Protocol, ov: &Overrides) -> Result<(), CliError> {
    if let Some(n) = ov.trials {
        p.trials = n;
    }
    if let Some(t) = ov.horizon {
        p.horizon = t;
    }
    if let Some(dt) = ov.dt {
        p.dt = dt;
    }
    if let Some(k) = ov.grid_k {
        p.scenarios.grid_k = k;
    }
    if let Some(s) = ov.seed {
        p.seed = s;
        p.scenarios.seed = s;
    }
    if p.trials == 0 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    p.n_steps().map_err(cfg)?;
    Ok(())
}

fn apply_verify(
    v: &mut VerifyPlan,
    ov: &Overrides,
    default_p: Option<f64>,
) -> Result<(), CliError> {
    if let Some(s) = ov.seed {
        v.region.seed = s;
    }
    if let Some(tol) = ov.tolerance {
        if !(tol >= 0.0 && tol.is_finite()) {
            return Err(CliError::Config(format!(
                "tolerance must be a nonnegative number, got {tol}"
            )));
        }
        v.tolerance = tol;
    }
    if let Some(lambda) = ov.lambda {
        match (&mut v.exponential, default_p) {
            (Some(plan), _) => plan.lambda = lambda,
            (None, Some(p)) => v.exponential = Some(ExponentialPlan { lambda, p }),
            (None, None) => {
                return Err(CliError::Config(
                    "--lambda needs an exponential certificate (`verify.exponential`) in the configuration".into(),
                ))
            }
        }
    }
    Ok(())
}

fn resolve_case(config: RunConfig, ov: &Overrides) -> Result<Setup, CliError> {
    let name = match (&config.case, &config.case_params) {
        (Some(n), _) => n.as_str(),
        (None, Some(p)) => case_name(p),
        (None, None) => unreachable!("checked by resolve"),
    };
    let defaults = CaseBundle::by_name(name).map_err(cfg)?.manifest;
    let mut manifest = CaseManifest {
        case: config.case_params.clone().unwrap_or(defaults.case),
        uncertainty: config.uncertainty.clone().unwrap_or(defaults.uncertainty),
        protocol: config.protocol.clone().unwrap_or(defaults.protocol),
        verify: config.verify.clone().unwrap_or(defaults.verify),
    };
    apply_protocol(&mut manifest.protocol, ov)?;
    apply_verify(&mut manifest.verify, ov, None)?;
    let bundle = CaseBundle::from_manifest(manifest.clone()).map_err(cfg)?;
    let resolved = RunConfig {
        case: None,
        case_params: Some(manifest.case),
        system: None,
        uncertainty: Some(manifest.uncertainty),
        protocol: Some(manifest.protocol.clone()),
        verify: Some(manifest.verify.clone()),
        out_dir: None,
        csv_per_scenario: Some(config.csv_per_scenario.unwrap_or(DEFAULT_CSV_PER_SCENARIO)),
    };
    Ok(Setup {
        lyapunov: Some(bundle.lyapunov.clone()),
        uncertainty: bundle.uncertainty().clone(),
        protocol: manifest.protocol,
        verify: Some(manifest.verify),
        claims: bundle.claims.clone(),
        warnings: bundle.warnings.clone(),
        system: bundle.system,
        csv_per_scenario: config.csv_per_scenario.unwrap_or(DEFAULT_CSV_PER_SCENARIO),
        out_dir: config.out_dir,
        resolved,
    })
}

fn square(name: &str, rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::Config(format!(
            "{name}: expected a {d}x{d} matrix"
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{name}: entries must be finite")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn resolve_inline(config: RunConfig, ov: &Overrides) -> Result<Setup, CliError> {
    let sys_cfg = config.system.clone().expect("checked by resolve");
    let (Some(uncertainty), Some(mut protocol)) =
        (config.uncertainty.clone(), config.protocol.clone())
    else {
        return Err(CliError::Config(
            "an inline `system` needs `uncertainty` and `protocol` blocks".into(),
        ));
    };
    let d = sys_cfg.drift.len();
    let m = sys_cfg.diffusion.len();
    if d == 0 || m == 0 {
        return Err(CliError::Config(
            "system.drift and system.diffusion must be nonempty".into(),
        ));
    }
    if m != uncertainty.m() {
        return Err(CliError::Config(format!(
            "system.diffusion has {m} matrices but the uncertainty set has m = {}",
            uncertainty.m()
        )));
    }
    if !(sys_cfg.qv.is_empty() || sys_cfg.qv.len() == m) {
        return Err(CliError::Config(format!(
            "system.qv must be empty or hold {m} matrices"
        )));
    }
    if protocol.x0.dim() != d {
        return Err(CliError::Config(format!(
            "protocol.x0 has dimension {}, system has d = {d}",
            protocol.x0.dim()
        )));
    }
    let a = square("system.drift", &sys_cfg.drift, d)?;
    let diff = (0..m)
        .map(|i| square(&format!("system.diffusion[{i}]"), &sys_cfg.diffusion[i], d))
        .collect::<Result<Vec<_>, _>>()?;
    let qv = (0..sys_cfg.qv.len())
        .map(|i| square(&format!("system.qv[{i}]"), &sys_cfg.qv[i], d))
        .collect::<Result<Vec<_>, _>>()?;

    let qv_field: Option<Arc<gsde::engine::FieldFn>> = (!qv.is_empty()).then(|| {
        Arc::new(move |x: &[f64], _: f64, out: &mut [f64]| {
            out.fill(0.0);
            let xv = DVector::from_column_slice(x);
            for (i, c) in qv.iter().enumerate() {
                let col = c * &xv;
                for k in 0..d {
                    out[(k * m + i) * m + i] = col[k];
                }
            }
        }) as Arc<gsde::engine::FieldFn>
    });
    let system = GSdeSystem::new(
        sys_cfg.name.clone(),
        d,
        m,
        Arc::new(move |x: &[f64], _, out: &mut [f64]| {
            out.copy_from_slice((&a * DVector::from_column_slice(x)).as_slice());
        }),
        Arc::new(move |x: &[f64], _, out: &mut [f64]| {
            let xv = DVector::from_column_slice(x);
            for (i, di) in diff.iter().enumerate() {
                let col = di * &xv;
                for k in 0..d {
                    out[k * m + i] = col[k];
                }
            }
        }),
        qv_field,
    )
    .map_err(cfg)?;

    let lyapunov = match sys_cfg.lyapunov {
        None => None,
        Some(l) => {
            if !(l.p > 0.0 && l.p.is_finite() && l.lambda.is_finite()) {
                return Err(CliError::Config(format!(
                    "system.lyapunov: need p > 0 and finite lambda, got {l:?}"
                )));
            }
            let spec = LyapunovSpec::power_norm(d, l.p, l.lambda);
            Some(match l.eta_coef {
                Some(c) => {
                    let p = l.p;
                    spec.with_eta(Arc::new(move |x: &[f64]| {
                        c * x.iter().map(|v| v * v).sum::<f64>().powf(0.5 * p)
                    }))
                }
                None => spec,
            })
        }
    };

    apply_protocol(&mut protocol, ov)?;
    let mut verify = config.verify.clone();
    match verify.as_mut() {
        Some(v) => apply_verify(v, ov, sys_cfg.lyapunov.map(|l| l.p))?,
        None if ov.lambda.is_some() || ov.tolerance.is_some() => {
            return Err(CliError::Config(
                "--lambda and --tolerance need a `verify` block".into(),
            ))
        }
        None => {}
    }
    let csv = config.csv_per_scenario.unwrap_or(DEFAULT_CSV_PER_SCENARIO);
    let resolved = RunConfig {
        case: None,
        case_params: None,
        system: Some(sys_cfg),
        uncertainty: Some(uncertainty.clone()),
        protocol: Some(protocol.clone()),
        verify: verify.clone(),
        out_dir: None,
        csv_per_scenario: Some(csv),
    };
    Ok(Setup {
        system,
        lyapunov,
        uncertainty,
        protocol,
        verify,
        claims: Vec::new(),
        warnings: Vec::new(),
        csv_per_scenario: csv,
        out_dir: config.out_dir,
        resolved,
    })
}
