use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use gsde::diagnostics::{capacity as capacity_estimate, convergence_report};
use gsde::engine::{simulate_batch, write_trajectory_csv, Batch};
use gsde::lyapunov::{
    check_generator_bound, check_radial_unboundedness, exponential_certificate, LyapunovSpec,
};
use gsde::scenarios::ScenarioFamily;
use gsde::SCHEMA_VERSION;
use serde::Serialize;

use crate::config::{RunConfig, Setup};
use crate::event::Event;
use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("cannot write {}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    schema_version: u32,
    command: &'a str,
    files: Vec<String>,
    warnings: &'a [String],
    config: &'a RunConfig,
}

fn write_manifest(
    out: &Path,
    command: &str,
    files: Vec<String>,
    setup: &Setup,
) -> Result<(), CliError> {
    let doc = RunManifest {
        schema_version: SCHEMA_VERSION,
        command,
        files,
        warnings: &setup.warnings,
        config: &setup.resolved,
    };
    write_json(&out.join("run.json"), &doc)
}

fn prepare_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

fn run_batch(setup: &Setup) -> Result<(ScenarioFamily, Batch), CliError> {
    let p = &setup.protocol;
    let family = p.family(&setup.uncertainty)?;
    let batch = simulate_batch(
        &setup.system,
        &family,
        &p.x0,
        p.trials,
        p.seed,
        &p.sim_options(),
    )?;
    Ok((family, batch))
}

fn report_warnings(setup: &Setup) {
    for w in &setup.warnings {
        eprintln!("warning: {w}");
    }
}

/// `ln|x|`, clamped at the smallest positive double so underflow to 0 stays finite.
fn log_norm(x: &[f64]) -> f64 {
    x.iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE)
        .ln()
}

/// Long-format `scenario_id,t,n,mean,min,max` of `ln|x(t)|` at recorded times.
fn write_log_norm(path: &Path, batch: &Batch) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut write = || -> Result<(), csv::Error> {
        w.write_record([
            "scenario_id",
            "t",
            "n",
            "mean_log_norm",
            "min_log_norm",
            "max_log_norm",
        ])?;
        for &id in &batch.scenario_ids {
            let trajs: Vec<_> = batch.for_scenario(id).collect();
            let rows = trajs.iter().map(|t| t.len()).max().unwrap_or(0);
            for i in 0..rows {
                let live: Vec<_> = trajs.iter().filter(|t| t.len() > i).collect();
                let vals: Vec<f64> = live.iter().map(|t| log_norm(t.state(i))).collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                w.write_record([
                    id.to_string(),
                    live[0].time(i).to_string(),
                    vals.len().to_string(),
                    mean.to_string(),
                    lo.to_string(),
                    hi.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| io_err(path, e))
}

pub fn simulate(setup: &Setup, out: &Path) -> Result<(), CliError> {
    report_warnings(setup);
    let (family, batch) = run_batch(setup)?;
    prepare_out(out)?;
    let mut files = Vec::new();

    let summary = batch.summary();
    write_json(&out.join("summary.json"), &summary)?;
    files.push("summary.json".to_string());

    write_log_norm(&out.join("log_norm.csv"), &batch)?;
    files.push("log_norm.csv".to_string());

    if setup.csv_per_scenario > 0 {
        let dir = out.join("trajectories");
        prepare_out(&dir)?;
        for run in &batch.runs {
            let Ok(traj) = &run.outcome else { continue };
            if run.trial as usize >= setup.csv_per_scenario {
                continue;
            }
            let scen = family
                .get(run.scenario_id)
                .expect("scenario belongs to the family");
            let name = format!("scenario{}_trial{}.csv", run.scenario_id, run.trial);
            let path = dir.join(&name);
            let file = File::create(&path).map_err(|e| io_err(&path, e))?;
            write_trajectory_csv(BufWriter::new(file), traj, scen).map_err(|e| io_err(&path, e))?;
            files.push(format!("trajectories/{name}"));
        }
    }

    let convergence = match &setup.lyapunov {
        Some(spec) => {
            let rep = convergence_report(&batch, spec, None, 0.1)?;
            write_json(&out.join("convergence.json"), &rep.brief())?;
            files.push("convergence.json".to_string());
            Some(rep)
        }
        None => None,
    };
    write_manifest(out, "simulate", files, setup)?;

    println!(
        "simulated {} trajectories ({} scenarios x {} trials, T = {}, dt = {})",
        batch.runs.len(),
        batch.scenario_ids.len(),
        batch.n_trials,
        summary.horizon,
        summary.dt
    );
    println!(
        "completed {}, exploded {}, hit target {}, failed {}",
        summary.counts.completed,
        summary.counts.exploded,
        summary.counts.hit_target,
        summary.counts.failed
    );
    println!(
        "max |x(T)| = {:e}, min over paths of min_t |x(t)| = {:e}",
        summary.max_terminal_norm, summary.min_norm_over_paths
    );
    if let Some(rep) = convergence {
        let a = &rep.aggregates;
        println!(
            "(1/T) log(|x(T)|/|x(0)|): max {:.4}, median {:.4}, q90 {:.4}",
            a.max_exponent, a.median_exponent, a.q90_exponent
        );
    }
    for f in batch.failures() {
        if let Err(e) = &f.outcome {
            eprintln!(
                "warning: scenario {} trial {} failed: {e}",
                f.scenario_id, f.trial
            );
        }
    }
    println!("outputs written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct VerifyDocument {
    schema_version: u32,
    system: String,
    generator_bound: gsde::lyapunov::GeneratorReport,
    radial_unboundedness: gsde::lyapunov::RadialReport,
    exponential: Option<gsde::lyapunov::ExponentialReport>,
    pass: bool,
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn verify(setup: &Setup, out: &Path) -> Result<(), CliError> {
    report_warnings(setup);
    let spec: &LyapunovSpec = setup.lyapunov.as_ref().ok_or_else(|| {
        CliError::Config("verify needs a Lyapunov candidate (`system.lyapunov`)".into())
    })?;
    if !spec.has_eta() {
        return Err(CliError::Config(
            "verify needs an eta function (`system.lyapunov.eta_coef`)".into(),
        ));
    }
    let plan = setup
        .verify
        .as_ref()
        .ok_or_else(|| CliError::Config("verify needs a `verify` block".into()))?;

    let gen = check_generator_bound(
        &setup.system,
        spec,
        &setup.uncertainty,
        &plan.region,
        &plan.t_samples,
        plan.tolerance,
    )?;
    let radial = check_radial_unboundedness(spec, &plan.radial_radii, &plan.t_samples)?;
    let exponential = match plan.exponential {
        Some(e) => Some(exponential_certificate(
            &setup.system,
            &LyapunovSpec::power_norm(setup.system.d(), e.p, e.lambda),
            &setup.uncertainty,
            e.lambda,
            e.p,
            &plan.region,
            &plan.t_samples,
            plan.tolerance,
        )?),
        None => None,
    };
    let pass = gen.pass && radial.pass && exponential.as_ref().is_none_or(|e| e.pass);

    println!(
        "generator bound LV <= gamma - eta: {} (worst margin {:e} at |x| = {:.4}, {} samples on |x| in [{}, {}], tolerance {:e})",
        verdict(gen.pass),
        gen.worst_margin,
        gen.worst_point.iter().map(|v| v * v).sum::<f64>().sqrt(),
        gen.sample_count,
        plan.region.r_lo,
        plan.region.r_hi,
        plan.tolerance
    );
    if gen.negative_eta_count > 0 {
        println!("  eta was negative at {} samples", gen.negative_eta_count);
    }
    println!(
        "radial unboundedness: {} ({})",
        verdict(radial.pass),
        radial.note
    );
    if let Some(e) = &exponential {
        println!(
            "exponential certificate (lambda = {}, p = {}): {} (lower-bound margin {:e}, generator margin {:e})",
            e.lambda,
            e.p,
            verdict(e.pass),
            e.lower_bound_worst_margin,
            e.generator_worst_margin
        );
        if let Some(rate) = e.certified_rate {
            println!("certified rate: limsup (1/t) log|x(t)| <= {rate}");
        }
    }
    println!("{}", gen.note);

    prepare_out(out)?;
    let doc = VerifyDocument {
        schema_version: SCHEMA_VERSION,
        system: setup.system.name().to_string(),
        generator_bound: gen,
        radial_unboundedness: radial,
        exponential,
        pass,
    };
    write_json(&out.join("verify.json"), &doc)?;
    write_manifest(out, "verify", vec!["verify.json".into()], setup)?;
    println!("verify: {}", verdict(pass));
    if pass {
        Ok(())
    } else {
        Err(CliError::Failed("verification failed".into()))
    }
}

pub fn capacity(setup: &Setup, event: &Event, out: &Path) -> Result<(), CliError> {
    report_warnings(setup);
    let (_, batch) = run_batch(setup)?;
    let est = capacity_estimate(&event.source, |t| event.holds(t), &batch)?;
    println!("event: {}", event.source);
    println!(
        "{:>9} {:>7} {:>7} {:>10} {:>23}",
        "scenario", "n", "hits", "p", "wilson 95%"
    );
    for s in &est.per_scenario {
        println!(
            "{:>9} {:>7} {:>7} {:>10.6} {:>23}",
            s.scenario_id,
            s.n,
            s.hits,
            s.probability,
            format!("[{:.6}, {:.6}]", s.wilson_lo, s.wilson_hi)
        );
    }
    println!(
        "capacity (sup over {} scenarios): {} at scenario {}",
        est.family_size, est.supremum, est.argmax_scenario
    );
    println!("note: {}", est.caveat);
    prepare_out(out)?;
    write_json(&out.join("capacity.json"), &est)?;
    write_manifest(out, "capacity", vec!["capacity.json".into()], setup)?;
    Ok(())
}

/// `--out`, then the config's `out_dir`, then `$GSDE_OUT_DIR`, then `gsde-out`.
pub fn output_dir(flag: Option<PathBuf>, setup: &Setup, env: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| setup.out_dir.clone())
        .or(env)
        .unwrap_or_else(|| PathBuf::from("gsde-out"))
}
