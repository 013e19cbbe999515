use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gsde(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsde"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GSDE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const INLINE: &str = r#"
out_dir = "inline-out"

[system]
drift = [[-1.0]]
diffusion = [[[0.5]]]
lyapunov = { p = 2.0, eta_coef = ETA }

[uncertainty]
kind = "scalar"
sigma_sq_lo = [1.0]
sigma_sq_hi = [2.0]

[protocol]
horizon = 1.0
dt = 0.01
trials = 20
seed = 3
x0 = { kind = "fixed", x0 = [1.0] }
scenarios = { mode = "endpoints", grid_k = 1 }

[verify]
region = { r_lo = 0.1, r_hi = 10.0, samples = 500, seed = 1 }
t_samples = [0.0]
tolerance = 1e-9
radial_radii = [1.0, 10.0, 100.0]
"#;

#[test]
fn verify_bundled_cases() {
    let dir = tempfile::tempdir().unwrap();
    let ok = gsde(&["verify", "--case", "example1", "--out", "v1"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("certified rate: limsup (1/t) log|x(t)| <= -0.75"));

    let fail = gsde(
        &[
            "verify", "--case", "example1", "--lambda", "10", "--out", "v2",
        ],
        dir.path(),
    );
    assert_eq!(fail.status.code(), Some(1));
    assert!(stdout(&fail).contains("verify: FAIL"));

    let ok3 = gsde(&["verify", "--case", "example3", "--out", "v3"], dir.path());
    assert_eq!(ok3.status.code(), Some(0), "{}", stdout(&ok3));

    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("v1/verify.json")).unwrap())
            .unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["exponential"]["certified_rate"], -0.75);
}

#[test]
fn simulate_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        [
            "simulate", "--case", "example1", "--trials", "10", "--T", "1", "--out", out,
        ]
    };
    let a = gsde(&args("a"), dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert!(gsde(&args("b"), dir.path()).status.success());

    let a_dir = dir.path().join("a");
    for name in [
        "summary.json",
        "log_norm.csv",
        "convergence.json",
        "run.json",
        "trajectories/scenario0_trial0.csv",
    ] {
        let x = fs::read(a_dir.join(name)).unwrap();
        assert_eq!(
            x,
            fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name} differs"
        );
    }
    for name in ["summary.json", "convergence.json", "run.json"] {
        let doc: serde_json::Value =
            serde_json::from_slice(&fs::read(a_dir.join(name)).unwrap()).unwrap();
        assert_eq!(doc["schema_version"], 1, "{name}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(a_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_scenarios"], 6);
    assert_eq!(summary["counts"]["completed"], 60);
    let csvs = fs::read_dir(a_dir.join("trajectories")).unwrap().count();
    assert_eq!(csvs, 12);
    let header = fs::read_to_string(a_dir.join("trajectories/scenario0_trial0.csv")).unwrap();
    assert!(header.starts_with("t,x_1,x_2,x_3,sigma_sq_1\n"));

    let other_seed = gsde(
        &[
            "simulate", "--case", "example1", "--trials", "10", "--T", "1", "--seed", "9", "--out",
            "c",
        ],
        dir.path(),
    );
    assert!(other_seed.status.success());
    assert_ne!(
        fs::read(a_dir.join("summary.json")).unwrap(),
        fs::read(dir.path().join("c/summary.json")).unwrap()
    );
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let zero = gsde(
        &["simulate", "--case", "example1", "--trials", "0"],
        dir.path(),
    );
    assert_eq!(zero.status.code(), Some(2));

    let unknown_case = gsde(&["simulate", "--case", "example9"], dir.path());
    assert_eq!(unknown_case.status.code(), Some(2));

    fs::write(
        dir.path().join("bad.toml"),
        "case = \"example1\"\ntrials = 4\n",
    )
    .unwrap();
    let bad = gsde(&["simulate", "--config", "bad.toml"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("line 2"), "{}", stderr(&bad));

    let missing = gsde(&["verify"], dir.path());
    assert_eq!(missing.status.code(), Some(2));

    let no_flag = gsde(&["simulate", "--bogus"], dir.path());
    assert_eq!(no_flag.status.code(), Some(2));
}

#[test]
fn capacity_events() {
    let dir = tempfile::tempdir().unwrap();
    let always = gsde(
        &[
            "capacity", "--case", "example1", "--trials", "5", "--T", "1", "--out", "c", "true",
        ],
        dir.path(),
    );
    assert_eq!(always.status.code(), Some(0));
    assert!(stdout(&always).contains("capacity (sup over 6 scenarios): 1 at"));
    let doc: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("c/capacity.json")).unwrap()).unwrap();
    assert_eq!(doc["supremum"], 1.0);
    assert_eq!(doc["schema_version"], 1);

    let decay = gsde(
        &[
            "capacity",
            "--case",
            "example1",
            "--trials",
            "50",
            "--out",
            "d",
            "|x(T)| > |x(0)|",
        ],
        dir.path(),
    );
    assert!(
        stdout(&decay).contains("capacity (sup over 6 scenarios): 0 at"),
        "{}",
        stdout(&decay)
    );

    let bad = gsde(
        &["capacity", "--case", "example1", "|x(T)| > 1 &&"],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("column 14"), "{}", stderr(&bad));
}

#[test]
fn inline_system_and_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ok.toml"), INLINE.replace("ETA", "1.0")).unwrap();
    fs::write(dir.path().join("tight.toml"), INLINE.replace("ETA", "2.0")).unwrap();

    // LV = (-2 + 0.25·σ̄²)|x|² = -1.5|x|²
    let ok = gsde(&["verify", "--config", "ok.toml"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}{}", stdout(&ok), stderr(&ok));
    assert!(dir.path().join("inline-out/verify.json").exists());
    let tight = gsde(
        &["verify", "--config", "tight.toml", "--out", "t"],
        dir.path(),
    );
    assert_eq!(tight.status.code(), Some(1));

    let via_env = Command::new(env!("CARGO_BIN_EXE_gsde"))
        .args([
            "simulate", "--case", "example1", "--trials", "2", "--T", "0.5",
        ])
        .current_dir(dir.path())
        .env("GSDE_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert!(via_env.status.success());
    assert!(dir.path().join("from-env/summary.json").exists());

    let sim = gsde(
        &["simulate", "--config", "ok.toml", "--out", "s"],
        dir.path(),
    );
    assert!(sim.status.success(), "{}", stderr(&sim));
    let run: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("s/run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["system"]["drift"][0][0], -1.0);
}

#[test]
fn sub_threshold_lorenz_gain_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("k0.toml"),
        "[case_params]\nname = \"example2\"\nsigma = 10.0\nrho = 10.0\nbeta = 2.6666666666666665\nk = 0.5\n",
    )
    .unwrap();
    let out = gsde(&["verify", "--config", "k0.toml", "--out", "v"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}{}",
        stdout(&out),
        stderr(&out)
    );
    assert!(stderr(&out).contains("does not exceed the stabilizing threshold"));
}
