use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsde_cli::config::{self, Overrides, RunConfig};
use gsde_cli::{commands, event, CliError};

const OUT_ENV: &str = "GSDE_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "gsde",
    version,
    about = "Simulate and verify SDEs driven by G-Brownian motion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch over the scenario family; write trajectories and summaries.
    Simulate(Common),
    /// Check the Lyapunov hypotheses on the configured region.
    Verify(Common),
    /// Estimate the capacity of an event over the scenario family.
    Capacity {
        #[command(flatten)]
        common: Common,
        /// e.g. "|x(T)| > 1 && max|x(t)| < 100"
        event: String,
    },
}

#[derive(Args)]
struct Common {
    /// Bundled case: example1, example2 or example3.
    #[arg(long)]
    case: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Horizon T.
    #[arg(long = "T", value_name = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    grid_k: Option<usize>,
    /// Seeds simulation, scenario and region sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $GSDE_OUT_DIR, then ./gsde-out].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Trajectory CSVs per scenario written by `simulate`.
    #[arg(long)]
    csv_per_scenario: Option<usize>,
}

impl Common {
    fn setup(&self) -> Result<config::Setup, CliError> {
        let file = match &self.config {
            Some(path) => config::load(path)?,
            None => RunConfig::default(),
        };
        let ov = Overrides {
            case: self.case.clone(),
            trials: self.trials,
            horizon: self.horizon,
            dt: self.dt,
            grid_k: self.grid_k,
            seed: self.seed,
            lambda: self.lambda,
            tolerance: self.tolerance,
            csv_per_scenario: self.csv_per_scenario,
        };
        config::resolve(file, &ov)
    }

    fn out_dir(&self, setup: &config::Setup) -> PathBuf {
        commands::output_dir(
            self.out.clone(),
            setup,
            std::env::var_os(OUT_ENV).map(PathBuf::from),
        )
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(c) => {
            let setup = c.setup()?;
            commands::simulate(&setup, &c.out_dir(&setup))
        }
        Command::Verify(c) => {
            let setup = c.setup()?;
            commands::verify(&setup, &c.out_dir(&setup))
        }
        Command::Capacity { common, event } => {
            let event = event::parse(&event).map_err(|e| CliError::Config(e.to_string()))?;
            let setup = common.setup()?;
            commands::capacity(&setup, &event, &common.out_dir(&setup))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
