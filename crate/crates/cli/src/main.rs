//! Command-line front door: one subcommand per experiment family, plus
//! `repro` for the named verification scenarios.
//!
//! Exit status: 0 on success, 1 when an experiment or scenario fails,
//! 2 on configuration or usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sdm_core::harness::{run_experiment, ExperimentConfig, OutputFormat};
use sdm_core::repro::{run_all, run_scenario, ScenarioResult, SCENARIO_NAMES};
use sdm_core::CoreError;

/// Environment variable that overrides the default output directory.
const OUT_DIR_ENV: &str = "SDM_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "sdm",
    version,
    about = "Dynamic programming, LQR/LQG, bandit, MPC, and policy-search experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabular MDP experiments (mdp-solve, mdp-qlearning).
    Mdp(RunArgs),
    /// Linear-quadratic regulator design (lqr-design).
    Lqr(RunArgs),
    /// Output-feedback design and fragility probes (lqg-design).
    Lqg(RunArgs),
    /// Receding-horizon control runs (mpc-repair).
    Mpc(RunArgs),
    /// Multi-armed and contextual bandit runs (bandit-*).
    Bandit(RunArgs),
    /// Derivative-free policy search runs (search-*).
    Search(RunArgs),
    /// Run a named verification scenario against its stored tolerances.
    Repro(ReproArgs),
}

impl Command {
    fn family(&self) -> Option<&'static str> {
        match self {
            Command::Mdp(_) => Some("mdp-"),
            Command::Lqr(_) => Some("lqr-"),
            Command::Lqg(_) => Some("lqg-"),
            Command::Mpc(_) => Some("mpc-"),
            Command::Bandit(_) => Some("bandit-"),
            Command::Search(_) => Some("search-"),
            Command::Repro(_) => None,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write outputs (default: $SDM_OUT_DIR or ./out).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Row format for curve and trajectory files.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Args)]
struct ReproArgs {
    /// Scenario name; see `repro --list`.
    name: Option<String>,
    /// Run every scenario.
    #[arg(long)]
    all: bool,
    /// Print the scenario names and exit.
    #[arg(long)]
    list: bool,
    /// Where to write outputs (default: $SDM_OUT_DIR or ./out).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Jsonl => OutputFormat::JsonLines,
        }
    }
}

fn resolve_out_dir(flag: &Option<PathBuf>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.clone();
    }
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("out")
}

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Repro(args) => run_repro(args),
        other => {
            let args = match other {
                Command::Mdp(a)
                | Command::Lqr(a)
                | Command::Lqg(a)
                | Command::Mpc(a)
                | Command::Bandit(a)
                | Command::Search(a) => a,
                Command::Repro(_) => unreachable!(),
            };
            run_family(other.family().expect("family subcommand"), args)
        }
    };
    ExitCode::from(code)
}

fn load_config(path: &Path, family: &str, seed: Option<u64>) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut config = ExperimentConfig::from_json(&text).map_err(|e| e.to_string())?;
    if !config.experiment.starts_with(family) {
        return Err(format!(
            "experiment '{}' does not belong to the '{}' family",
            config.experiment,
            family.trim_end_matches('-')
        ));
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run_family(family: &'static str, args: &RunArgs) -> u8 {
    let config = match load_config(&args.config, family, args.seed) {
        Ok(c) => c,
        Err(message) => {
            eprintln!("error: {message}");
            return EXIT_USAGE;
        }
    };
    let out_dir = resolve_out_dir(&args.output_dir);
    match run_experiment(&config, &out_dir, args.format.into()) {
        Ok(report) => {
            println!(
                "{} seed={} replications={} {}: mean={} half_width={} -> {}",
                report.experiment,
                report.master_seed,
                report.aggregate.n,
                report.metric,
                report.aggregate.mean,
                report.aggregate.half_width,
                out_dir.display()
            );
            0
        }
        Err(CoreError::Config { path, message }) => {
            eprintln!("error: configuration at {path}: {message}");
            EXIT_USAGE
        }
        Err(CoreError::UnknownExperiment(name)) => {
            eprintln!("error: unknown experiment '{name}'");
            EXIT_USAGE
        }
        Err(other) => {
            eprintln!("error: {other}");
            EXIT_FAILURE
        }
    }
}

fn print_scenario(result: &ScenarioResult) {
    let verdict = if result.pass { "PASS" } else { "FAIL" };
    println!("[{verdict}] {}", result.name);
    for check in &result.checks {
        println!("    {}", check.describe());
    }
}

fn run_repro(args: &ReproArgs) -> u8 {
    if args.list {
        for name in SCENARIO_NAMES {
            println!("{name}");
        }
        return 0;
    }
    let out_dir = resolve_out_dir(&args.output_dir).join("repro");
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return EXIT_FAILURE;
    }
    if args.all {
        let results = match run_all() {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_FAILURE;
            }
        };
        for result in &results {
            print_scenario(result);
        }
        let pass = results.iter().all(|r| r.pass);
        if let Err(e) = write_json(&out_dir.join("results.json"), &results) {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
        println!("{}", if pass { "ALL PASS" } else { "FAILURES PRESENT" });
        return if pass { 0 } else { EXIT_FAILURE };
    }
    let Some(name) = &args.name else {
        eprintln!("error: give a scenario name or --all (see `repro --list`)");
        return EXIT_USAGE;
    };
    match run_scenario(name) {
        Ok(result) => {
            print_scenario(&result);
            if let Err(e) = write_json(&out_dir.join(format!("{name}.json")), &result) {
                eprintln!("error: {e}");
                return EXIT_FAILURE;
            }
            if result.pass {
                0
            } else {
                EXIT_FAILURE
            }
        }
        Err(CoreError::UnknownExperiment(name)) => {
            eprintln!("error: unknown scenario '{name}' (see `repro --list`)");
            EXIT_USAGE
        }
        Err(other) => {
            eprintln!("error: {other}");
            EXIT_FAILURE
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
