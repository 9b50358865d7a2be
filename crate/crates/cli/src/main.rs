use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ccg_clocks::scenario::{run_scenario, scenario_schema, RunOptions, Scenario};
use ccg_clocks::{Error, FrequencyConvention};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_COMPUTATION: u8 = 3;

#[derive(Parser)]
#[command(name = "ccg", version, about = "Dephasing of gravitationally coupled clocks under classical-channel gravity")]
struct Cli {
    /// How quoted frequencies become angular frequencies.
    #[arg(long, global = true, value_enum, default_value_t = Convention::Direct)]
    convention: Convention,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Convention {
    Direct,
    #[value(name = "2pi")]
    TwoPi,
    Both,
}

impl Convention {
    fn list(self) -> Vec<FrequencyConvention> {
        match self {
            Convention::Direct => vec![FrequencyConvention::Direct],
            Convention::TwoPi => vec![FrequencyConvention::TimesTwoPi],
            Convention::Both => FrequencyConvention::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct Io {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportIo {
    /// Optional config, e.g. to pick the json format.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form minimum dephasing rates.
    Rates(Io),
    /// Numerical rate optimization against the closed forms.
    Optimize(Io),
    /// Lattice-size sweeps and scaling-law fits.
    Scaling(Io),
    /// Master-equation evolution and coherence decay.
    Simulate(Io),
    /// Redshift-coupling dephasing and parameter bounds.
    Redshift(Io),
    /// Recompute the headline estimates under every convention.
    PaperReport(ReportIo),
    /// Print the JSON Schema of scenario configs.
    Schema,
}

fn load(path: &Path, expected: &str) -> Result<Scenario, Error> {
    let scenario = Scenario::load(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Validation {
            path: "--config".into(),
            message: format!("cannot read {}: {source}", path.display()),
        },
        other => other,
    })?;
    if scenario.kind() != expected {
        return Err(Error::Validation {
            path: "kind".into(),
            message: format!("this subcommand runs '{expected}' scenarios, the config is '{}'", scenario.kind()),
        });
    }
    Ok(scenario)
}

fn execute(cli: Cli) -> Result<(), Error> {
    let (kind, config, out) = match cli.command {
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&scenario_schema()).expect("schema serializes"));
            return Ok(());
        }
        Command::Rates(io) => ("rates", Some(io.config), io.out),
        Command::Optimize(io) => ("optimize", Some(io.config), io.out),
        Command::Scaling(io) => ("scaling-sweep", Some(io.config), io.out),
        Command::Simulate(io) => ("simulate", Some(io.config), io.out),
        Command::Redshift(io) => ("redshift", Some(io.config), io.out),
        Command::PaperReport(io) => ("paper-report", io.config, io.out),
    };
    let scenario = match config {
        Some(path) => load(&path, kind)?,
        None => Scenario::from_json_str(r#"{"kind": "paper-report"}"#)?,
    };
    let options = RunOptions::new(out).with_conventions(&cli.convention.list());
    let manifest = run_scenario(&scenario, &options)?;
    for f in &manifest.files {
        println!("{}", options.out_dir.join(f).display());
    }
    println!("{}", options.out_dir.join("manifest.json").display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_validation() => {
            error!("invalid scenario: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(e) => {
            error!("computation failed: {e}");
            ExitCode::from(EXIT_COMPUTATION)
        }
    }
}
