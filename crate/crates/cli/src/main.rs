use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use cns_core::harness::{self, Scenario, OUTPUT_ROOT_VAR};

#[derive(Parser)]
#[command(name = "cnslab", version, about = "Compressible Navier-Stokes spectral laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file, or a builtin scenario by name (quiescent, heat-mode, smallwave).
    Run {
        scenario: String,
        /// Directory receiving `<name>/`; overrides the environment.
        #[arg(long, env = OUTPUT_ROOT_VAR, default_value = "runs")]
        output: PathBuf,
    },
    /// Run the verification suite.
    Verify {
        #[arg(long, value_delimiter = ',', default_value = "32,64")]
        resolutions: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = OUTPUT_ROOT_VAR, default_value = "runs")]
        output: PathBuf,
    },
    /// Print norms against time for a finished run as CSV.
    Report { run_dir: PathBuf },
    /// Print the full configuration of a scenario, defaults included.
    Show { scenario: String },
}

fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = PathBuf::from(arg);
    if path.exists() {
        return Scenario::load(&path).with_context(|| format!("reading {}", path.display()));
    }
    if Scenario::builtin_names().contains(&arg) {
        return Ok(Scenario::builtin(arg)?);
    }
    anyhow::bail!("{arg} is neither a scenario file nor a builtin scenario")
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, output } => {
            let sc = load_scenario(&scenario)?;
            let manifest = harness::run(&sc, &output)?;
            print!("{}", manifest.to_text());
            Ok(if manifest.success() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Verify { resolutions, trials, seed, output } => {
            anyhow::ensure!(!resolutions.is_empty(), "need at least one resolution");
            let suite = harness::verify_all(&resolutions, trials, seed)?;
            let manifest = harness::write_suite(&suite, &output.join("verify"), seed)?;
            print!("{}", suite.to_csv());
            eprintln!("wrote {}", manifest.output_dir.display());
            Ok(if suite.success() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Report { run_dir } => {
            print!("{}", harness::report(&run_dir)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Show { scenario } => {
            print!("{}", load_scenario(&scenario)?.to_config());
            Ok(ExitCode::SUCCESS)
        }
    }
}
