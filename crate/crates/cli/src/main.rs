use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use erlang_edm_cli::scenario::bundled_names;
use erlang_edm_cli::{run_agents, run_lyapunov, run_ode, run_stability, CliError, Scenario};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "erlang-edm", version, about = "Erlang evolutionary dynamics for population games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the deterministic dynamics.
    Ode(Target),
    /// Simulate finite agent populations, one run per seed.
    Agents(Target),
    /// Compute the stability certificate.
    Stability(Target),
    /// Evaluate the Lyapunov function along the deterministic trajectory.
    Lyapunov(Target),
    /// List the bundled scenarios.
    Scenarios,
}

#[derive(clap::Args)]
struct Target {
    /// Scenario file, or the name of a bundled scenario.
    scenario: String,
    /// Directory for CSV and JSON outputs.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn print<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("summaries serialize");
    // A closed pipe on stdout is not an error; the files are already written.
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (target, command) = match cli.command {
        Command::Scenarios => {
            let mut out = std::io::stdout().lock();
            for name in bundled_names() {
                let _ = writeln!(out, "{name}");
            }
            return Ok(());
        }
        Command::Ode(t) => (t, "ode"),
        Command::Agents(t) => (t, "agents"),
        Command::Stability(t) => (t, "stability"),
        Command::Lyapunov(t) => (t, "lyapunov"),
    };
    let scenario = Scenario::load(&target.scenario)?;
    match command {
        "ode" => print(&run_ode(&scenario, &target.out)?),
        "agents" => print(&run_agents(&scenario, &target.out)?),
        "stability" => {
            let mut report = serde_json::to_value(run_stability(&scenario, &target.out)?).expect("report serializes");
            if let Some(obj) = report.as_object_mut() {
                obj.remove("lyapunov_matrix");
            }
            print(&report)
        }
        _ => print(&run_lyapunov(&scenario, &target.out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
