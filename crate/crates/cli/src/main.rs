//! `tacnet`: run scenarios, check traces, validate scenario files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tacnet_core::check::check_trace;
use tacnet_core::runner::run_scenario;
use tacnet_core::scenario::{parse_scenario, Scenario, ScenarioError};

const EXIT_VIOLATION: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "tacnet", version, about = "Industrial 5G/TSN control-plane simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace, metrics, audit log and summary.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario horizon, in microseconds.
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Evaluate the built-in properties over a trace.jsonl file.
    Check { trace: PathBuf },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
}

fn load(path: &Path) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_scenario(&text).map_err(|e: ScenarioError| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { scenario } => match load(&scenario) {
            Ok(s) => {
                println!(
                    "{}: ok ({} nodes, {} links, {} devices, {} use cases)",
                    scenario.display(),
                    s.nodes.len(),
                    s.links.len(),
                    s.devices.len(),
                    s.use_cases.len()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(EXIT_INPUT)
            }
        },
        Command::Run { scenario, out, seed, horizon } => {
            let mut s = match load(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(EXIT_INPUT);
                }
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(h) = horizon {
                if h == 0 {
                    eprintln!("--horizon must be positive");
                    return ExitCode::from(EXIT_INPUT);
                }
                s.horizon_us = h;
            }
            let outcome = run_scenario(&s);
            if let Err(e) = outcome.write_outputs(&out) {
                eprintln!("{}: {e}", out.display());
                return ExitCode::from(EXIT_INPUT);
            }
            let summary = &outcome.summary;
            println!(
                "{}: {} trace records, {} device(s), {} use case(s), exit {}",
                scenario.display(),
                summary.trace_records,
                summary.devices.len(),
                summary.use_cases.len(),
                summary.exit_code
            );
            for p in &summary.problems {
                println!("  {p}");
            }
            if summary.exit_code == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VIOLATION)
            }
        }
        Command::Check { trace } => {
            let text = match fs::read_to_string(&trace) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("{}: {e}", trace.display());
                    return ExitCode::from(EXIT_INPUT);
                }
            };
            match check_trace(&text) {
                Err(e) => {
                    eprintln!("{}: {e}", trace.display());
                    ExitCode::from(EXIT_INPUT)
                }
                Ok(report) => {
                    println!("{report}");
                    if report.failures() == 0 {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_VIOLATION)
                    }
                }
            }
        }
    }
}
