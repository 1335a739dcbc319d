use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use myobackstep::checks::run_checks;
use myobackstep::io::{format_value, load_scenario, save_scenario, write_trace, LoadError};
use myobackstep::simulator::{simulate, Scenario};
use myobackstep::{preset, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(version, about = "Backstepping control of muscle-driven linkages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and optionally export the trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed stored in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV trace destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print settling time, final error and final V.
        #[arg(long)]
        summary: bool,
    },
    /// Evaluate model and controller invariants at random states.
    Check {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Write a bundled scenario to disk.
    Preset {
        name: PresetName,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetName {
    Shoulder,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario,
            seed,
            out,
            summary,
        } => run(&scenario, seed, out.as_deref(), summary),
        Command::Check {
            scenario,
            samples,
            seed,
        } => check(&scenario, samples, seed),
        Command::Preset { name, out } => write_preset(name, &out),
    }
}

fn load(path: &Path) -> Result<Scenario, ExitCode> {
    load_scenario(path).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            LoadError::Io { .. } => ExitCode::from(EXIT_USAGE),
            _ => ExitCode::from(EXIT_FAILURE),
        }
    })
}

fn run(path: &Path, seed: Option<u64>, out: Option<&Path>, summary: bool) -> ExitCode {
    let mut scenario = match load(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let started = Instant::now();
    let result = simulate(&scenario);
    let elapsed = started.elapsed();

    if let Some(out) = out {
        if let Err(e) = write_trace(&result.trace, out) {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    if summary {
        let s = result.summary();
        match s.settling_time {
            Some(t) => println!("settling_time_s: {}", format_value(t)),
            None => println!("settling_time_s: none"),
        }
        println!(
            "final_max_error_deg: {}",
            format_value(s.final_max_error_deg)
        );
        println!("final_V: {}", format_value(s.final_v));
        println!("steps: {}", result.trace.len().saturating_sub(1));
        println!("wall_time_s: {:.3}", elapsed.as_secs_f64());
    }
    match result.fault {
        None => ExitCode::SUCCESS,
        Some(fault) => {
            eprintln!("error: {fault}");
            match fault {
                Error::StepFailed { .. } | Error::Divergence { .. } => {
                    ExitCode::from(EXIT_DIVERGED)
                }
                _ => ExitCode::from(EXIT_FAILURE),
            }
        }
    }
}

fn check(path: &Path, samples: usize, seed: u64) -> ExitCode {
    let scenario = match load(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    match run_checks(&scenario, samples, seed) {
        Ok(report) => {
            for outcome in &report.outcomes {
                println!("{outcome}");
            }
            if report.passed() {
                println!("all invariants hold over {} samples", report.samples);
                ExitCode::SUCCESS
            } else {
                eprintln!("{} invariant(s) violated", report.failures().count());
                ExitCode::from(EXIT_FAILURE)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn write_preset(name: PresetName, out: &Path) -> ExitCode {
    let scenario = match name {
        PresetName::Shoulder => preset::shoulder(),
    };
    let saved = scenario
        .map_err(|e| e.to_string())
        .and_then(|s| save_scenario(&s, out).map_err(|e| e.to_string()));
    match saved {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
