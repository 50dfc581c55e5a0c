use std::path::{Path, PathBuf};
use std::process::ExitCode;

use capaplan_core::model::{parse_model, ModelFormat};
use capaplan_core::scenario::{run_scenario, run_suite, LoadedScenario, SuiteReport};
use capaplan_service::ServiceConfig;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "capaplan", version, about = "Capability-based planning assistant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one scenario and print its report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Run every scenario in a directory; exits 1 unless all pass.
    Suite {
        dir: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Model document utilities.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Parse and validate a model document (.json or .ttl).
    Validate { file: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Serve { config } => serve(&config),
        Command::Run { scenario, reps } => run(&scenario, reps),
        Command::Suite { dir, reps, json } => suite(&dir, reps, json),
        Command::Model { command: ModelCommand::Validate { file } } => validate(&file),
    }
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::FAILURE
}

fn serve(path: &Path) -> ExitCode {
    let config = match ServiceConfig::load(path) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    runtime.block_on(async {
        match capaplan_service::start(&config).await {
            Ok((addr, handle)) => {
                println!("listening on http://{addr}");
                let _ = handle.await;
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        }
    })
}

fn run(path: &Path, reps: Option<usize>) -> ExitCode {
    let scenario = match LoadedScenario::load(path) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let reps = reps.unwrap_or_else(|| scenario.repetitions());
    if reps == 0 {
        return fail("--reps must be positive");
    }
    match run_scenario(&scenario, reps) {
        Ok((case, _)) => {
            let report = SuiteReport { cases: vec![case] };
            print!("{}", report.render());
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => fail(e),
    }
}

fn suite(dir: &Path, reps: Option<usize>, json: bool) -> ExitCode {
    match run_suite(dir, reps) {
        Ok(report) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
            } else {
                print!("{}", report.render());
            }
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => fail(e),
    }
}

fn validate(file: &Path) -> ExitCode {
    let format = match file.extension().and_then(|e| e.to_str()) {
        Some("ttl") => ModelFormat::TurtleSubset,
        _ => ModelFormat::JsonForm,
    };
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", file.display())),
    };
    match parse_model(&text, format).and_then(|m| m.validate().map(|_| m)) {
        Ok(m) => {
            println!(
                "valid: {} resources, {} provided and {} required capabilities",
                m.resources.len(),
                m.provided().count(),
                m.required().count()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(format!("{}: {e}", file.display())),
    }
}
