//! `ite-distill`: run distillation experiments from a JSON config.
//!
//! Exit codes: 0 success, 1 config error, 2 runtime failure, 3 a bound check
//! failed beyond its tolerance.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ite_distill::experiment::{
    run_experiment, stage_bound_report, stage_distill, stage_evaluate, stage_gen_data, stage_train_oracle, ExperimentConfig,
    ExperimentError, Format, RunOptions,
};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_BOUND: u8 = 3;

#[derive(Parser)]
#[command(name = "ite-distill", version, about = "Distill a counterfactual-regression oracle into interpretable ITE models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage for every seed, then aggregate.
    Run(Common),
    /// Generate or load data and write the train/validation/test folds.
    GenData(Common),
    /// Train the oracle on the saved folds.
    TrainOracle(Common),
    /// Fit distilled and baseline learners.
    Distill(Common),
    /// Evaluate the oracle and all learners on the test fold.
    Evaluate(Common),
    /// Check the error bounds on the test fold (synthetic data only).
    BoundReport(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds to process; all configured seeds by default.
    #[arg(long, value_delimiter = ',')]
    seed_subset: Option<Vec<u64>>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Csv => Format::Csv,
            OutputFormat::Json => Format::Json,
        }
    }
}

enum Failure {
    Experiment(ExperimentError),
    Bounds(Vec<String>),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure::Experiment(e)
    }
}

fn seeds(cfg: &ExperimentConfig, subset: &Option<Vec<u64>>) -> Result<Vec<u64>, ExperimentError> {
    match subset {
        None => Ok(cfg.seeds.clone()),
        Some(list) => {
            if let Some(s) = list.iter().find(|s| !cfg.seeds.contains(s)) {
                return Err(ExperimentError::Config(format!("seed {s} is not listed in the config")));
            }
            Ok(list.clone())
        }
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    let (Command::Run(common)
    | Command::GenData(common)
    | Command::TrainOracle(common)
    | Command::Distill(common)
    | Command::Evaluate(common)
    | Command::BoundReport(common)) = &command;
    let cfg = ExperimentConfig::load(&common.config)?;
    let format = Format::from(common.format);
    let selected = seeds(&cfg, &common.seed_subset)?;
    match command {
        Command::Run(_) => {
            let options = RunOptions {
                seed_subset: common.seed_subset.clone(),
                workers: common.workers,
                format,
            };
            let outcome = run_experiment(&cfg, &options)?;
            for row in &outcome.summary {
                println!("{:<24} {:<9} {:<15} {:.6} ± {:.6}", row.model, row.variant, row.metric, row.mean, row.stderr);
            }
            let violations: Vec<String> = outcome
                .bound_violations()
                .into_iter()
                .map(|(seed, model, variant)| format!("seed {seed}: {model} ({})", variant.as_str()))
                .collect();
            if !violations.is_empty() {
                return Err(Failure::Bounds(violations));
            }
        }
        Command::GenData(_) => {
            for s in selected {
                print_paths(&stage_gen_data(&cfg, s)?);
            }
        }
        Command::TrainOracle(_) => {
            for s in selected {
                print_paths(&stage_train_oracle(&cfg, s)?);
            }
        }
        Command::Distill(_) => {
            for s in selected {
                print_paths(&stage_distill(&cfg, s)?);
            }
        }
        Command::Evaluate(_) => {
            for s in selected {
                print_paths(&[stage_evaluate(&cfg, s, format)?.1]);
            }
        }
        Command::BoundReport(_) => {
            let mut violations = Vec::new();
            for s in selected {
                let (entries, path) = stage_bound_report(&cfg, s, format)?;
                print_paths(&[path]);
                violations.extend(
                    entries
                        .iter()
                        .filter(|e| !e.report.holds_first)
                        .map(|e| format!("seed {s}: {} ({})", e.model, e.variant.as_str())),
                );
            }
            if !violations.is_empty() {
                return Err(Failure::Bounds(violations));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Experiment(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
        Err(Failure::Bounds(v)) => {
            for line in &v {
                eprintln!("bound violated: {line}");
            }
            ExitCode::from(EXIT_BOUND)
        }
    }
}
