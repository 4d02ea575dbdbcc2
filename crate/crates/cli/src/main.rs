use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lfrgp::exec::Execution;
use lfrgp::experiment::{self, ExperimentConfig, ExperimentOutcome, REPLAY_TOL};
use lfrgp::synthesis::{LoopStatus, SynthesisReport};
use lfrgp::Error;

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_ASSUMPTION: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_OTHER: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "lfrgp", version, about = "Robust controller synthesis with learned sector bounds")]
struct Cli {
    /// TOML experiment configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trials per data-set size in the sweep.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Iteration cap of the synthesis loop.
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Synthesis for the a-priori sector.
    Prior,
    /// Learn the sector from data, synthesize and simulate.
    Learned,
    /// Sector statistics and synthesis across data-set sizes.
    Sweep,
    /// Simulate a stored controller with the ground-truth nonlinearity.
    Simulate {
        /// Report whose controller is simulated.
        #[arg(long)]
        report: PathBuf,
    },
    /// Re-verify the certificate stored in a report.
    ReplayCertificate {
        #[arg(long)]
        report: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible => EXIT_INFEASIBLE,
        Error::Assumption(_) | Error::SectorSign { .. } => EXIT_ASSUMPTION,
        Error::Solver(_)
        | Error::Reconstruction(_)
        | Error::Cholesky(_)
        | Error::NonFinite(_)
        | Error::NoBracket(_)
        | Error::NegativeVariance(_)
        | Error::Unbounded => EXIT_SOLVER,
        _ => EXIT_OTHER,
    }
}

fn load_config(cli: &Cli) -> lfrgp::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.data.trials = trials;
    }
    if let Some(iters) = cli.iters {
        cfg.synthesis.iterations = iters;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> lfrgp::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn outcome_code(o: &ExperimentOutcome) -> u8 {
    match o.report.status {
        LoopStatus::InitialAnalysisInfeasible => EXIT_INFEASIBLE,
        _ if !o.summary.replay_passed => EXIT_SOLVER,
        _ => 0,
    }
}

fn read_report(path: &Path) -> lfrgp::Result<SynthesisReport> {
    SynthesisReport::from_json(&std::fs::read_to_string(path)?)
}

fn run(cli: &Cli) -> lfrgp::Result<u8> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    std::fs::write(cli.out.join("config.toml"), cfg.to_toml()?)?;
    let exec = Execution::default();
    match &cli.verb {
        Verb::Prior => {
            let o = experiment::run_prior_experiment(&cfg, Some(&cli.out.join("prior")))?;
            print_json(&o.summary)?;
            Ok(outcome_code(&o))
        }
        Verb::Learned => {
            let o = experiment::run_learned_experiment(&cfg, Some(&cli.out.join("learned")), exec)?;
            print_json(&o.summary)?;
            Ok(outcome_code(&o))
        }
        Verb::Sweep => {
            let table = experiment::run_tradeoff_sweep(&cfg, Some(&cli.out.join("sweep")), exec)?;
            print_json(&table.rows)?;
            Ok(if table.rows.iter().any(|r| r.gamma.is_some()) { 0 } else { EXIT_INFEASIBLE })
        }
        Verb::Simulate { report } => {
            let report = read_report(report)?;
            let dir = cli.out.join("simulate");
            std::fs::create_dir_all(&dir)?;
            let (summary, traj) = experiment::simulate_with_truth(&cfg, &report.controller, exec)?;
            traj.write_csv(dir.join("trajectory.csv"))?;
            std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
            print_json(&summary)?;
            Ok(0)
        }
        Verb::ReplayCertificate { report } => {
            let report = read_report(report)?;
            if report.certificate.is_none() {
                eprintln!("report carries no certificate (status {:?})", report.status);
                return Ok(EXIT_INFEASIBLE);
            }
            let check = experiment::replay_report(&cfg, &report)?;
            print_json(&check)?;
            Ok(if check.passed(REPLAY_TOL) { 0 } else { EXIT_SOLVER })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_OTHER } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
