//! Command-line harness: run single arms, arm matrices, gradient checks,
//! and reporting over finished runs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vflpriv::error::Error;
use vflpriv::exp::{self, ArmKind, ExperimentConfig};
use vflpriv::nn::gradcheck::run_grid;

#[derive(Parser)]
#[command(name = "vflpriv", about = "Vertical federated learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment arm end-to-end.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several arms off one base config and emit the comparison plots.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated arm list from {baseline, naive, basic, fbs}.
        #[arg(long, default_value = "baseline,naive,basic,fbs")]
        arms: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify backprop against central finite differences on a randomized
    /// architecture grid.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// Rebuild plot data from a directory of finished runs.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn out_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config { .. }) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cmd: Command) -> vflpriv::Result<()> {
    match cmd {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::parse(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let dir = out_dir(&cfg, out, "out/run");
            let outcome = exp::run_experiment(&cfg, &dir)?;
            println!(
                "run complete: {} epochs, final accuracy {:.4}{} -> {}",
                outcome.rows.len(),
                outcome.summary.final_accuracy,
                outcome
                    .summary
                    .min_privacy
                    .map(|p| format!(", min privacy {p:.4}"))
                    .unwrap_or_default(),
                dir.display()
            );
            Ok(())
        }
        Command::Matrix {
            config,
            arms,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::parse(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let arms: Vec<ArmKind> = arms
                .split(',')
                .map(|s| ArmKind::parse(s.trim()))
                .collect::<vflpriv::Result<_>>()?;
            let dir = out_dir(&cfg, out, "out/matrix");
            let outcomes = exp::run_matrix(&cfg, &arms, &dir)?;
            for (arm, outcome) in &outcomes {
                println!(
                    "{:<9} accuracy {:.4}{}{}",
                    arm.name(),
                    outcome.summary.final_accuracy,
                    outcome
                        .summary
                        .min_privacy
                        .map(|p| format!("  min privacy {p:.4}"))
                        .unwrap_or_default(),
                    outcome
                        .summary
                        .accuracy_drop_vs_baseline
                        .map(|d| format!("  drop {d:+.4}"))
                        .unwrap_or_default(),
                );
            }
            let runs = exp::load_runs(&dir)?;
            exp::emit_plot_data(&runs, &dir)?;
            println!("plot data -> {}", dir.display());
            Ok(())
        }
        Command::Gradcheck { seed, count } => {
            let cases = run_grid(seed, count, 1e-5)?;
            let mut worst = 0.0f64;
            for (i, case) in cases.iter().enumerate() {
                println!(
                    "case {:>2}: loss {:<4} depth {:<2} max rel err {:.3e}",
                    i,
                    case.loss,
                    case.specs
                        .iter()
                        .filter(|s| matches!(s, vflpriv::nn::LayerSpec::Linear(_, _)))
                        .count(),
                    case.max_rel_err
                );
                worst = worst.max(case.max_rel_err);
            }
            println!("worst relative error: {worst:.3e}");
            if worst < 1e-4 {
                Ok(())
            } else {
                Err(Error::Defense(format!(
                    "gradient check failed: worst relative error {worst:.3e} >= 1e-4"
                )))
            }
        }
        Command::Report { runs, out } => {
            let loaded = exp::load_runs(&runs)?;
            exp::emit_plot_data(&loaded, &out)?;
            println!("report over {} runs -> {}", loaded.len(), out.display());
            Ok(())
        }
    }
}
