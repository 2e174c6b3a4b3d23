//! Command-line front end for the adaptation pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use picl_core::commands;
use picl_core::error::PiclError;
use picl_core::RunConfig;

#[derive(Parser)]
#[command(
    name = "picl",
    about = "Prototype/instance contrastive adaptation of embedding extractors on synthetic domain-shifted data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Path to the key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and trial lists.
    Generate,
    /// Pretrain the encoder on the labeled source domain.
    Pretrain,
    /// Adapt the pretrained encoder to the unlabeled target domain.
    Adapt,
    /// Score trials and report EER / minDCF for the configured checkpoint.
    Evaluate,
    /// Run the momentum/lambda ablation grid.
    Sweep,
}

fn load_config(cli: &Cli) -> Result<RunConfig, PiclError> {
    match &cli.config {
        Some(path) => RunConfig::load(path, cli.seed, cli.out.clone()),
        None => {
            // No file: defaults only; --seed must supply the seed.
            RunConfig::from_str_with_overrides("", cli.seed, cli.out.clone())
        }
    }
}

fn run(cli: &Cli) -> Result<(), PiclError> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Generate => {
            let s = commands::cmd_generate(&cfg)?;
            println!(
                "generated {} source / {} target utterances, {} / {} trials into {}",
                s.n_source,
                s.n_target,
                s.n_source_trials,
                s.n_target_trials,
                cfg.out_dir.display()
            );
        }
        Command::Pretrain => {
            let reports = commands::cmd_pretrain(&cfg)?;
            println!(
                "pretrained {} epochs; final l_s={:.6}; wrote {}",
                reports.len(),
                reports.last().map_or(f64::NAN, |r| r.mean_l_s),
                cfg.out_dir.join(commands::PRETRAINED_CKPT).display()
            );
        }
        Command::Adapt => {
            let reports = commands::cmd_adapt(&cfg)?;
            println!(
                "adapted {} epochs; final total={:.6}; wrote {}",
                reports.len(),
                reports.last().map_or(f64::NAN, |r| r.mean_total),
                cfg.out_dir.join(commands::ADAPTED_CKPT).display()
            );
        }
        Command::Evaluate => {
            let summary = commands::cmd_evaluate(&cfg)?;
            println!("checkpoint: {}", summary.checkpoint.display());
            print!("{}", summary.metric_lines());
            print!("{}", summary.table());
        }
        Command::Sweep => {
            let rows = commands::cmd_sweep(&cfg)?;
            println!("m,lambda,eer_pct,min_dcf");
            for r in &rows {
                println!(
                    "{},{},{:.4},{:.4}",
                    r.momentum,
                    r.lambda,
                    r.target_eer * 100.0,
                    r.target_min_dcf
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ PiclError::Divergence(_)) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
