use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qip::commands::{apply_overrides, cmd_cluster, cmd_export_features, cmd_prop1, cmd_sweep_lambda, cmd_train};
use qip::config::RunConfig;
use qip::Result;

#[derive(Parser)]
#[command(name = "qip", version, about = "Quantum information preserving training and clustering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Gap statistics over random encoded state pairs.
    Prop1(Common),
    /// Train the baseline and the configured loss factor per seed.
    Train(Common),
    /// Cluster the held-out split in classical and quantum space.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and cluster over the loss-factor grid.
    SweepLambda(Common),
    /// Write classical and quantum features of both splits.
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load(c: &Common) -> Result<RunConfig> {
    let cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(cfg, c.seed, c.out.clone())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prop1(c) => {
            let cfg = load(&c)?;
            for e in cmd_prop1(&cfg)? {
                println!(
                    "{} {} n={} gap_fraction={:.4} max_residual={:.3e}",
                    e.encoder, e.observable, e.n_qubits, e.gap_fraction, e.max_residual
                );
            }
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            for t in cmd_train(&cfg)? {
                println!("seed {} lambda {}: {}", t.seed, t.lambda, t.checkpoint.display());
            }
        }
        Command::Cluster { common, checkpoint } => {
            let cfg = load(&common)?;
            let m = cmd_cluster(&cfg, checkpoint.as_deref())?;
            for r in &m.runs {
                println!(
                    "seed {} lambda {}: classical F_P {:.4} F_B {:.4}, quantum F_P {:.4} F_B {:.4}",
                    r.seed,
                    r.lambda.map_or_else(|| "-".to_string(), |l| l.to_string()),
                    r.report.classical.scores.f_pairwise,
                    r.report.classical.scores.f_bcubed,
                    r.report.primary_quantum().f_pairwise,
                    r.report.primary_quantum().f_bcubed,
                );
            }
        }
        Command::SweepLambda(c) => {
            let cfg = load(&c)?;
            for r in cmd_sweep_lambda(&cfg)?.iter().filter(|r| r.seed.is_none()) {
                println!("lambda {}: quantum F_P {:.4}, classical F_P {:.4}", r.lambda, r.quantum_f_pairwise, r.classical_f_pairwise);
            }
        }
        Command::ExportFeatures { common, checkpoint } => {
            let cfg = load(&common)?;
            let out = cmd_export_features(&cfg, checkpoint.as_deref())?;
            println!("{}", out.csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qip: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
