use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use otrf::{run_to_dir, ExperimentKind};

/// Run a random-feature coupling experiment and write summary.json,
/// trials.csv and config.echo into the output directory.
#[derive(Debug, Parser)]
#[command(name = "otrf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gram-matrix RMSE of RFF/RLF estimators per coupling.
    RfBench(RunArgs),
    /// Learn a Gaussian-copula norm coupling by gradient descent.
    CopulaTrain(RunArgs),
    /// Graph random feature kernel error per walk coupling.
    GrfBench(RunArgs),
    /// Learn sigma couplings on a training graph.
    SigmaTrain(RunArgs),
    /// GP posterior KL and test RMSE with approximate kernels.
    GpEval(RunArgs),
    /// Monte Carlo PageRank error per walk coupling.
    PagerankBench(RunArgs),
    /// Softmax-kernel attention MSE per coupling.
    AttentionBench(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML config; defaults apply to every missing field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::RfBench(a) => (ExperimentKind::RfBench, a),
            Command::CopulaTrain(a) => (ExperimentKind::CopulaTrain, a),
            Command::GrfBench(a) => (ExperimentKind::GrfBench, a),
            Command::SigmaTrain(a) => (ExperimentKind::SigmaTrain, a),
            Command::GpEval(a) => (ExperimentKind::GpEval, a),
            Command::PagerankBench(a) => (ExperimentKind::PagerankBench, a),
            Command::AttentionBench(a) => (ExperimentKind::AttentionBench, a),
        }
    }
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    match run_to_dir(kind, args.config.as_deref(), args.seed, args.threads, &args.out_dir) {
        Ok(report) => {
            println!("{kind}: {} result rows written to {}", report.results.len(), args.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
