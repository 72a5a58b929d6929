//! Command-line experiment driver for the random-feature coupling library.

pub mod config;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod report;

use std::path::Path;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CliError, CliResult};
pub use report::Report;

/// Resolve a config for `kind`, run it on a pool of `threads` workers
/// (rayon's default when `None`) and return the report with the final
/// config.
pub fn execute(kind: ExperimentKind, config: ExperimentConfig, seed: Option<u64>, threads: Option<usize>) -> CliResult<(Report, ExperimentConfig)> {
    let cfg = config.resolve(kind, seed)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| experiments::run(&cfg))
}

/// `execute` followed by writing every output file into `out_dir`.
pub fn run_to_dir(
    kind: ExperimentKind,
    config_path: Option<&Path>,
    seed: Option<u64>,
    threads: Option<usize>,
    out_dir: &Path,
) -> CliResult<Report> {
    let config = match config_path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let (report, cfg) = execute(kind, config, seed, threads)?;
    report.write(out_dir, &cfg)?;
    Ok(report)
}
