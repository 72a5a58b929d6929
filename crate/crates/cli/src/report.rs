//! Report files: `summary.json`, `trials.csv`, `config.echo`, plus any
//! experiment-specific artifacts.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{CliError, CliResult};

pub type Row = Map<String, Value>;

/// Tidy per-trial table; every row starts with the run seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TrialTable {
    pub fn new(columns: &[&str]) -> Self {
        Self { header: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// One object per (grid point, coupling).
    pub results: Vec<Row>,
    pub details: Row,
    pub trials: TrialTable,
    /// Extra `(file name, contents)` pairs written next to the summary.
    pub artifacts: Vec<(String, String)>,
}

impl Report {
    pub fn new(experiment: ExperimentKind, seed: u64, trials: TrialTable) -> Self {
        Self { experiment, seed, results: Vec::new(), details: Map::new(), trials, artifacts: Vec::new() }
    }

    pub fn summary_json(&self) -> Value {
        json!({
            "experiment": self.experiment.to_string(),
            "seed": self.seed,
            "error_bars": "standard errors; two_se columns give 2 x SE",
            "results": self.results,
            "details": self.details,
        })
    }

    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> CliResult<()> {
        fs::create_dir_all(dir)?;
        let summary = serde_json::to_string_pretty(&self.summary_json()).expect("summary is valid JSON");
        fs::write(dir.join("summary.json"), summary + "\n")?;
        fs::write(dir.join("trials.csv"), self.trials.to_csv()?)?;
        fs::write(dir.join("config.echo"), config.to_toml())?;
        for (name, body) in &self.artifacts {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

/// Shorthand for building result rows.
#[macro_export]
macro_rules! row {
    ($($k:expr => $v:expr),* $(,)?) => {{
        let mut m = $crate::report::Row::new();
        $( m.insert($k.to_string(), serde_json::json!($v)); )*
        m
    }};
}
