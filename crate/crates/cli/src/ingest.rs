//! Dataset and graph ingestion.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use otrf_core::graph::read_edge_list;
use otrf_core::GraphData;
use rand::seq::SliceRandom;
use rand::RngCore;

use crate::error::{CliError, CliResult};

/// Variance below which a column counts as constant and maps to zeros.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Raw numeric table: features `x` (rows are points) and the target column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub features: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.x.nrows()
    }
}

/// Read a CSV with a header row. Every bad row is reported with its line
/// number: wrong field count, unparsable or non-finite cells.
pub fn read_csv(reader: impl Read, target: &str) -> Result<Table, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(|e| format!("header: {e}"))?.iter().map(str::to_string).collect();
    let t_idx = header.iter().position(|h| h == target).ok_or_else(|| format!("no column named '{target}'"))?;
    if header.len() < 2 {
        return Err("need at least one feature column besides the target".into());
    }
    let mut problems = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            problems.push(format!("line {line}: expected {} fields, got {}", header.len(), rec.len()));
            continue;
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (col, cell) in rec.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => vals.push(v),
                Ok(v) => problems.push(format!("line {line}: non-finite value {v} in column '{}'", header[col])),
                Err(_) => problems.push(format!("line {line}: cannot parse '{cell}' in column '{}'", header[col])),
            }
        }
        if vals.len() == rec.len() {
            rows.push(vals);
        }
    }
    if !problems.is_empty() {
        return Err(problems.join("; "));
    }
    if rows.is_empty() {
        return Err("no data rows".into());
    }
    let features: Vec<String> = header.iter().enumerate().filter(|&(i, _)| i != t_idx).map(|(_, h)| h.clone()).collect();
    let x = DMatrix::from_fn(rows.len(), features.len(), |r, c| rows[r][if c < t_idx { c } else { c + 1 }]);
    let y = DVector::from_fn(rows.len(), |r, _| rows[r][t_idx]);
    Ok(Table { features, x, y })
}

pub fn ingest_csv(path: &Path, target: &str) -> CliResult<Table> {
    let input = |msg: String| CliError::Input { path: path.to_path_buf(), msg };
    let file = File::open(path).map_err(|e| input(e.to_string()))?;
    read_csv(BufReader::new(file), target).map_err(input)
}

pub fn ingest_graph(path: &Path) -> CliResult<GraphData> {
    let file = File::open(path).map_err(|e| CliError::Input { path: path.to_path_buf(), msg: e.to_string() })?;
    read_edge_list(BufReader::new(file)).map_err(|e| CliError::Input { path: path.to_path_buf(), msg: e.to_string() })
}

/// Per-column affine map fitted on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = DVector::from_fn(x.ncols(), |c, _| x.column(c).sum() / n);
        let scale = DVector::from_fn(x.ncols(), |c, _| {
            let var = x.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n;
            var.max(VARIANCE_FLOOR).sqrt()
        });
        Self { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| (x[(r, c)] - self.mean[c]) / self.scale[c])
    }
}

/// Shuffled train/test split, each capped at `cap` points, with features
/// and target standardized by training-split statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
}

pub fn split_table(t: &Table, train_fraction: f64, cap: usize, rng: &mut impl RngCore) -> CliResult<Split> {
    let n = t.rows();
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 || n_train == 0 {
        return Err(CliError::Config(format!("need at least 2 rows to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let train: Vec<usize> = idx[..n_train].iter().copied().take(cap).collect();
    let test: Vec<usize> = idx[n_train..].iter().copied().take(cap).collect();
    let pick = |rows: &[usize]| DMatrix::from_fn(rows.len(), t.x.ncols(), |r, c| t.x[(rows[r], c)]);
    let (x_train_raw, x_test_raw) = (pick(&train), pick(&test));
    let sx = Standardizer::fit(&x_train_raw);
    let y_train_raw = DMatrix::from_fn(train.len(), 1, |r, _| t.y[train[r]]);
    let y_test_raw = DMatrix::from_fn(test.len(), 1, |r, _| t.y[test[r]]);
    let sy = Standardizer::fit(&y_train_raw);
    Ok(Split {
        x_train: sx.apply(&x_train_raw),
        y_train: sy.apply(&y_train_raw).column(0).into_owned(),
        x_test: sx.apply(&x_test_raw),
        y_test: sy.apply(&y_test_raw).column(0).into_owned(),
    })
}
