//! Run configuration: one TOML file per run, every field optional except the
//! seed. Empty grids are filled with per-experiment defaults before
//! validation, and the resolved config is echoed next to the results.

use std::fmt;
use std::path::{Path, PathBuf};

use otrf_core::graph::KernelFamily;
use otrf_core::{CouplingSpec, GraphKernelSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RfBench,
    CopulaTrain,
    GrfBench,
    SigmaTrain,
    GpEval,
    PagerankBench,
    AttentionBench,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentKind::RfBench => "rf-bench",
            ExperimentKind::CopulaTrain => "copula-train",
            ExperimentKind::GrfBench => "grf-bench",
            ExperimentKind::SigmaTrain => "sigma-train",
            ExperimentKind::GpEval => "gp-eval",
            ExperimentKind::PagerankBench => "pagerank-bench",
            ExperimentKind::AttentionBench => "attention-bench",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV with a header row; synthetic regression data when absent.
    pub path: Option<PathBuf>,
    pub target: Option<String>,
    pub synthetic_points: usize,
    pub synthetic_dim: usize,
    pub noise: f64,
    pub train_fraction: f64,
    /// Cap on both the train and the test split.
    pub max_points: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { path: None, target: None, synthetic_points: 128, synthetic_dim: 8, noise: 0.1, train_fraction: 0.5, max_points: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Edge-list file; otherwise `count` Erdos-Renyi graphs.
    pub path: Option<PathBuf>,
    pub nodes: usize,
    pub edge_prob: f64,
    pub count: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { path: None, nodes: 100, edge_prob: 0.1, count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// Fixed Gaussian lengthscale; fitted by marginal likelihood (RFF) or
    /// set by the mean-pair-distance heuristic (RLF) when absent.
    pub lengthscale: Option<f64>,
    pub fit_steps: usize,
    pub fit_lr: f64,
    pub graph: GraphKernelSpec,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            lengthscale: None,
            fit_steps: 500,
            fit_lr: 0.02,
            graph: GraphKernelSpec { family: KernelFamily::RegularizedLaplacian { sigma: 1.0, degree: 2 }, normalized: true },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CopulaConfig {
    pub steps: usize,
    pub lr: f64,
    pub mc_samples: usize,
    pub smoothing_window: usize,
    /// Ensembles used for the orthogonal+PNC reference loss.
    pub reference_trials: usize,
}

impl Default for CopulaConfig {
    fn default() -> Self {
        Self { steps: 2000, lr: 0.05, mc_samples: 8, smoothing_window: 200, reference_trials: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaConfig {
    /// JSON list of trained couplings (as written by sigma-train); trained on
    /// the fly when absent.
    pub path: Option<PathBuf>,
    pub train_nodes: usize,
    pub train_edge_prob: f64,
    pub walks_per_quantile: usize,
    pub max_pairs: usize,
    /// Walks per (node, tile) for PageRank termination probabilities.
    pub samples: usize,
}

impl Default for SigmaConfig {
    fn default() -> Self {
        Self {
            path: None,
            train_nodes: 100,
            train_edge_prob: 0.1,
            walks_per_quantile: 100,
            max_pairs: otrf_core::matching::MAX_NODE_PAIRS,
            samples: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub tokens: usize,
    pub dim: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { tokens: 16, dim: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub trials: usize,
    pub splits: usize,
    pub couplings: Vec<String>,
    pub featurizers: Vec<String>,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    pub p_halt: Vec<f64>,
    pub data: DataConfig,
    pub graph: GraphConfig,
    pub kernel: KernelConfig,
    pub copula: CopulaConfig,
    pub sigma: SigmaConfig,
    pub attention: AttentionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: None,
            trials: 100,
            splits: 20,
            couplings: Vec::new(),
            featurizers: Vec::new(),
            m: Vec::new(),
            n: Vec::new(),
            p_halt: Vec::new(),
            data: DataConfig::default(),
            graph: GraphConfig::default(),
            kernel: KernelConfig::default(),
            copula: CopulaConfig::default(),
            sigma: SigmaConfig::default(),
            attention: AttentionConfig::default(),
        }
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Bind the config to `kind`, apply a seed override, fill empty grids
    /// with defaults and validate.
    pub fn resolve(mut self, kind: ExperimentKind, seed: Option<u64>) -> CliResult<Self> {
        if let Some(k) = self.experiment {
            if k != kind {
                return Err(CliError::Config(format!("config is for {k}, but {kind} was requested")));
            }
        }
        self.experiment = Some(kind);
        if seed.is_some() {
            self.seed = seed;
        }
        if self.seed.is_none() {
            return Err(CliError::Config("a seed is required (config `seed` or --seed)".into()));
        }
        let d = self.data.synthetic_dim;
        if self.couplings.is_empty() {
            self.couplings = match kind {
                ExperimentKind::RfBench | ExperimentKind::GpEval => strings(&["iid", "orthogonal", "orthogonal_pnc"]),
                ExperimentKind::CopulaTrain => strings(&["copula"]),
                ExperimentKind::GrfBench | ExperimentKind::PagerankBench => strings(&["iid", "antithetic", "sigma"]),
                ExperimentKind::SigmaTrain => strings(&["sigma"]),
                ExperimentKind::AttentionBench => strings(&["orthogonal", "orthogonal_pnc", "positive_monotone"]),
            };
        }
        if self.featurizers.is_empty() {
            self.featurizers = strings(&["rff", "rlf"]);
        }
        // With a CSV input the dimension is only known after loading; the
        // runner fills m then.
        if self.m.is_empty() {
            match kind {
                ExperimentKind::GrfBench | ExperimentKind::PagerankBench => self.m = vec![2],
                ExperimentKind::AttentionBench => self.m = vec![self.attention.dim],
                _ if self.data.path.is_none() => self.m = vec![d],
                _ => {}
            }
        }
        if self.n.is_empty() {
            self.n = match kind {
                ExperimentKind::PagerankBench => vec![10],
                _ => vec![30],
            };
        }
        if self.p_halt.is_empty() {
            self.p_halt = match kind {
                ExperimentKind::PagerankBench => vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
                _ => vec![0.1, 0.2, 0.3, 0.4, 0.5],
            };
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        if self.splits == 0 {
            return bad("splits must be positive".into());
        }
        if let Some(m) = self.m.iter().find(|&&m| m == 0) {
            return bad(format!("m grid entries must be positive, got {m}"));
        }
        if let Some(n) = self.n.iter().find(|&&n| n < 2) {
            return bad(format!("n grid entries must be >= 2, got {n}"));
        }
        if let Some(p) = self.p_halt.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return bad(format!("p_halt grid entries must lie in (0, 1), got {p}"));
        }
        for f in &self.featurizers {
            parse_featurizer(f)?;
        }
        let euclidean = matches!(
            self.experiment,
            Some(ExperimentKind::RfBench | ExperimentKind::GpEval | ExperimentKind::CopulaTrain | ExperimentKind::AttentionBench)
        );
        for c in &self.couplings {
            if euclidean {
                CouplingSpec::from_tag(c, 1).map_err(|e| CliError::Config(e.to_string()))?;
            } else if !matches!(c.as_str(), "iid" | "antithetic" | "sigma") {
                return bad(format!("unknown walk coupling '{c}' (expected iid, antithetic or sigma)"));
            }
        }
        let dc = &self.data;
        if dc.path.is_some() && dc.target.is_none() {
            return bad("data.path needs data.target".into());
        }
        if !(dc.train_fraction > 0.0 && dc.train_fraction < 1.0) {
            return bad(format!("data.train_fraction must lie in (0, 1), got {}", dc.train_fraction));
        }
        if dc.max_points == 0 || dc.max_points > otrf_core::gp::MAX_TRAIN {
            return bad(format!("data.max_points must lie in 1..={}", otrf_core::gp::MAX_TRAIN));
        }
        if dc.synthetic_points < 4 || dc.synthetic_dim == 0 {
            return bad("synthetic data needs at least 4 points and 1 dimension".into());
        }
        if !(dc.noise >= 0.0) {
            return bad("data.noise must be >= 0".into());
        }
        let gc = &self.graph;
        if gc.count == 0 || gc.nodes < 2 || !(gc.edge_prob > 0.0 && gc.edge_prob <= 1.0) {
            return bad("graph needs count >= 1, nodes >= 2 and edge_prob in (0, 1]".into());
        }
        GraphKernelSpec::new(self.kernel.graph.family, self.kernel.graph.normalized).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(l) = self.kernel.lengthscale {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("kernel.lengthscale must be positive, got {l}"));
            }
        }
        let cc = &self.copula;
        if cc.steps == 0 || cc.mc_samples == 0 || cc.reference_trials == 0 || cc.smoothing_window == 0 || !(cc.lr > 0.0) {
            return bad("copula settings must be positive".into());
        }
        let sc = &self.sigma;
        if sc.walks_per_quantile == 0 || sc.max_pairs == 0 || sc.samples == 0 || sc.train_nodes < 2 {
            return bad("sigma settings must be positive (train_nodes >= 2)".into());
        }
        if self.attention.tokens == 0 || self.attention.dim == 0 {
            return bad("attention needs tokens >= 1 and dim >= 1".into());
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("resolved config has a seed")
    }
}

pub fn parse_featurizer(s: &str) -> CliResult<otrf_core::Featurizer> {
    match s {
        "rff" => Ok(otrf_core::Featurizer::Rff),
        "rlf" => Ok(otrf_core::Featurizer::Rlf),
        other => Err(CliError::Config(format!("unknown featurizer '{other}' (expected rff or rlf)"))),
    }
}
