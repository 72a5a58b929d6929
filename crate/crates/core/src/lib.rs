//! Optimal-transport couplings for random features.
//!
//! The crate builds random-feature estimators whose random "frequencies" are
//! drawn from a dependent ensemble rather than independently, and measures the
//! resulting variance reduction:
//!
//! * [`couplings`]: Euclidean frequency ensembles (i.i.d., Halton, orthogonal,
//!   pairwise norm-coupled, antithetic, positive monotone, and learned
//!   Gaussian-copula couplings).
//! * [`eucrf`]: random Fourier and random Laplace feature maps, the Gaussian
//!   kernel, transport cost series and attention estimation.
//! * [`gp`]: exact and feature-space Gaussian-process posteriors, marginal
//!   likelihood fitting and Gaussian KL divergence.
//! * [`graph`], [`grf`]: graph node kernels, random walks with coupled
//!   lengths, and graph random features.
//! * [`matching`]: Hungarian assignment, the quantile matching problem that
//!   defines sigma-couplings, Johnson-Lindenstrauss reduction and the
//!   random-projection quadratic matching solver.
//! * [`pagerank`]: exact and Monte Carlo PageRank with coupled walkers.
//!
//! All stochastic routines take an explicit RNG. Reproducible parallel work
//! derives one stream per task with [`rng::stream`].

pub mod couplings;
pub mod error;
pub mod eucrf;
pub mod gp;
pub mod graph;
pub mod grf;
pub mod matching;
pub mod mathcore;
pub mod pagerank;
pub mod rng;
pub mod stats;

pub use couplings::{CorrelationParams, CouplingSpec, FrequencyEnsemble};
pub use error::{Error, Result};
pub use eucrf::{FeatureMatrix, Featurizer, GaussianKernelParams};
pub use gp::GaussianPosterior;
pub use graph::{GraphData, GraphKernelSpec, SigmaCoupling, WalkRecord};
pub use grf::{GrfFeature, ModulationFn, QuantileProjection, WalkCoupling};
pub use matching::CostMatrix;
pub use mathcore::{ChiParams, GeometricParams, UnitInterval};
pub use pagerank::PageRankVector;
