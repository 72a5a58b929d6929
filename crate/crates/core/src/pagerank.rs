//! PageRank: exact power iteration and Monte Carlo estimation from
//! terminating random walks, with optional walker couplings.

use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, GraphData, SigmaCoupling};
use crate::grf::WalkCoupling;
use crate::matching::{self, CostMatrix};
use crate::mathcore::GeometricParams;
use crate::rng;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 100_000;

/// Probability vector over nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRankVector(Vec<f64>);

impl PageRankVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("PageRank entries must be finite and nonnegative".into()));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("PageRank entries sum to {s}, not 1")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn l2_distance(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// Terminal-node counts of a Monte Carlo run; `counts` sums to `total`
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRankEstimate {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl PageRankEstimate {
    /// `counts[i] / total`.
    pub fn values(&self) -> Vec<f64> {
        let t = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Total probability mass, computed from the integer counts.
    pub fn mass(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 / self.total as f64
    }

    pub fn l2_error(&self, exact: &PageRankVector) -> f64 {
        exact.l2_distance(&self.values())
    }
}

/// Transition matrix of the uniform-neighbour walk, row-stochastic.
pub fn transition_matrix(g: &GraphData) -> DMatrix<f64> {
    let n = g.n();
    let mut p = DMatrix::zeros(n, n);
    for u in 0..n {
        let k = g.neighbor_count(u) as f64;
        for &(v, _) in g.neighbors(u) {
            p[(u, v)] += 1.0 / k;
        }
    }
    p
}

/// Stationary law of `(1 - p) P + (p / N) E` by power iteration.
pub fn exact_pagerank(g: &GraphData, p_halt: f64) -> Result<PageRankVector> {
    let geom = GeometricParams::new(p_halt)?;
    let p = geom.p_halt();
    let n = g.n();
    let pt = transition_matrix(g).transpose();
    let teleport = p / n as f64;
    let mut rho = DVector::from_element(n, 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let mut next = &pt * &rho * (1.0 - p);
        next.add_scalar_mut(teleport);
        let s = next.sum();
        next /= s;
        residual = (&next - &rho).abs().sum();
        rho = next;
        if residual < POWER_TOL {
            return PageRankVector::new(rho.iter().copied().collect());
        }
    }
    Err(Error::NotConverged { iterations: POWER_MAX_ITERS, residual })
}

fn walk_end(g: &GraphData, start: usize, len: Option<usize>, geom: GeometricParams, rng: &mut impl RngCore) -> usize {
    let mut cur = start;
    let mut steps = 0usize;
    loop {
        let go = match len {
            Some(l) => steps < l,
            None => rng.random::<f64>() >= geom.p_halt(),
        };
        if !go {
            return cur;
        }
        let k = rng.random_range(0..g.neighbor_count(cur));
        cur = g.neighbors(cur)[k].0;
        steps += 1;
    }
}

fn lengths_for(m: usize, coupling: &WalkCoupling, geom: GeometricParams, rng: &mut impl RngCore) -> Vec<Option<usize>> {
    match coupling {
        WalkCoupling::Iid => vec![None; m],
        WalkCoupling::AntitheticTermination => (0..m / 2)
            .flat_map(|_| {
                let (a, b) = graph::antithetic_lengths(geom, rng);
                [Some(a), Some(b)]
            })
            .collect(),
        WalkCoupling::Sigma(c) => {
            let c = c.with_geom(geom);
            (0..m / 2)
                .flat_map(|_| {
                    let (a, b) = graph::sample_coupled_lengths(&c, rng);
                    [Some(a), Some(b)]
                })
                .collect()
        }
    }
}

/// Monte Carlo PageRank: `m` walks out of every node, counting where they
/// terminate. Node `j` draws from stream `(seed, j)`.
pub fn mc_pagerank(g: &GraphData, p_halt: f64, m: usize, coupling: &WalkCoupling, seed: u64) -> Result<PageRankEstimate> {
    let geom = GeometricParams::new(p_halt)?;
    let paired = !matches!(coupling, WalkCoupling::Iid);
    if m == 0 || (paired && m % 2 != 0) {
        return Err(Error::InvalidRequest(format!("{} coupling cannot use m = {m}", coupling.tag())));
    }
    let n = g.n();
    let ends: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(seed, j as u64);
            lengths_for(m, coupling, geom, &mut r).into_iter().map(|l| walk_end(g, j, l, geom, &mut r)).collect()
        })
        .collect();
    let mut counts = vec![0u64; n];
    for e in ends.iter().flatten() {
        counts[*e] += 1;
    }
    Ok(PageRankEstimate { counts, total: (n * m) as u64 })
}

/// Which target nodes enter the sigma cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    /// Average the cost over every target node.
    Average,
    Node(usize),
}

/// Estimated `P[walk from j with length in tile q ends at i]`: one `n x N`
/// matrix per start node `j`.
pub fn tile_termination_probabilities(g: &GraphData, p_halt: f64, n: usize, samples: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    let geom = GeometricParams::new(p_halt)?;
    if n == 0 || samples == 0 {
        return Err(Error::InvalidRequest("need n >= 1 and samples >= 1".into()));
    }
    Ok((0..g.n())
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(seed, j as u64);
            let mut out = DMatrix::zeros(n, g.n());
            let w = 1.0 / samples as f64;
            for q in 0..n {
                for _ in 0..samples {
                    let l = graph::sample_tile_length(q, n, geom, &mut r);
                    out[(q, walk_end(g, j, Some(l), geom, &mut r))] += w;
                }
            }
            out
        })
        .collect())
}

/// `C[q, q'] = sum_j P_j[q][i] P_j[q'][i]`, for one target `i` or averaged
/// over all targets.
pub fn pagerank_sigma_cost(probs: &[DMatrix<f64>], policy: TargetPolicy) -> Result<CostMatrix> {
    let first = probs.first().ok_or_else(|| Error::InvalidRequest("no start nodes".into()))?;
    let (n, nodes) = first.shape();
    let mut c = DMatrix::zeros(n, n);
    match policy {
        TargetPolicy::Average => {
            for p in probs {
                c += p * p.transpose();
            }
            c /= nodes as f64;
        }
        TargetPolicy::Node(i) => {
            if i >= nodes {
                return Err(Error::InvalidRequest(format!("target node {i} out of range")));
            }
            for p in probs {
                let col = p.column(i);
                c += col * col.transpose();
            }
        }
    }
    CostMatrix::new(c)
}

/// Learn a sigma coupling for PageRank walkers.
pub fn solve_pagerank_sigma(
    g: &GraphData,
    p_halt: f64,
    n: usize,
    policy: TargetPolicy,
    samples: usize,
    rng: &mut impl RngCore,
) -> Result<SigmaCoupling> {
    if n < 2 {
        return Err(Error::InvalidRequest(format!("sigma coupling needs n >= 2, got {n}")));
    }
    let probs = tile_termination_probabilities(g, p_halt, n, samples, rng.next_u64())?;
    let c = pagerank_sigma_cost(&probs, policy)?;
    let (perm, _) = matching::hungarian(&c);
    SigmaCoupling::new(perm, GeometricParams::new(p_halt)?)
}

/// One CSV row of a PageRank benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRankRow {
    pub p_halt: f64,
    pub coupling: String,
    pub m: usize,
    pub l2_error: f64,
    pub seed: u64,
}
