//! Assignment solvers and optimization of walk-length permutation couplings.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphData, SigmaCoupling};
use crate::grf::{self, ModulationFn, QuantileProjection};
use crate::mathcore::GeometricParams;

/// Largest number of node pairs averaged into a sigma cost matrix.
pub const MAX_NODE_PAIRS: usize = 2000;

/// JLT constant `c` in `r = ceil(c ln n / eps^2)`.
pub const JLT_C: f64 = 8.0;

/// Square matrix of finite assignment costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(DMatrix<f64>);

impl CostMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidRequest(format!("cost matrix must be square, got {}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost matrix entry".into()));
        }
        Ok(Self(m))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `sum_q C[q, perm[q]]`.
    pub fn assignment_cost(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(q, &p)| self.0[(q, p)]).sum()
    }
}

/// Minimum-cost perfect matching (row `q` is assigned column `perm[q]`).
///
/// Shortest augmenting paths with potentials, rows inserted in index order;
/// the result depends only on the input.
pub fn hungarian(c: &CostMatrix) -> (Vec<usize>, f64) {
    let n = c.n();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let a = &c.0;
    // 1-indexed arrays, column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    let cost = c.assignment_cost(&perm);
    (perm, cost)
}

/// `C[q, q'] = [(psi_i(q) + psi_i(q'))^T (psi_j(q) + psi_j(q'))]^2` for
/// `n x N` matrices whose rows are the tile projections of nodes `i`, `j`.
pub fn build_sigma_cost_matrix(psi_i: &DMatrix<f64>, psi_j: &DMatrix<f64>) -> Result<CostMatrix> {
    if psi_i.shape() != psi_j.shape() {
        return Err(Error::DimensionMismatch { expected: psi_i.nrows() * psi_i.ncols(), got: psi_j.nrows() * psi_j.ncols() });
    }
    let n = psi_i.nrows();
    let mut c = DMatrix::zeros(n, n);
    add_sigma_cost(&(psi_i * psi_j.transpose()), 1.0, &mut c);
    CostMatrix::new(c)
}

fn add_sigma_cost(gm: &DMatrix<f64>, weight: f64, out: &mut DMatrix<f64>) {
    let n = gm.nrows();
    for q in 0..n {
        for r in 0..n {
            let s = gm[(q, q)] + gm[(q, r)] + gm[(r, q)] + gm[(r, r)];
            out[(q, r)] += weight * s * s;
        }
    }
}

/// Node pairs `(i, j)` over which the cost is averaged: all ordered pairs,
/// or a uniform subsample of [`MAX_NODE_PAIRS`].
pub fn node_pairs(nodes: usize, max_pairs: usize, rng: &mut impl RngCore) -> Vec<(usize, usize)> {
    let total = nodes * nodes;
    if total <= max_pairs {
        (0..total).map(|k| (k / nodes, k % nodes)).collect()
    } else {
        let mut idx = sample_indices(rng, total, max_pairs).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| (k / nodes, k % nodes)).collect()
    }
}

/// Cost matrix averaged over node pairs.
pub fn averaged_sigma_cost(qp: &QuantileProjection, pairs: &[(usize, usize)]) -> Result<CostMatrix> {
    if pairs.is_empty() {
        return Err(Error::InvalidRequest("no node pairs".into()));
    }
    let n = qp.n();
    let w = 1.0 / pairs.len() as f64;
    let mut c = DMatrix::zeros(n, n);
    for &(i, j) in pairs {
        add_sigma_cost(&(qp.node(i) * qp.node(j).transpose()), w, &mut c);
    }
    CostMatrix::new(c)
}

/// Full quadratic objective
/// `sum_{q1,q2} [(psi_i(q1) + psi_i(s(q1)))^T (psi_j(q2) + psi_j(s(q2)))]^2`.
pub fn full_sigma_objective(psi_i: &DMatrix<f64>, psi_j: &DMatrix<f64>, perm: &[usize]) -> f64 {
    let gm = psi_i * psi_j.transpose();
    let n = gm.nrows();
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            let s = gm[(a, b)] + gm[(a, perm[b])] + gm[(perm[a], b)] + gm[(perm[a], perm[b])];
            total += s * s;
        }
    }
    total
}

/// Sampling settings for sigma-coupling training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaTrainConfig {
    pub walks_per_quantile: usize,
    pub max_pairs: usize,
}

impl Default for SigmaTrainConfig {
    fn default() -> Self {
        Self { walks_per_quantile: 100, max_pairs: MAX_NODE_PAIRS }
    }
}

/// Learn a sigma coupling of order `n` on a training graph: estimate tile
/// projections, average the diagonal cost over node pairs, solve the
/// assignment.
pub fn solve_sigma_coupling(
    g: &GraphData,
    p_halt: f64,
    n: usize,
    f: &ModulationFn,
    cfg: &SigmaTrainConfig,
    rng: &mut impl RngCore,
) -> Result<SigmaCoupling> {
    if n < 2 {
        return Err(Error::InvalidRequest(format!("sigma coupling needs n >= 2, got {n}")));
    }
    let seed = rng.next_u64();
    let qp = grf::estimate_quantile_projections(g, n, p_halt, f, cfg.walks_per_quantile, seed)?;
    let pairs = node_pairs(g.n(), cfg.max_pairs, rng);
    let c = averaged_sigma_cost(&qp, &pairs)?;
    let (perm, _) = hungarian(&c);
    SigmaCoupling::new(perm, GeometricParams::new(p_halt)?)
}

/// `r = ceil(8 ln n / eps^2)`, at least 1.
pub fn jlt_dim(n: usize, eps: f64) -> usize {
    ((JLT_C * (n.max(2) as f64).ln() / (eps * eps)).ceil() as usize).max(1)
}

/// Gaussian projection `u -> G u / sqrt(r)` with one `G` shared by all inputs.
pub fn jlt_reduce(vectors: &[DVector<f64>], r: usize, rng: &mut impl RngCore) -> Result<Vec<DVector<f64>>> {
    if r == 0 {
        return Err(Error::InvalidRequest("JLT target dimension must be >= 1".into()));
    }
    let Some(first) = vectors.first() else { return Ok(Vec::new()) };
    let dim = first.len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
    }
    let scale = 1.0 / (r as f64).sqrt();
    let g = DMatrix::<f64>::from_fn(r, dim, |_, _| StandardNormal.sample(rng)) * scale;
    Ok(vectors.iter().map(|v| &g * v).collect())
}

/// `sum_{a,b} (s_a^T s_b)^2` with `s_a = v_a + v_perm(a)`; the squared norm of
/// the summed outer-product vectors.
pub fn quadratic_objective(vs: &[DVector<f64>], perm: &[usize]) -> f64 {
    let s: Vec<DVector<f64>> = perm.iter().enumerate().map(|(a, &b)| &vs[a] + &vs[b]).collect();
    let mut total = 0.0;
    for a in &s {
        for b in &s {
            total += a.dot(b).powi(2);
        }
    }
    total
}

/// Best-of-`k` random projection solver for the self-pair quadratic
/// matching. Iteration 0 is the diagonal-restricted assignment; each further
/// iteration projects the outer-product vectors onto a Gaussian direction and
/// solves the resulting linear assignment.
pub fn quadratic_matching_random_projection(vs: &[DVector<f64>], k_iters: usize, rng: &mut impl RngCore) -> Result<Vec<usize>> {
    let n = vs.len();
    if n <= 1 {
        return Ok((0..n).collect());
    }
    let dim = vs[0].len();
    if let Some(v) = vs.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
    }
    let sums: Vec<Vec<DVector<f64>>> = (0..n).map(|a| (0..n).map(|b| &vs[a] + &vs[b]).collect()).collect();
    let diag = CostMatrix::new(DMatrix::from_fn(n, n, |a, b| sums[a][b].norm_squared().powi(2)))?;
    let (mut best, _) = hungarian(&diag);
    let mut best_obj = quadratic_objective(vs, &best);
    for _ in 0..k_iters.saturating_sub(1) {
        // u_e^T g = s^T G s for G the reshaped Gaussian vector.
        let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
        let w = DMatrix::from_fn(n, n, |a, b| {
            let s = &sums[a][b];
            (s.transpose() * &g * s)[(0, 0)]
        });
        let (perm, _) = hungarian(&CostMatrix::new(w)?);
        let obj = quadratic_objective(vs, &perm);
        if obj < best_obj {
            best_obj = obj;
            best = perm;
        }
    }
    Ok(best)
}

/// All permutations of `0..n` (Heap's algorithm); for exhaustive oracles.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}
