//! Graph random features: importance-weighted random-walk prefix sums whose
//! inner products estimate a graph node kernel.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, GraphData, GraphKernelSpec, SigmaCoupling, WalkMode, WalkRecord};
use crate::mathcore::GeometricParams;
use crate::rng;

/// Default number of modulation coefficients.
pub const K_MAX: usize = 64;

static TRUNCATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of walks so far that were longer than their modulation function.
pub fn truncation_warnings() -> u64 {
    TRUNCATIONS.load(Ordering::Relaxed)
}

/// Coefficients `f(0..=K)` whose self-convolution gives the kernel's Taylor
/// coefficients in the normalized adjacency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationFn {
    coeffs: Vec<f64>,
}

impl ModulationFn {
    /// `f(k)`, zero beyond the stored range.
    pub fn at(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn max_order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Modulation function of a graph kernel to order `k_max`.
    pub fn for_kernel(spec: &GraphKernelSpec, k_max: usize) -> Result<Self> {
        modulation_from_coefficients(&graph::taylor_coefficients(spec, k_max)?, k_max)
    }

    /// `(f * f)(k)` for `k = 0..=K`.
    pub fn self_convolution(&self) -> Vec<f64> {
        let k = self.coeffs.len();
        (0..k).map(|t| (0..=t).map(|j| self.coeffs[j] * self.coeffs[t - j]).sum()).collect()
    }
}

/// Recursive square root of a power series: `f(0) = sqrt(alpha_0)`,
/// `f(k) = (alpha_k - sum_{j=1}^{k-1} f(j) f(k-j)) / (2 f(0))`.
pub fn modulation_from_coefficients(alpha: &[f64], k_max: usize) -> Result<ModulationFn> {
    let a0 = alpha.first().copied().unwrap_or(0.0);
    if !(a0 > 0.0) {
        return Err(Error::Domain(format!("modulation needs alpha_0 > 0, got {a0}")));
    }
    let mut f = vec![0.0; k_max + 1];
    f[0] = a0.sqrt();
    for k in 1..=k_max {
        let a = alpha.get(k).copied().unwrap_or(0.0);
        let conv: f64 = (1..k).map(|j| f[j] * f[k - j]).sum();
        f[k] = (a - conv) / (2.0 * f[0]);
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("modulation coefficient".into()));
    }
    Ok(ModulationFn { coeffs: f })
}

/// Sparse vector as sorted `(index, value)` pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVec {
    pub entries: Vec<(usize, f64)>,
}

impl SparseVec {
    fn from_map(map: BTreeMap<usize, f64>) -> Self {
        Self { entries: map.into_iter().collect() }
    }

    pub fn get(&self, i: usize) -> f64 {
        match self.entries.binary_search_by_key(&i, |e| e.0) {
            Ok(k) => self.entries[k].1,
            Err(_) => 0.0,
        }
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        let mut s = 0.0;
        while let (Some(x), Some(y)) = (a.peek(), b.peek()) {
            match x.0.cmp(&y.0) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    s += x.1 * y.1;
                    a.next();
                    b.next();
                }
            }
        }
        s
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for &(i, x) in &self.entries {
            v[i] = x;
        }
        v
    }
}

fn check_p_halt(p_halt: f64) -> Result<()> {
    if p_halt > 0.0 && p_halt < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("p_halt must lie in (0, 1), got {p_halt}")))
    }
}

fn accumulate_walk(w: &WalkRecord, g: &GraphData, f: &ModulationFn, p_halt: f64, scale: f64, acc: &mut BTreeMap<usize, f64>) {
    let len = w.len();
    let upto = len.min(f.max_order());
    if len > f.max_order() {
        TRUNCATIONS.fetch_add(1, Ordering::Relaxed);
    }
    let mut p = 1.0;
    for t in 0..=upto {
        if t > 0 {
            p *= (1.0 - p_halt) / g.neighbor_count(w.nodes[t - 1]) as f64;
        }
        let v = w.prefix_weights[t] * f.at(t) / p;
        *acc.entry(w.nodes[t]).or_insert(0.0) += scale * v;
    }
}

/// Projection `psi(w)`: every prefix of length `t` ending at `v_t` adds
/// `w~(prefix) f(t) / p(prefix)` to coordinate `v_t`, with
/// `p(prefix) = prod_{s<t} (1 - p_halt) / deg(v_s)`.
pub fn project_walk(w: &WalkRecord, g: &GraphData, f: &ModulationFn, p_halt: f64) -> Result<SparseVec> {
    check_p_halt(p_halt)?;
    let mut acc = BTreeMap::new();
    accumulate_walk(w, g, f, p_halt, 1.0, &mut acc);
    Ok(SparseVec::from_map(acc))
}

/// How the `m` walkers out of a node are coupled.
#[derive(Debug, Clone, PartialEq)]
pub enum WalkCoupling {
    Iid,
    AntitheticTermination,
    Sigma(SigmaCoupling),
}

impl WalkCoupling {
    pub fn tag(&self) -> &'static str {
        match self {
            WalkCoupling::Iid => "iid",
            WalkCoupling::AntitheticTermination => "antithetic",
            WalkCoupling::Sigma(_) => "sigma",
        }
    }

    fn is_paired(&self) -> bool {
        !matches!(self, WalkCoupling::Iid)
    }
}

/// Averaged projection of `m` walks out of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrfFeature {
    pub node: usize,
    pub values: SparseVec,
    pub m: usize,
    pub coupling: String,
}

impl GrfFeature {
    pub fn dot(&self, other: &GrfFeature) -> f64 {
        self.values.dot(&other.values)
    }
}

/// Walk lengths for the `m` walkers out of one node, or `None` entries for
/// walkers that should run in geometric mode.
fn walker_lengths(m: usize, coupling: &WalkCoupling, geom: GeometricParams, rng: &mut impl RngCore) -> Vec<Option<usize>> {
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

/// `phi(node) = (1/m) sum_k psi(w_k)`.
pub fn grf_features(
    g: &GraphData,
    node: usize,
    m: usize,
    coupling: &WalkCoupling,
    f: &ModulationFn,
    p_halt: f64,
    rng: &mut impl RngCore,
) -> Result<GrfFeature> {
    check_p_halt(p_halt)?;
    if node >= g.n() {
        return Err(Error::InvalidRequest(format!("node {node} out of range")));
    }
    if m == 0 || (coupling.is_paired() && m % 2 != 0) {
        return Err(Error::InvalidRequest(format!("{} coupling needs a positive{} walker count, got {m}", coupling.tag(), if coupling.is_paired() { " even" } else { "" })));
    }
    let geom = GeometricParams::new(p_halt)?;
    let mut acc = BTreeMap::new();
    let scale = 1.0 / m as f64;
    for len in walker_lengths(m, coupling, geom, rng) {
        let mode = match len {
            Some(l) => WalkMode::Fixed(l),
            None => WalkMode::Geometric(geom),
        };
        let w = graph::simulate_walk(g, node, mode, rng);
        accumulate_walk(&w, g, f, p_halt, scale, &mut acc);
    }
    Ok(GrfFeature { node, values: SparseVec::from_map(acc), m, coupling: coupling.tag().to_string() })
}

/// Features of every node as dense rows; node `i` uses stream `(seed, i)`.
pub fn grf_feature_matrix(
    g: &GraphData,
    m: usize,
    coupling: &WalkCoupling,
    f: &ModulationFn,
    p_halt: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = g.n();
    let rows: Vec<GrfFeature> = (0..n)
        .into_par_iter()
        .map(|i| grf_features(g, i, m, coupling, f, p_halt, &mut rng::stream(seed, i as u64)))
        .collect::<Result<_>>()?;
    let mut phi = DMatrix::zeros(n, n);
    for r in rows {
        for (j, v) in r.values.entries {
            phi[(r.node, j)] = v;
        }
    }
    Ok(phi)
}

/// Gram estimate `Phi Phi^T` from one feature set.
pub fn grf_gram_estimate(g: &GraphData, m: usize, coupling: &WalkCoupling, f: &ModulationFn, p_halt: f64, seed: u64) -> Result<DMatrix<f64>> {
    let phi = grf_feature_matrix(g, m, coupling, f, p_halt, seed)?;
    Ok(&phi * phi.transpose())
}

/// Gram estimate from two independent feature sets, symmetrized. Unbiased
/// on the diagonal as well.
pub fn grf_gram_two_sets(g: &GraphData, m: usize, coupling: &WalkCoupling, f: &ModulationFn, p_halt: f64, seed: u64) -> Result<DMatrix<f64>> {
    let a = grf_feature_matrix(g, m, coupling, f, p_halt, rng::splitmix64(seed ^ 0xA5A5))?;
    let b = grf_feature_matrix(g, m, coupling, f, p_halt, rng::splitmix64(seed ^ 0x5A5A))?;
    let k = &a * b.transpose();
    Ok((&k + k.transpose()) * 0.5)
}

/// Coordinate-list CSV `node,coord,value`.
pub fn features_to_csv(features: &[GrfFeature]) -> String {
    let mut s = String::from("node,coord,value\n");
    for feat in features {
        for &(j, v) in &feat.values.entries {
            let _ = writeln!(s, "{},{j},{v}", feat.node);
        }
    }
    s
}

/// Tile-averaged projections `psi^(q)` for every node: `psi[i]` is `n x N`
/// with row `q` the mean projection of walks whose length comes from a
/// uniform in tile `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileProjection {
    n: usize,
    p_halt: f64,
    psi: Vec<DMatrix<f64>>,
}

impl QuantileProjection {
    pub fn from_parts(p_halt: f64, psi: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = psi.first().ok_or_else(|| Error::InvalidRequest("no nodes".into()))?;
        let (n, cols) = first.shape();
        if psi.iter().any(|m| m.shape() != (n, cols)) {
            return Err(Error::InvalidRequest("inconsistent quantile projection shapes".into()));
        }
        if psi.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("quantile projection".into()));
        }
        Ok(Self { n, p_halt, psi })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p_halt(&self) -> f64 {
        self.p_halt
    }

    pub fn nodes(&self) -> usize {
        self.psi.len()
    }

    /// `n x N` matrix for node `i`.
    pub fn node(&self, i: usize) -> &DMatrix<f64> {
        &self.psi[i]
    }
}

/// Monte Carlo estimate of the tile-averaged projections; node `i` uses
/// stream `(seed, i)`.
pub fn estimate_quantile_projections(
    g: &GraphData,
    n: usize,
    p_halt: f64,
    f: &ModulationFn,
    walks_per_quantile: usize,
    seed: u64,
) -> Result<QuantileProjection> {
    check_p_halt(p_halt)?;
    if n == 0 || walks_per_quantile == 0 {
        return Err(Error::InvalidRequest("need n >= 1 and walks_per_quantile >= 1".into()));
    }
    let geom = GeometricParams::new(p_halt)?;
    let psi: Vec<DMatrix<f64>> = (0..g.n())
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let mut out = DMatrix::zeros(n, g.n());
            let scale = 1.0 / walks_per_quantile as f64;
            for q in 0..n {
                let mut acc = BTreeMap::new();
                for _ in 0..walks_per_quantile {
                    let l = graph::sample_tile_length(q, n, geom, &mut r);
                    let w = graph::simulate_walk(g, i, WalkMode::Fixed(l), &mut r);
                    accumulate_walk(&w, g, f, p_halt, scale, &mut acc);
                }
                for (j, v) in acc {
                    out[(q, j)] = v;
                }
            }
            out
        })
        .collect();
    QuantileProjection::from_parts(p_halt, psi)
}
