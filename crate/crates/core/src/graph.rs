//! Undirected weighted graphs, graph node kernels and random walks.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{self, GeometricParams};

/// Largest graph whose dense kernel may be exported as CSV.
pub const MAX_CSV_NODES: usize = 2000;

/// Undirected weighted graph without isolated nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphData {
    n: usize,
    /// `adj[u]` holds `(v, W_uv)`, sorted by `v`.
    adj: Vec<Vec<(usize, f64)>>,
    /// `norm_w[u][k]` is the normalized adjacency entry for `adj[u][k]`.
    norm_w: Vec<Vec<f64>>,
    degree: Vec<f64>,
}

impl GraphData {
    /// Build from an undirected edge list `(u, v, weight)`; each edge listed once.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Graph("graph has no nodes".into()));
        }
        let mut adj = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::Graph(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Graph(format!("edge ({u}, {v}) has non-positive weight {w}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::Graph(format!("duplicate edge ({u}, {v})")));
            }
            adj[u].push((v, w));
            if u != v {
                adj[v].push((u, w));
            }
        }
        for list in &mut adj {
            list.sort_by_key(|e| e.0);
        }
        let degree: Vec<f64> = adj.iter().map(|l| l.iter().map(|e| e.1).sum()).collect();
        if let Some(i) = degree.iter().position(|&d| d <= 0.0) {
            return Err(Error::Graph(format!("node {i} is isolated")));
        }
        let norm_w = adj
            .iter()
            .enumerate()
            .map(|(u, l)| l.iter().map(|&(v, w)| w / (degree[u] * degree[v]).sqrt()).collect())
            .collect();
        Ok(Self { n, adj, norm_w, degree })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degree
    }

    /// Neighbours of `u` with edge weights.
    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adj[u]
    }

    /// Number of distinct neighbours (the uniform step distribution's support).
    pub fn neighbor_count(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    /// Each undirected edge once, `u <= v`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (u, l) in self.adj.iter().enumerate() {
            for &(v, w) in l {
                if u <= v {
                    out.push((u, v, w));
                }
            }
        }
        out
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.n, self.n);
        for (u, l) in self.adj.iter().enumerate() {
            for &(v, x) in l {
                w[(u, v)] = x;
            }
        }
        w
    }

    /// `D^{-1/2} W D^{-1/2}`.
    pub fn normalized_adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for u in 0..self.n {
            for (k, &(v, _)) in self.adj[u].iter().enumerate() {
                a[(u, v)] = self.norm_w[u][k];
            }
        }
        a
    }

    /// `L = D - W`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency();
        for i in 0..self.n {
            l[(i, i)] += self.degree[i];
        }
        l
    }

    /// `I - D^{-1/2} W D^{-1/2}`, spectrum in `[0, 2]`.
    pub fn normalized_laplacian(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n) - self.normalized_adjacency()
    }

    /// Normalized weight of the edge from `u` to its `k`-th neighbour.
    pub(crate) fn norm_weight(&self, u: usize, k: usize) -> f64 {
        self.norm_w[u][k]
    }

    /// Graph with nodes relabelled by `perm` (`new label = perm[old]`).
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        let edges: Vec<_> = self.edges().into_iter().map(|(u, v, w)| (perm[u], perm[v], w)).collect();
        Self::from_edges(self.n, &edges)
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }
}

/// Spectral radius of the normalized adjacency by power iteration on `A^2`.
pub fn spectral_radius_estimate(g: &GraphData, iters: usize) -> f64 {
    let a = g.normalized_adjacency();
    let a2 = &a * &a;
    let mut v = DVector::from_fn(g.n(), |i, _| 1.0 + (i as f64 * 0.618_034).fract());
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = &a2 * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.norm();
        v = w / norm;
    }
    lambda.sqrt()
}

/// Erdős-Rényi `G(n, p_edge)` conditioned on being connected (rejection).
pub fn erdos_renyi(n: usize, p_edge: f64, rng: &mut impl RngCore) -> Result<GraphData> {
    if n < 2 || !(p_edge > 0.0 && p_edge <= 1.0) {
        return Err(Error::InvalidRequest(format!("erdos_renyi needs n >= 2 and p in (0, 1], got n={n}, p={p_edge}")));
    }
    for _ in 0..10_000 {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random::<f64>() < p_edge {
                    edges.push((u, v, 1.0));
                }
            }
        }
        if let Ok(g) = GraphData::from_edges(n, &edges) {
            if g.is_connected() {
                return Ok(g);
            }
        }
    }
    Err(Error::Graph(format!("no connected G({n}, {p_edge}) sample in 10000 attempts")))
}

// ---------------------------------------------------------------------------
// Edge-list IO
// ---------------------------------------------------------------------------

/// Parse `u v [weight]` lines (0-indexed). `#` starts a comment; a
/// `# nodes N` comment fixes the node count, otherwise it is the largest
/// index plus one.
pub fn read_edge_list(reader: impl BufRead) -> Result<GraphData> {
    let mut edges = Vec::new();
    let mut declared = None;
    let mut max_node = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let (body, comment) = match line.find('#') {
            Some(pos) => (&line[..pos], Some(&line[pos + 1..])),
            None => (line.as_str(), None),
        };
        if let Some(c) = comment {
            let mut it = c.split_whitespace();
            if it.next() == Some("nodes") {
                let n = it.next().and_then(|s| s.parse::<usize>().ok());
                declared = Some(n.ok_or_else(|| Error::Parse { line: lineno, msg: "bad '# nodes' header".into() })?);
            }
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse { line: lineno, msg: format!("expected 'u v [weight]', got '{}'", body.trim()) });
        }
        let node = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse { line: lineno, msg: format!("bad node index '{s}'") });
        let u = node(fields[0])?;
        let v = node(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => s.parse::<f64>().map_err(|_| Error::Parse { line: lineno, msg: format!("bad weight '{s}'") })?,
            None => 1.0,
        };
        max_node = Some(max_node.unwrap_or(0).max(u).max(v));
        edges.push((u, v, w));
    }
    let n = declared.or(max_node.map(|m| m + 1)).unwrap_or(0);
    GraphData::from_edges(n, &edges)
}

pub fn parse_edge_list(text: &str) -> Result<GraphData> {
    read_edge_list(text.as_bytes())
}

/// Serialize in the format accepted by [`read_edge_list`].
pub fn write_edge_list(g: &GraphData) -> String {
    let mut s = format!("# nodes {}\n", g.n());
    for (u, v, w) in g.edges() {
        let _ = writeln!(s, "{u} {v} {w}");
    }
    s
}

/// Dense kernel as CSV rows; refused above [`MAX_CSV_NODES`].
pub fn kernel_to_csv(k: &DMatrix<f64>) -> Result<String> {
    if k.nrows() > MAX_CSV_NODES {
        return Err(Error::InvalidRequest(format!("refusing to export a {0}x{0} kernel as CSV", k.nrows())));
    }
    let mut s = String::new();
    for i in 0..k.nrows() {
        let row: Vec<String> = k.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// Graph node kernel family, expressed as a function of the Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `(I + sigma^2 L)^(-degree)`.
    RegularizedLaplacian { sigma: f64, degree: u32 },
    /// `(alpha I - L)^p`, `alpha >= 2`.
    PStepRandomWalk { alpha: f64, p: u32 },
    /// `exp(-rate L)`.
    Diffusion { rate: f64 },
    /// `cos(pi L / 4)`.
    InverseCosine,
}

/// A kernel family applied to either the normalized or the plain Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphKernelSpec {
    pub family: KernelFamily,
    pub normalized: bool,
}

impl GraphKernelSpec {
    pub fn new(family: KernelFamily, normalized: bool) -> Result<Self> {
        match family {
            KernelFamily::RegularizedLaplacian { sigma, degree } => {
                if !sigma.is_finite() || degree == 0 {
                    return Err(Error::Domain("regularized Laplacian needs finite sigma and degree >= 1".into()));
                }
            }
            KernelFamily::PStepRandomWalk { alpha, .. } => {
                if !(alpha >= 2.0) {
                    return Err(Error::Domain(format!("p-step random walk needs alpha >= 2, got {alpha}")));
                }
            }
            KernelFamily::Diffusion { rate } => {
                if !(rate >= 0.0 && rate.is_finite()) {
                    return Err(Error::Domain(format!("diffusion rate must be >= 0, got {rate}")));
                }
            }
            KernelFamily::InverseCosine => {}
        }
        Ok(Self { family, normalized })
    }

    /// `(I + sigma^2 L~)^(-degree)` on the normalized Laplacian.
    pub fn regularized_laplacian(sigma: f64, degree: u32) -> Result<Self> {
        Self::new(KernelFamily::RegularizedLaplacian { sigma, degree }, true)
    }

    /// `exp(-sigma^2 L~ / 2)`.
    pub fn diffusion_sigma(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Diffusion { rate: 0.5 * sigma * sigma }, true)
    }

    /// `exp(-gamma^2 L~)`.
    pub fn diffusion_gamma(gamma: f64) -> Result<Self> {
        Self::new(KernelFamily::Diffusion { rate: gamma * gamma }, true)
    }

    fn eval(&self, lambda: f64) -> f64 {
        match self.family {
            KernelFamily::RegularizedLaplacian { sigma, degree } => (1.0 + sigma * sigma * lambda).powi(-(degree as i32)),
            KernelFamily::PStepRandomWalk { alpha, p } => (alpha - lambda).powi(p as i32),
            KernelFamily::Diffusion { rate } => (-rate * lambda).exp(),
            KernelFamily::InverseCosine => (std::f64::consts::FRAC_PI_4 * lambda).cos(),
        }
    }
}

/// Kernel matrix via the symmetric eigendecomposition of the Laplacian.
pub fn exact_graph_kernel(g: &GraphData, spec: &GraphKernelSpec) -> Result<DMatrix<f64>> {
    let l = if spec.normalized { g.normalized_laplacian() } else { g.laplacian() };
    let eig = l.symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Laplacian eigenvalue".into()));
    }
    let f = eig.eigenvalues.map(|lam| spec.eval(lam.max(0.0)));
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, fj) in f.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*fj);
    }
    let k = scaled * v.transpose();
    Ok((&k + k.transpose()) * 0.5)
}

/// Coefficients `alpha_0..=alpha_max_order` with `K = sum_k alpha_k A~^k`.
pub fn taylor_coefficients(spec: &GraphKernelSpec, max_order: usize) -> Result<Vec<f64>> {
    if !spec.normalized {
        return Err(Error::InvalidRequest("Taylor expansion in A~ needs the normalized Laplacian".into()));
    }
    let mut out = vec![0.0; max_order + 1];
    match spec.family {
        KernelFamily::RegularizedLaplacian { sigma, degree } => {
            let s2 = sigma * sigma;
            let rho = s2 / (1.0 + s2);
            let dg = degree as f64;
            out[0] = (1.0 + s2).powf(-dg);
            for k in 1..=max_order {
                out[k] = out[k - 1] * rho * (k as f64 + dg - 1.0) / k as f64;
            }
        }
        KernelFamily::Diffusion { rate } => {
            out[0] = (-rate).exp();
            for k in 1..=max_order {
                out[k] = out[k - 1] * rate / k as f64;
            }
        }
        KernelFamily::PStepRandomWalk { alpha, p } => {
            let p = p as usize;
            let mut binom = 1.0;
            for (k, slot) in out.iter_mut().enumerate().take(p.min(max_order) + 1) {
                if k > 0 {
                    binom *= (p - k + 1) as f64 / k as f64;
                }
                *slot = binom * (alpha - 1.0).powi((p - k) as i32);
            }
        }
        KernelFamily::InverseCosine => {
            let q = std::f64::consts::FRAC_PI_4;
            let mut mag = 1.0;
            for (k, slot) in out.iter_mut().enumerate() {
                if k > 0 {
                    mag *= q / k as f64;
                }
                *slot = mag * (q - k as f64 * std::f64::consts::FRAC_PI_2).cos();
            }
        }
    }
    Ok(out)
}

/// `sum_k alpha_k A~^k` (a dense oracle for the Taylor coefficients).
pub fn taylor_partial_sum(g: &GraphData, alphas: &[f64]) -> DMatrix<f64> {
    let a = g.normalized_adjacency();
    let mut power = DMatrix::identity(g.n(), g.n());
    let mut out = DMatrix::zeros(g.n(), g.n());
    for (k, alpha) in alphas.iter().enumerate() {
        if k > 0 {
            power = &power * &a;
        }
        out += &power * *alpha;
    }
    out
}

// ---------------------------------------------------------------------------
// Walks
// ---------------------------------------------------------------------------

/// A simple random walk: visited nodes and the products of normalized edge
/// weights along every prefix (`prefix_weights[0] = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkRecord {
    pub nodes: Vec<usize>,
    pub prefix_weights: Vec<f64>,
}

impl WalkRecord {
    pub fn start(&self) -> usize {
        self.nodes[0]
    }

    /// Number of edges traversed.
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Check that consecutive nodes are adjacent in `g`.
    pub fn validate(&self, g: &GraphData) -> Result<()> {
        if self.nodes.is_empty() || self.prefix_weights.len() != self.nodes.len() {
            return Err(Error::Graph("malformed walk record".into()));
        }
        for w in self.nodes.windows(2) {
            if g.neighbors(w[0]).binary_search_by_key(&w[1], |e| e.0).is_err() {
                return Err(Error::Graph(format!("walk steps along non-edge ({}, {})", w[0], w[1])));
            }
        }
        Ok(())
    }
}

/// How long a walk runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WalkMode {
    /// Halt with probability `p_halt` before every step.
    Geometric(GeometricParams),
    /// Exactly this many steps.
    Fixed(usize),
}

/// Walk from `start` choosing uniformly among neighbours at every step.
pub fn simulate_walk(g: &GraphData, start: usize, mode: WalkMode, rng: &mut impl RngCore) -> WalkRecord {
    let mut nodes = vec![start];
    let mut weights = vec![1.0];
    let mut cur = start;
    let mut w = 1.0;
    let mut steps = 0usize;
    loop {
        let go = match mode {
            WalkMode::Geometric(p) => rng.random::<f64>() >= p.p_halt(),
            WalkMode::Fixed(l) => steps < l,
        };
        if !go {
            break;
        }
        let k = rng.random_range(0..g.neighbor_count(cur));
        w *= g.norm_weight(cur, k);
        cur = g.neighbors(cur)[k].0;
        nodes.push(cur);
        weights.push(w);
        steps += 1;
    }
    WalkRecord { nodes, prefix_weights: weights }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: perm.len() });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidRequest(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Walk-length coupling given by a permutation between the `n` equal-mass
/// quantile tiles of the geometric length distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaCoupling {
    perm: Vec<usize>,
    geom: GeometricParams,
}

/// On-disk form: 1-indexed permutation with metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaCouplingFile {
    pub n: usize,
    pub p_halt: f64,
    pub seed: u64,
    pub sigma: Vec<usize>,
}

impl SigmaCoupling {
    /// `perm[q]` is the tile paired with tile `q` (0-indexed).
    pub fn new(perm: Vec<usize>, geom: GeometricParams) -> Result<Self> {
        if perm.is_empty() {
            return Err(Error::InvalidRequest("sigma coupling needs n >= 1".into()));
        }
        check_permutation(&perm, perm.len())?;
        Ok(Self { perm, geom })
    }

    pub fn identity(n: usize, geom: GeometricParams) -> Result<Self> {
        Self::new((0..n).collect(), geom)
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn geom(&self) -> GeometricParams {
        self.geom
    }

    pub fn to_file(&self, seed: u64) -> SigmaCouplingFile {
        SigmaCouplingFile { n: self.n(), p_halt: self.geom.p_halt(), seed, sigma: self.perm.iter().map(|q| q + 1).collect() }
    }

    pub fn from_file(f: &SigmaCouplingFile) -> Result<Self> {
        if f.sigma.len() != f.n {
            return Err(Error::DimensionMismatch { expected: f.n, got: f.sigma.len() });
        }
        if f.sigma.contains(&0) {
            return Err(Error::InvalidRequest("sigma entries are 1-indexed".into()));
        }
        Self::new(f.sigma.iter().map(|q| q - 1).collect(), GeometricParams::new(f.p_halt)?)
    }

    /// Same permutation at a different halting probability.
    pub fn with_geom(&self, geom: GeometricParams) -> Self {
        Self { perm: self.perm.clone(), geom }
    }
}

fn uniform_in_tile(q: usize, n: usize, rng: &mut impl RngCore) -> f64 {
    let u: f64 = rng.sample(Open01);
    ((q as f64 + u) / n as f64).min(1.0 - f64::EPSILON / 2.0)
}

/// Coupled uniforms `(u1, u2)`: tile `q` uniform, `u1` in tile `q`, `u2` in
/// tile `sigma(q)`.
pub fn sample_coupled_uniforms(c: &SigmaCoupling, rng: &mut impl RngCore) -> (f64, f64) {
    let n = c.n();
    let q = rng.random_range(0..n);
    (uniform_in_tile(q, n, rng), uniform_in_tile(c.perm[q], n, rng))
}

/// Two walk lengths, each marginally geometric, coupled through `sigma`.
pub fn sample_coupled_lengths(c: &SigmaCoupling, rng: &mut impl RngCore) -> (usize, usize) {
    let (u1, u2) = sample_coupled_uniforms(c, rng);
    let p = c.geom.p_halt();
    (
        mathcore::geometric_quantile_raw(u1, p) as usize,
        mathcore::geometric_quantile_raw(u2, p) as usize,
    )
}

/// Walk length for a uniform drawn inside quantile tile `q` of `n`.
pub fn sample_tile_length(q: usize, n: usize, geom: GeometricParams, rng: &mut impl RngCore) -> usize {
    mathcore::geometric_quantile_raw(uniform_in_tile(q, n, rng), geom.p_halt()) as usize
}

/// Lengths under antithetic termination: per step `t1 ~ U[0,1)`,
/// `t2 = (t1 + 1/2) mod 1`, and a walker halts when its `t < p_halt`.
pub fn antithetic_lengths(geom: GeometricParams, rng: &mut impl RngCore) -> (usize, usize) {
    let p = geom.p_halt();
    let (mut l1, mut l2) = (0usize, 0usize);
    let (mut alive1, mut alive2) = (true, true);
    while alive1 || alive2 {
        let t1: f64 = rng.random();
        let (h1, h2) = antithetic_halts(t1, p);
        if alive1 {
            if h1 { alive1 = false } else { l1 += 1 }
        }
        if alive2 {
            if h2 { alive2 = false } else { l2 += 1 }
        }
    }
    (l1, l2)
}

/// Halting decisions of the two walkers for one draw of `t1`.
pub fn antithetic_halts(t1: f64, p_halt: f64) -> (bool, bool) {
    let mut t2 = t1 + 0.5;
    if t2 >= 1.0 {
        t2 -= 1.0;
    }
    (t1 < p_halt, t2 < p_halt)
}

/// Two walks with antithetically coupled termination.
pub fn antithetic_termination_pair(
    g: &GraphData,
    start1: usize,
    start2: usize,
    geom: GeometricParams,
    rng: &mut impl RngCore,
) -> (WalkRecord, WalkRecord) {
    let (l1, l2) = antithetic_lengths(geom, rng);
    let w1 = simulate_walk(g, start1, WalkMode::Fixed(l1), rng);
    let w2 = simulate_walk(g, start2, WalkMode::Fixed(l2), rng);
    (w1, w2)
}
