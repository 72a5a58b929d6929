//! Frequency ensembles for Euclidean random features.
//!
//! Every scheme keeps each frequency marginally `N(0, I_d)`; they differ only
//! in the joint law. Orthogonal schemes work in blocks of `d` frequencies whose
//! directions are exactly orthogonal and whose norms are each `chi_d`.

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::{Rng as _, RngCore};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eucrf::{Featurizer, GaussianKernelParams};
use crate::mathcore::{self, first_primes, ChiParams};
use crate::rng;

/// Off-diagonal starting value for learned copulas (near independence).
pub const THETA_INIT: f64 = 1e-3;

/// Unconstrained parameters of a Gaussian-copula correlation matrix.
///
/// `theta` holds the strictly lower triangle in row-major order:
/// `(1,0), (2,0), (2,1), (3,0), ...`. The diagonal is implicitly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CorrelationParams {
    m: usize,
    theta: Vec<f64>,
}

impl CorrelationParams {
    pub fn new(m: usize, theta: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidRequest("copula needs m >= 1".into()));
        }
        let want = m * (m - 1) / 2;
        if theta.len() != want {
            return Err(Error::DimensionMismatch { expected: want, got: theta.len() });
        }
        if let Some(bad) = theta.iter().find(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("copula parameter {bad}")));
        }
        Ok(Self { m, theta })
    }

    /// All off-diagonal entries set to [`THETA_INIT`].
    pub fn init(m: usize) -> Self {
        Self { m, theta: vec![THETA_INIT; m * m.saturating_sub(1) / 2] }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Flat index of `(row, col)` with `row > col`.
    pub fn index(row: usize, col: usize) -> usize {
        debug_assert!(row > col);
        row * (row - 1) / 2 + col
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.theta[Self::index(row, col)]
    }
}

impl TryFrom<Vec<f64>> for CorrelationParams {
    type Error = Error;
    fn try_from(theta: Vec<f64>) -> Result<Self> {
        // m(m-1)/2 = len
        let len = theta.len();
        let m = ((1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0).round() as usize;
        Self::new(m, theta)
    }
}

impl From<CorrelationParams> for Vec<f64> {
    fn from(p: CorrelationParams) -> Vec<f64> {
        p.theta
    }
}

/// How the frequencies of an ensemble are coupled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", content = "params", rename_all = "snake_case")]
pub enum CouplingSpec {
    Iid,
    /// Halton points pushed through the Gaussian quantile. With
    /// `random_shift` a uniform Cranley-Patterson rotation is drawn per
    /// ensemble, which restores unbiasedness.
    Halton { random_shift: bool },
    Orthogonal,
    OrthogonalPnc,
    OrthogonalPncAntithetic,
    PositiveMonotone,
    Copula(CorrelationParams),
}

impl CouplingSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Iid => "iid",
            Self::Halton { .. } => "halton",
            Self::Orthogonal => "orthogonal",
            Self::OrthogonalPnc => "orthogonal_pnc",
            Self::OrthogonalPncAntithetic => "orthogonal_pnc_antithetic",
            Self::PositiveMonotone => "positive_monotone",
            Self::Copula(_) => "copula",
        }
    }

    /// Parse a scheme name as used by the CLI (copula takes identity params).
    pub fn from_tag(tag: &str, copula_m: usize) -> Result<Self> {
        Ok(match tag {
            "iid" => Self::Iid,
            "halton" => Self::Halton { random_shift: true },
            "orthogonal" => Self::Orthogonal,
            "orthogonal_pnc" | "pnc" => Self::OrthogonalPnc,
            "orthogonal_pnc_antithetic" | "pnc_antithetic" => Self::OrthogonalPncAntithetic,
            "positive_monotone" => Self::PositiveMonotone,
            "copula" => Self::Copula(CorrelationParams::init(copula_m)),
            other => return Err(Error::InvalidRequest(format!("unknown coupling '{other}'"))),
        })
    }
}

/// `m` frequency vectors in `R^d` (one per row) and how they were drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyEnsemble {
    freqs: DMatrix<f64>,
    coupling: CouplingSpec,
    seed: u64,
}

impl FrequencyEnsemble {
    /// Wrap explicit frequencies (rows).
    pub fn from_matrix(freqs: DMatrix<f64>, coupling: CouplingSpec) -> Result<Self> {
        if freqs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frequency entry".into()));
        }
        Ok(Self { freqs, coupling, seed: 0 })
    }

    /// Deterministic ensemble for a seed.
    pub fn generate(m: usize, d: usize, scheme: &CouplingSpec, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let freqs = draw_frequencies(m, d, scheme, &mut r)?;
        Ok(Self { freqs, coupling: scheme.clone(), seed })
    }

    pub fn m(&self) -> usize {
        self.freqs.nrows()
    }

    pub fn d(&self) -> usize {
        self.freqs.ncols()
    }

    /// `m x d`, one frequency per row.
    pub fn freqs(&self) -> &DMatrix<f64> {
        &self.freqs
    }

    pub fn coupling(&self) -> &CouplingSpec {
        &self.coupling
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Haar-random orthonormal vectors, returned as the rows of a `count x d` matrix.
pub fn sample_orthogonal_directions(d: usize, count: usize, rng: &mut impl RngCore) -> Result<DMatrix<f64>> {
    if count > d {
        return Err(Error::InvalidRequest(format!("{count} orthogonal directions requested in dimension {d}")));
    }
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix the sign ambiguity of QR so Q is Haar distributed.
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(DMatrix::from_fn(count, d, |i, k| q[(k, i)]))
}

/// `count` norms, each marginally `chi_d`, jointly coupled per `scheme`.
///
/// Directions-only schemes (iid, Halton, orthogonal) give independent norms.
pub fn sample_norms(count: usize, d: usize, scheme: &CouplingSpec, rng: &mut impl RngCore) -> Result<Vec<f64>> {
    let chi = ChiParams::new(d)?;
    match scheme {
        CouplingSpec::Iid | CouplingSpec::Halton { .. } | CouplingSpec::Orthogonal => {
            Ok(iid_chi(count, d, rng))
        }
        CouplingSpec::OrthogonalPnc | CouplingSpec::OrthogonalPncAntithetic => {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count / 2 {
                let u: f64 = rng.sample(Open01);
                out.push(mathcore::chi_quantile_raw(u, d));
                out.push(mathcore::chi_quantile_raw(1.0 - u, d));
            }
            if count % 2 == 1 {
                out.extend(iid_chi(1, d, rng));
            }
            Ok(out)
        }
        CouplingSpec::PositiveMonotone => {
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let w = iid_chi(1, d, rng)[0];
                let take = d.min(count - out.len());
                out.extend(std::iter::repeat_n(w, take));
            }
            Ok(out)
        }
        CouplingSpec::Copula(theta) => {
            let k = theta.m();
            if count % k != 0 {
                return Err(Error::InvalidRequest(format!("{count} norms is not a multiple of copula size {k}")));
            }
            let mut out = Vec::with_capacity(count);
            for _ in 0..count / k {
                out.extend(sample_copula_norms(theta, chi, rng));
            }
            Ok(out)
        }
    }
}

fn iid_chi(count: usize, d: usize, rng: &mut impl RngCore) -> Vec<f64> {
    let dist = ChiSquared::new(d as f64).expect("dof >= 1");
    (0..count).map(|_| dist.sample(rng).sqrt()).collect()
}

/// Draw an ensemble from `rng`. The recorded seed is taken from `rng`, so the
/// ensemble can be regenerated with [`FrequencyEnsemble::generate`].
pub fn build_ensemble(m: usize, d: usize, scheme: &CouplingSpec, rng: &mut impl RngCore) -> Result<FrequencyEnsemble> {
    FrequencyEnsemble::generate(m, d, scheme, rng.next_u64())
}

fn draw_frequencies(m: usize, d: usize, scheme: &CouplingSpec, rng: &mut impl RngCore) -> Result<DMatrix<f64>> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidRequest("ensemble needs m >= 1 and d >= 1".into()));
    }
    let need_blocks = |block: usize| -> Result<()> {
        if m % block == 0 {
            Ok(())
        } else {
            Err(Error::InvalidRequest(format!("{} needs m to be a multiple of {block}, got m = {m}", scheme.tag())))
        }
    };
    match scheme {
        CouplingSpec::Iid => Ok(DMatrix::from_fn(m, d, |_, _| rng.sample(StandardNormal))),
        CouplingSpec::Halton { random_shift } => {
            let bases = first_primes(d);
            let shift: Vec<f64> = if *random_shift { (0..d).map(|_| rng.random::<f64>()).collect() } else { vec![0.0; d] };
            let mut out = DMatrix::zeros(m, d);
            for i in 0..m {
                for (j, base) in bases.iter().enumerate() {
                    let mut u = mathcore::radical_inverse(i as u64 + 1, base.get() as u64) + shift[j];
                    if u >= 1.0 {
                        u -= 1.0;
                    }
                    let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                    out[(i, j)] = mathcore::normal_quantile(u);
                }
            }
            Ok(out)
        }
        CouplingSpec::Orthogonal | CouplingSpec::OrthogonalPnc | CouplingSpec::PositiveMonotone => {
            need_blocks(d)?;
            let mut out = DMatrix::zeros(m, d);
            for b in 0..m / d {
                let dirs = sample_orthogonal_directions(d, d, rng)?;
                let norms = sample_norms(d, d, scheme, rng)?;
                for i in 0..d {
                    out.row_mut(b * d + i).copy_from(&(dirs.row(i) * norms[i]));
                }
            }
            Ok(out)
        }
        CouplingSpec::OrthogonalPncAntithetic => {
            need_blocks(2 * d)?;
            let mut out = DMatrix::zeros(m, d);
            for b in 0..m / (2 * d) {
                let dirs = sample_orthogonal_directions(d, d, rng)?;
                let norms = sample_norms(d, d, scheme, rng)?;
                for i in 0..d {
                    let row = dirs.row(i) * norms[i];
                    out.row_mut(2 * b * d + i).copy_from(&row);
                    out.row_mut(2 * b * d + d + i).copy_from(&(-row));
                }
            }
            Ok(out)
        }
        CouplingSpec::Copula(theta) => {
            need_blocks(d)?;
            need_blocks(theta.m())?;
            let norms = sample_norms(m, d, scheme, rng)?;
            let mut out = DMatrix::zeros(m, d);
            for b in 0..m / d {
                let dirs = sample_orthogonal_directions(d, d, rng)?;
                for i in 0..d {
                    out.row_mut(b * d + i).copy_from(&(dirs.row(i) * norms[b * d + i]));
                }
            }
            Ok(out)
        }
    }
}

/// Row-normalized lower-triangular factor: `L_ij = theta_ij / s_i` for
/// `j <= i`, with `theta_ii = 1` and `s_i` the norm of row `i` of theta.
pub fn cholesky_from_params(theta: &CorrelationParams) -> DMatrix<f64> {
    let m = theta.m();
    let mut l = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut s2 = 1.0;
        for j in 0..i {
            s2 += theta.get(i, j).powi(2);
        }
        let s = s2.sqrt();
        for j in 0..i {
            l[(i, j)] = theta.get(i, j) / s;
        }
        l[(i, i)] = 1.0 / s;
    }
    l
}

/// `g = L z`, `omega_i = F_chi^{-1}(Phi(g_i))`.
pub fn sample_copula_norms(theta: &CorrelationParams, d: ChiParams, rng: &mut impl RngCore) -> Vec<f64> {
    let l = cholesky_from_params(theta);
    let z = DVector::<f64>::from_fn(theta.m(), |_, _| rng.sample(StandardNormal));
    copula_push(&(l * z), d.dof())
}

fn copula_push(g: &DVector<f64>, dof: usize) -> Vec<f64> {
    g.iter()
        .map(|&gi| {
            let u = mathcore::normal_cdf(gi).clamp(0.0, 1.0 - f64::EPSILON / 2.0);
            mathcore::chi_quantile_raw(u, dof)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Learned copula
// ---------------------------------------------------------------------------

/// Fixed randomness for the copula loss: per draw, latent normals `z` (length
/// `k`) and `k / d` blocks of orthogonal directions stacked as a `k x d`
/// matrix. With the noise fixed the loss is a deterministic function of theta.
#[derive(Debug, Clone)]
pub struct CopulaNoise {
    pub z: Vec<DVector<f64>>,
    pub dirs: Vec<DMatrix<f64>>,
}

impl CopulaNoise {
    pub fn sample(k: usize, d: usize, draws: usize, rng: &mut impl RngCore) -> Result<Self> {
        if d == 0 || k % d != 0 {
            return Err(Error::InvalidRequest(format!("copula size {k} must be a multiple of d = {d}")));
        }
        let mut z = Vec::with_capacity(draws);
        let mut dirs = Vec::with_capacity(draws);
        for _ in 0..draws {
            z.push(DVector::from_fn(k, |_, _| rng.sample(StandardNormal)));
            let mut block = DMatrix::zeros(k, d);
            for b in 0..k / d {
                block.rows_mut(b * d, d).copy_from(&sample_orthogonal_directions(d, d, rng)?);
            }
            dirs.push(block);
        }
        Ok(Self { z, dirs })
    }

    pub fn draws(&self) -> usize {
        self.z.len()
    }
}

/// Dataset and kernel a copula is fitted against. Rows of `x` are points.
#[derive(Debug, Clone)]
pub struct CopulaProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub kernel: GaussianKernelParams,
    pub featurizer: Featurizer,
}

impl CopulaProblem<'_> {
    fn check(&self) -> Result<()> {
        if self.x.nrows() == 0 {
            return Err(Error::InvalidRequest("copula loss needs a nonempty dataset".into()));
        }
        Ok(())
    }

    fn exact_gram(&self) -> DMatrix<f64> {
        crate::eucrf::gaussian_gram(self.x, &self.kernel)
    }
}

/// Monte Carlo estimate of the expected RMSE between the random-feature Gram
/// matrix and the exact one, with fresh noise from `rng`.
pub fn copula_loss(
    theta: &CorrelationParams,
    problem: &CopulaProblem,
    mc_samples: usize,
    rng: &mut impl RngCore,
) -> Result<f64> {
    problem.check()?;
    let noise = CopulaNoise::sample(theta.m(), problem.x.ncols(), mc_samples.max(1), rng)?;
    Ok(copula_loss_and_grad(theta, problem, &noise, false)?.0)
}

/// Loss under fixed noise.
pub fn copula_loss_with_noise(theta: &CorrelationParams, problem: &CopulaProblem, noise: &CopulaNoise) -> Result<f64> {
    Ok(copula_loss_and_grad(theta, problem, noise, false)?.0)
}

/// Loss and its reparameterization gradient with respect to theta under
/// fixed noise.
pub fn copula_loss_and_grad(
    theta: &CorrelationParams,
    problem: &CopulaProblem,
    noise: &CopulaNoise,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    problem.check()?;
    let k = theta.m();
    let d = problem.x.ncols();
    let n = problem.x.nrows();
    let kp = &problem.kernel;
    let xs = problem.x / kp.lengthscale;
    let exact = problem.exact_gram();
    let l = cholesky_from_params(theta);
    let row_scale: Vec<f64> = (0..k).map(|i| 1.0 / l[(i, i)]).collect();
    let c = kp.output_scale / (k as f64).sqrt();
    let sq_norms: Vec<f64> = (0..n).map(|i| xs.row(i).norm_squared()).collect();

    let mut loss_sum = 0.0;
    let mut grad = vec![0.0; theta.theta().len()];
    for (z, dirs) in noise.z.iter().zip(&noise.dirs) {
        if z.len() != k || dirs.nrows() != k || dirs.ncols() != d {
            return Err(Error::InvalidRequest("copula noise does not match theta/data shape".into()));
        }
        let g = &l * z;
        let omega = copula_push(&g, d);
        // p[r, i] = dir_r . x_i
        let p = dirs * xs.transpose();
        let (phi, rows_per_freq) = match problem.featurizer {
            Featurizer::Rff => {
                let mut phi = DMatrix::zeros(2 * k, n);
                for r in 0..k {
                    for i in 0..n {
                        let a = omega[r] * p[(r, i)];
                        phi[(2 * r, i)] = c * a.sin();
                        phi[(2 * r + 1, i)] = c * a.cos();
                    }
                }
                (phi, 2)
            }
            Featurizer::Rlf => {
                let mut phi = DMatrix::zeros(k, n);
                for r in 0..k {
                    for i in 0..n {
                        let e = omega[r] * p[(r, i)] - sq_norms[i];
                        if e > crate::eucrf::EXP_LIMIT {
                            return Err(Error::Overflow(e));
                        }
                        phi[(r, i)] = c * e.exp();
                    }
                }
                (phi, 1)
            }
        };
        let err = phi.transpose() * &phi - &exact;
        let s = err.norm_squared();
        let rmse = (s / (n * n) as f64).sqrt();
        if !rmse.is_finite() {
            return Err(Error::NonFinite("copula loss".into()));
        }
        loss_sum += rmse;
        if !with_grad || rmse == 0.0 {
            continue;
        }
        // dR/dPhi = 2 Phi E / (R N^2), E symmetric.
        let dphi = (&phi * &err) * (2.0 / (rmse * (n * n) as f64));
        for r in 0..k {
            let mut d_omega = 0.0;
            for i in 0..n {
                let pri = p[(r, i)];
                if rows_per_freq == 2 {
                    let a = omega[r] * pri;
                    d_omega += dphi[(2 * r, i)] * c * a.cos() * pri - dphi[(2 * r + 1, i)] * c * a.sin() * pri;
                } else {
                    d_omega += dphi[(r, i)] * phi[(r, i)] * pri;
                }
            }
            // d omega / d g via the density ratio phi_N(g) / f_chi(omega).
            let ln_ratio = -0.5 * g[r] * g[r] - 0.5 * (2.0 * std::f64::consts::PI).ln() - mathcore::chi_ln_pdf(omega[r], d);
            let d_g = d_omega * ln_ratio.exp();
            if !d_g.is_finite() {
                continue;
            }
            for col in 0..r {
                let idx = CorrelationParams::index(r, col);
                grad[idx] += d_g * (z[col] - l[(r, col)] * g[r]) / row_scale[r];
            }
        }
    }
    let draws = noise.draws().max(1) as f64;
    grad.iter_mut().for_each(|v| *v /= draws);
    Ok((loss_sum / draws, grad))
}

/// Settings for [`optimize_copula`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaTrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub mc_samples: usize,
    /// Number of coupled norms (a multiple of d).
    pub block: usize,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Running Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: Adam,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(cfg: Adam, len: usize) -> Self {
        Self { cfg, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// One descent step on `params` given the gradient.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let Adam { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

/// Fitted copula and the per-step training loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CopulaFit {
    pub params: CorrelationParams,
    pub loss_trace: Vec<f64>,
}

/// Fit copula parameters by Adam on the reparameterized RMSE loss, with
/// fresh noise at every step.
pub fn optimize_copula(problem: &CopulaProblem, cfg: &CopulaTrainConfig, rng: &mut impl RngCore) -> Result<CopulaFit> {
    problem.check()?;
    let mut params = CorrelationParams::init(cfg.block);
    let mut adam = AdamState::new(Adam::with_lr(cfg.lr), params.theta().len());
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let noise = CopulaNoise::sample(cfg.block, problem.x.ncols(), cfg.mc_samples.max(1), rng)?;
        let (loss, grad) = copula_loss_and_grad(&params, problem, &noise, true)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("copula training diverged at step {step} (loss {loss})")));
        }
        trace.push(loss);
        adam.step(params.theta_mut(), &grad);
    }
    Ok(CopulaFit { params, loss_trace: trace })
}

/// Trailing moving average used to summarise noisy loss traces.
pub fn smoothed_tail(trace: &[f64], window: usize) -> f64 {
    let w = window.min(trace.len()).max(1);
    crate::stats::mean(&trace[trace.len().saturating_sub(w)..])
}
