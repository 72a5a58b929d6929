//! Random Fourier / Laplace features for the Gaussian kernel, transport costs
//! and attention estimation.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::couplings::{CouplingSpec, FrequencyEnsemble};
use crate::error::{ensure_dims, Error, Result};
use crate::mathcore::ln_gamma;
use crate::rng;
use crate::stats::MeanSe;

/// Largest exponent accepted before a Laplace feature is flagged as overflow.
pub const EXP_LIMIT: f64 = 700.0;

/// `k(x, y) = sigma_v^2 exp(-|x - y|^2 / (2 l^2))` plus observation noise `sigma_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernelParams {
    pub lengthscale: f64,
    pub output_scale: f64,
    pub noise_scale: f64,
}

impl GaussianKernelParams {
    pub fn new(lengthscale: f64, output_scale: f64, noise_scale: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::Domain(format!("lengthscale must be positive, got {lengthscale}")));
        }
        if !(output_scale > 0.0 && output_scale.is_finite()) {
            return Err(Error::Domain(format!("output scale must be positive, got {output_scale}")));
        }
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::Domain(format!("noise scale must be nonnegative, got {noise_scale}")));
        }
        Ok(Self { lengthscale, output_scale, noise_scale })
    }
}

/// Which random feature map to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Featurizer {
    /// `[sin, cos]` pairs, `2m` features.
    Rff,
    /// Positive exponential features, `m` features.
    Rlf,
}

/// Features stored column-wise: `rows = feature dimension`, `cols = points`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(DMatrix<f64>);

impl FeatureMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix entry".into()));
        }
        Ok(Self(m))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn points(&self) -> usize {
        self.0.ncols()
    }
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], params: &GaussianKernelParams) -> Result<f64> {
    ensure_dims(x.len(), y.len())?;
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(params.output_scale.powi(2) * (-sq / (2.0 * params.lengthscale.powi(2))).exp())
}

/// Kernel matrix between the rows of `a` and the rows of `b`.
pub fn gaussian_cross(a: &DMatrix<f64>, b: &DMatrix<f64>, params: &GaussianKernelParams) -> DMatrix<f64> {
    let s2 = params.output_scale.powi(2);
    let inv = 1.0 / (2.0 * params.lengthscale.powi(2));
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let sq = (a.row(i) - b.row(j)).norm_squared();
        s2 * (-sq * inv).exp()
    })
}

/// Exact Gram matrix of the rows of `x` (no noise term).
pub fn gaussian_gram(x: &DMatrix<f64>, params: &GaussianKernelParams) -> DMatrix<f64> {
    gaussian_cross(x, x, params)
}

fn check_ens(x_dim: usize, ens: &FrequencyEnsemble) -> Result<()> {
    ensure_dims(ens.d(), x_dim)
}

/// `sigma_v / sqrt(m) * [sin(w_1.x), cos(w_1.x), sin(w_2.x), ...]` with `x`
/// scaled by the lengthscale.
pub fn rff_features(x: &[f64], ens: &FrequencyEnsemble, params: &GaussianKernelParams) -> Result<DVector<f64>> {
    check_ens(x.len(), ens)?;
    let xs = DVector::from_iterator(x.len(), x.iter().map(|v| v / params.lengthscale));
    let a = ens.freqs() * xs;
    let c = params.output_scale / (ens.m() as f64).sqrt();
    let mut out = DVector::zeros(2 * ens.m());
    for (i, ai) in a.iter().enumerate() {
        out[2 * i] = c * ai.sin();
        out[2 * i + 1] = c * ai.cos();
    }
    Ok(out)
}

/// `sigma_v / sqrt(m) * exp(-|x|^2) * exp(w_i.x)` with `x` scaled by the
/// lengthscale. Errors with [`Error::Overflow`] if an exponent exceeds
/// [`EXP_LIMIT`]; a larger lengthscale avoids this.
pub fn rlf_features(x: &[f64], ens: &FrequencyEnsemble, params: &GaussianKernelParams) -> Result<DVector<f64>> {
    check_ens(x.len(), ens)?;
    let xs = DVector::from_iterator(x.len(), x.iter().map(|v| v / params.lengthscale));
    let a = ens.freqs() * &xs;
    let sq = xs.norm_squared();
    let c = params.output_scale / (ens.m() as f64).sqrt();
    let mut out = DVector::zeros(ens.m());
    for (i, ai) in a.iter().enumerate() {
        let e = ai - sq;
        if e > EXP_LIMIT {
            return Err(Error::Overflow(e));
        }
        out[i] = c * e.exp();
    }
    Ok(out)
}

/// Features for every row of `x`.
pub fn feature_matrix(
    x: &DMatrix<f64>,
    ens: &FrequencyEnsemble,
    params: &GaussianKernelParams,
    featurizer: Featurizer,
) -> Result<FeatureMatrix> {
    check_ens(x.ncols(), ens)?;
    let xs = x / params.lengthscale;
    let a = ens.freqs() * xs.transpose();
    let (m, n) = (ens.m(), x.nrows());
    let c = params.output_scale / (m as f64).sqrt();
    let out = match featurizer {
        Featurizer::Rff => {
            let mut out = DMatrix::zeros(2 * m, n);
            for j in 0..n {
                for i in 0..m {
                    let (s, co) = a[(i, j)].sin_cos();
                    out[(2 * i, j)] = c * s;
                    out[(2 * i + 1, j)] = c * co;
                }
            }
            out
        }
        Featurizer::Rlf => {
            let mut out = DMatrix::zeros(m, n);
            for j in 0..n {
                let sq = xs.row(j).norm_squared();
                for i in 0..m {
                    let e = a[(i, j)] - sq;
                    if e > EXP_LIMIT {
                        return Err(Error::Overflow(e));
                    }
                    out[(i, j)] = c * e.exp();
                }
            }
            out
        }
    };
    FeatureMatrix::new(out)
}

/// `K_hat = Phi^T Phi`.
pub fn gram_estimate(features: &FeatureMatrix) -> DMatrix<f64> {
    features.0.tr_mul(&features.0)
}

/// Root mean squared entrywise error between two equally shaped matrices.
pub fn relative_rmse(k_hat: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
    if k_hat.shape() != k.shape() {
        return Err(Error::InvalidRequest(format!("shape {:?} vs {:?}", k_hat.shape(), k.shape())));
    }
    let n = k.len().max(1) as f64;
    Ok(((k_hat - k).norm_squared() / n).sqrt())
}

/// Lengthscale for Laplace features: twice the average of `|x_i + x_j|` over
/// all ordered pairs of rows.
pub fn rlf_lengthscale_heuristic(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (x.row(i) + x.row(j)).norm();
        }
    }
    2.0 * acc / (n * n).max(1) as f64
}

// ---------------------------------------------------------------------------
// Transport cost series
// ---------------------------------------------------------------------------

/// Truncation rule for the cost series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSeriesConfig {
    pub tolerance: f64,
    pub max_terms: usize,
}

impl Default for CostSeriesConfig {
    fn default() -> Self {
        Self { tolerance: 1e-12, max_terms: 200 }
    }
}

fn cost_series(w1: f64, w2: f64, t: f64, d: usize, sign: f64, cfg: &CostSeriesConfig) -> Result<f64> {
    if w1 < 0.0 || w2 < 0.0 || t < 0.0 || d == 0 {
        return Err(Error::Domain("cost series needs nonnegative inputs and d >= 1".into()));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(Error::Domain("series tolerance must be positive".into()));
    }
    let x = t * t * (w1 * w1 + w2 * w2) / 4.0;
    let half_d = 0.5 * d as f64;
    let mut term = (-ln_gamma(half_d)).exp();
    let mut sum = term;
    for k in 1..cfg.max_terms {
        let kf = k as f64;
        term *= sign * x / (kf * (kf - 1.0 + half_d));
        sum += term;
        if term == 0.0 || term.abs() < cfg.tolerance * sum.abs() {
            return Ok(sum);
        }
    }
    Err(Error::SeriesNotConverged { terms: cfg.max_terms })
}

/// Single ordered-pair RFF transport cost at separation `z = |x - y|`.
pub fn cost_rff(w1: f64, w2: f64, z: f64, d: usize, cfg: &CostSeriesConfig) -> Result<f64> {
    cost_series(w1, w2, z, d, -1.0, cfg)
}

/// Single ordered-pair RLF transport cost at `v = |x + y|`.
pub fn cost_rlf(w1: f64, w2: f64, v: f64, d: usize, cfg: &CostSeriesConfig) -> Result<f64> {
    cost_series(w1, w2, v, d, 1.0, cfg)
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

/// Row-normalised softmax attention `exp(x_i.x_j) / sum_l exp(x_i.x_l)` over
/// the rows of `x`.
pub fn attention_exact(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let logits = x * x.transpose();
    let mut a = logits.clone();
    for i in 0..n {
        let mx = logits.row(i).max();
        let mut s = 0.0;
        for j in 0..n {
            let v = (logits[(i, j)] - mx).exp();
            a[(i, j)] = v;
            s += v;
        }
        for j in 0..n {
            a[(i, j)] /= s;
        }
    }
    a
}

/// Unbiased estimate of the softmax kernel matrix `exp(x_i.x_j)` from Laplace
/// features rescaled by `exp(|x|^2 / 2)`.
pub fn softmax_kernel_estimate(x: &DMatrix<f64>, ens: &FrequencyEnsemble) -> Result<DMatrix<f64>> {
    let unit = GaussianKernelParams { lengthscale: 1.0, output_scale: 1.0, noise_scale: 0.0 };
    let mut phi = feature_matrix(x, ens, &unit, Featurizer::Rlf)?.into_inner();
    for j in 0..x.nrows() {
        let s = (0.5 * x.row(j).norm_squared()).exp();
        phi.column_mut(j).scale_mut(s);
    }
    Ok(phi.tr_mul(&phi))
}

/// Monte Carlo summary of an attention estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionStats {
    /// Mean over rows `i` of `MSE(a_hat_i) = (1/N) sum_j MSE(a_hat_ij)`.
    pub attention_mse: MeanSe,
    /// Mean over `(i, j)` of `Var(k_hat(x_i, x_j))`.
    pub kernel_variance: MeanSe,
    /// Mean over `(i, j1, j2)` of `Cov(k_hat(x_i, x_j1), k_hat(x_i, x_j2))`.
    pub kernel_covariance: MeanSe,
}

/// Per-trial values behind [`AttentionStats`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrial {
    pub attention_mse: f64,
    pub kernel_variance: f64,
    pub kernel_covariance: f64,
}

/// One trial: fresh ensemble, estimated attention vs exact.
pub fn attention_trial(x: &DMatrix<f64>, ens: &FrequencyEnsemble) -> Result<AttentionTrial> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidRequest("attention needs at least one token".into()));
    }
    let exact_k = (x * x.transpose()).map(f64::exp);
    let exact_a = attention_exact(x);
    let k_hat = softmax_kernel_estimate(x, ens)?;
    let nf = n as f64;
    let mut mse = 0.0;
    let mut var = 0.0;
    let mut cov = 0.0;
    for i in 0..n {
        let row_sum: f64 = k_hat.row(i).sum();
        let mut delta_sum = 0.0;
        for j in 0..n {
            let a_hat = k_hat[(i, j)] / row_sum;
            mse += (a_hat - exact_a[(i, j)]).powi(2);
            let delta = k_hat[(i, j)] - exact_k[(i, j)];
            var += delta * delta;
            delta_sum += delta;
        }
        cov += delta_sum * delta_sum / (nf * nf);
    }
    Ok(AttentionTrial { attention_mse: mse / (nf * nf), kernel_variance: var / (nf * nf), kernel_covariance: cov / nf })
}

/// Attention MSE and kernel variance/covariance over independent ensembles.
/// Trial `t` uses RNG stream `t` of `seed`, so results do not depend on the
/// thread count.
pub fn attention_estimate(
    x: &DMatrix<f64>,
    m: usize,
    scheme: &CouplingSpec,
    trials: usize,
    seed: u64,
) -> Result<(AttentionStats, Vec<AttentionTrial>)> {
    let per: Vec<AttentionTrial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, t as u64);
            let ens = FrequencyEnsemble::generate(m, x.ncols(), scheme, r.next_u64())?;
            attention_trial(x, &ens)
        })
        .collect::<Result<_>>()?;
    let pick = |f: fn(&AttentionTrial) -> f64| MeanSe::from_samples(&per.iter().map(f).collect::<Vec<_>>());
    let stats = AttentionStats {
        attention_mse: pick(|t| t.attention_mse),
        kernel_variance: pick(|t| t.kernel_variance),
        kernel_covariance: pick(|t| t.kernel_covariance),
    };
    Ok((stats, per))
}

/// Gram-matrix RMSE of one random ensemble against the exact kernel.
pub fn gram_rmse_trial(
    x: &DMatrix<f64>,
    exact: &DMatrix<f64>,
    m: usize,
    scheme: &CouplingSpec,
    params: &GaussianKernelParams,
    featurizer: Featurizer,
    seed: u64,
) -> Result<f64> {
    let ens = FrequencyEnsemble::generate(m, x.ncols(), scheme, seed)?;
    let phi = feature_matrix(x, &ens, params, featurizer)?;
    relative_rmse(&gram_estimate(&phi), exact)
}
