//! Gaussian-process regression with exact and random-feature kernels.
//!
//! Predictive covariances are reported in observation space, i.e. both the
//! exact and the approximate posterior include the `sigma_n^2 I` term, so the
//! two forms coincide exactly when the feature Gram matrix equals the kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng as _, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::couplings::{Adam, AdamState};
use crate::error::{ensure_dims, Error, Result};
use crate::eucrf::{gaussian_gram, FeatureMatrix, GaussianKernelParams};

/// Largest training set accepted by [`fit_hyperparams`].
pub const MAX_TRAIN: usize = 256;

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

/// Predictive mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        ensure_dims(mean.len(), cov.nrows())?;
        ensure_dims(cov.nrows(), cov.ncols())?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn summary(&self, kl: Option<f64>, rmse: Option<f64>) -> PosteriorSummary {
        PosteriorSummary {
            mean: self.mean.iter().copied().collect(),
            cov_diag: self.cov.diagonal().iter().copied().collect(),
            kl,
            rmse,
        }
    }
}

/// JSON export shape of a posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
    pub kl: Option<f64>,
    pub rmse: Option<f64>,
}

/// Training inputs/targets (rows are points) and prediction inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub x_pred: DMatrix<f64>,
}

impl RegressionData {
    pub fn new(x_train: DMatrix<f64>, y_train: DVector<f64>, x_pred: DMatrix<f64>) -> Result<Self> {
        ensure_dims(x_train.nrows(), y_train.len())?;
        if x_pred.nrows() == 0 {
            return Err(Error::InvalidRequest("prediction set is empty".into()));
        }
        if x_train.nrows() > 0 {
            ensure_dims(x_train.ncols(), x_pred.ncols())?;
        }
        Ok(Self { x_train, y_train, x_pred })
    }
}

/// Cholesky factorization, adding diagonal jitter `c * trace / N` with `c`
/// escalating from 1e-8 to 1e-4 if the plain factorization fails. Returns
/// the factor and the jitter that was added.
pub fn robust_cholesky(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = a.clone().cholesky() {
        return Ok((c, 0.0));
    }
    let n = a.nrows().max(1) as f64;
    let scale = (a.trace() / n).abs().max(f64::MIN_POSITIVE);
    let mut c = JITTER_START;
    while c <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = c * scale;
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter;
        }
        if let Some(ch) = b.cholesky() {
            return Ok((ch, jitter));
        }
        c *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: JITTER_MAX * scale })
}

fn add_noise(mut m: DMatrix<f64>, var: f64) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        m[(i, i)] += var;
    }
    m
}

/// Exact GP predictive from kernel blocks.
pub fn exact_posterior(
    k_dd: &DMatrix<f64>,
    k_pd: &DMatrix<f64>,
    k_pp: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma_n: f64,
) -> Result<GaussianPosterior> {
    let n = k_dd.nrows();
    let p = k_pp.nrows();
    ensure_dims(n, k_dd.ncols())?;
    ensure_dims(n, y.len())?;
    ensure_dims(p, k_pp.ncols())?;
    ensure_dims(p, k_pd.nrows())?;
    ensure_dims(n, k_pd.ncols())?;
    if !(sigma_n > 0.0) {
        return Err(Error::Domain(format!("sigma_n must be positive, got {sigma_n}")));
    }
    let var = sigma_n * sigma_n;
    if n == 0 {
        return GaussianPosterior::new(DVector::zeros(p), add_noise(k_pp.clone(), var));
    }
    let (chol, _) = robust_cholesky(&add_noise(k_dd.clone(), var))?;
    let alpha = chol.solve(y);
    let mean = k_pd * alpha;
    let v = chol.l().solve_lower_triangular(&k_pd.transpose()).expect("triangular factor is nonsingular");
    let cov = add_noise(k_pp - v.tr_mul(&v), var);
    GaussianPosterior::new(mean, symmetrize(cov))
}

/// Predictive of the Bayesian linear model on features, computed in feature
/// space. Columns of `phi_d` / `phi_p` are training / prediction points.
pub fn approx_posterior(
    phi_d: &FeatureMatrix,
    phi_p: &FeatureMatrix,
    y: &DVector<f64>,
    sigma_n: f64,
) -> Result<GaussianPosterior> {
    let (fd, fp) = (phi_d.as_matrix(), phi_p.as_matrix());
    ensure_dims(fd.nrows(), fp.nrows())?;
    ensure_dims(fd.ncols(), y.len())?;
    if !(sigma_n > 0.0) {
        return Err(Error::Domain(format!("sigma_n must be positive, got {sigma_n}")));
    }
    let var = sigma_n * sigma_n;
    let b = add_noise(fd * fd.transpose() / var, 1.0);
    let (chol, _) = robust_cholesky(&b)?;
    let rhs = fd * y / var;
    let mean = fp.tr_mul(&chol.solve(&rhs));
    let v = chol.l().solve_lower_triangular(fp).expect("triangular factor is nonsingular");
    let cov = add_noise(v.tr_mul(&v), var);
    GaussianPosterior::new(mean, symmetrize(cov))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Gaussian log evidence `log N(y | 0, K_dd + sigma_n^2 I)`.
pub fn log_marginal_likelihood(k_dd: &DMatrix<f64>, y: &DVector<f64>, sigma_n: f64) -> Result<f64> {
    ensure_dims(k_dd.nrows(), y.len())?;
    let (chol, _) = robust_cholesky(&add_noise(k_dd.clone(), sigma_n * sigma_n))?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let n = y.len() as f64;
    let v = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    if !v.is_finite() {
        return Err(Error::NonFinite("log marginal likelihood".into()));
    }
    Ok(v)
}

/// Log evidence of the Gaussian kernel GP and its gradient with respect to
/// `(log l, log sigma_v, log sigma_n)`.
pub fn lml_and_grad(x: &DMatrix<f64>, y: &DVector<f64>, params: &GaussianKernelParams) -> Result<(f64, [f64; 3])> {
    ensure_dims(x.nrows(), y.len())?;
    let n = x.nrows();
    let k = gaussian_gram(x, params);
    let var = params.noise_scale.powi(2);
    let (chol, _) = robust_cholesky(&add_noise(k.clone(), var))?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    // dL/dtheta = 0.5 tr((alpha alpha^T - A^{-1}) dA/dtheta)
    let w = &alpha * alpha.transpose() - chol.inverse();
    let ell2 = params.lengthscale.powi(2);
    let mut g_ell = 0.0;
    let mut g_sv = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d2 = (x.row(i) - x.row(j)).norm_squared();
            g_ell += w[(i, j)] * k[(i, j)] * d2 / ell2;
            g_sv += w[(i, j)] * 2.0 * k[(i, j)];
        }
    }
    let g_sn = w.trace() * 2.0 * var;
    let grad = [0.5 * g_ell, 0.5 * g_sv, 0.5 * g_sn];
    if !lml.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("log marginal likelihood".into()));
    }
    Ok((lml, grad))
}

/// Settings for [`fit_hyperparams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lr: f64,
    pub steps: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { lr: 1e-2, steps: 500 }
    }
}

/// Maximise the log evidence over log-hyperparameters with Adam.
pub fn fit_hyperparams(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    init: GaussianKernelParams,
    cfg: &FitConfig,
) -> Result<GaussianKernelParams> {
    if x.nrows() > MAX_TRAIN {
        return Err(Error::InvalidRequest(format!("{} training points exceeds the limit of {MAX_TRAIN}", x.nrows())));
    }
    if cfg.steps > 5000 {
        return Err(Error::InvalidRequest("at most 5000 fitting steps".into()));
    }
    if !(init.noise_scale > 0.0) {
        return Err(Error::Domain("initial noise scale must be positive".into()));
    }
    let mut logs = [init.lengthscale.ln(), init.output_scale.ln(), init.noise_scale.ln()];
    let mut adam = AdamState::new(Adam::with_lr(cfg.lr), 3);
    let params_of = |l: &[f64; 3]| GaussianKernelParams { lengthscale: l[0].exp(), output_scale: l[1].exp(), noise_scale: l[2].exp() };
    for _ in 0..cfg.steps {
        let (_, g) = lml_and_grad(x, y, &params_of(&logs))?;
        let neg = [-g[0], -g[1], -g[2]];
        adam.step(&mut logs, &neg);
        // Keep the noise away from zero so the evidence stays well-posed.
        logs[2] = logs[2].max(-10.0);
    }
    Ok(params_of(&logs))
}

/// Report mode for KL divergences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    Total,
    PerDatapoint,
}

const KL_NEG_TOL: f64 = 1e-10;

/// `KL(p || q)` in nats between two multivariate normals.
pub fn gaussian_kl(p: &GaussianPosterior, q: &GaussianPosterior) -> Result<f64> {
    ensure_dims(p.dim(), q.dim())?;
    let k = p.dim();
    if k == 0 {
        return Ok(0.0);
    }
    let (cq, _) = robust_cholesky(&q.cov)?;
    let (cp, _) = robust_cholesky(&p.cov)?;
    let ld = |c: &Cholesky<f64, Dyn>| c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let lq = cq.l();
    let a = lq.solve_lower_triangular(&cp.l()).expect("triangular factor is nonsingular");
    let trace = a.norm_squared();
    let diff = &q.mean - &p.mean;
    let b = lq.solve_lower_triangular(&diff).expect("triangular factor is nonsingular");
    let kl = 0.5 * (trace + b.norm_squared() - k as f64 + ld(&cq) - ld(&cp));
    if !kl.is_finite() {
        return Err(Error::NonFinite("KL divergence".into()));
    }
    if kl < 0.0 {
        if kl >= -KL_NEG_TOL * (1.0 + trace) {
            return Ok(0.0);
        }
        return Err(Error::NonFinite(format!("negative KL divergence {kl}")));
    }
    Ok(kl)
}

/// KL with the chosen normalisation.
pub fn gaussian_kl_mode(p: &GaussianPosterior, q: &GaussianPosterior, mode: KlMode) -> Result<f64> {
    let kl = gaussian_kl(p, q)?;
    Ok(match mode {
        KlMode::Total => kl,
        KlMode::PerDatapoint => kl / p.dim().max(1) as f64,
    })
}

/// Exact posterior for the Gaussian kernel on a regression set.
pub fn exact_posterior_for(data: &RegressionData, params: &GaussianKernelParams) -> Result<GaussianPosterior> {
    let k_dd = gaussian_gram(&data.x_train, params);
    let k_pd = crate::eucrf::gaussian_cross(&data.x_pred, &data.x_train, params);
    let k_pp = gaussian_gram(&data.x_pred, params);
    exact_posterior(&k_dd, &k_pd, &k_pp, &data.y_train, params.noise_scale)
}

/// Synthetic regression set: `x ~ N(0, I_d)`, `y = sin(a.x) + cos(b.x) / 2 +
/// noise`, with `a, b ~ N(0, I_d / d)` drawn once from `rng`.
pub fn synthetic_regression(n: usize, d: usize, noise: f64, rng: &mut impl RngCore) -> (DMatrix<f64>, DVector<f64>) {
    let s = 1.0 / (d.max(1) as f64).sqrt();
    let a = DVector::<f64>::from_fn(d, |_, _| s * rng.sample::<f64, _>(StandardNormal));
    let b = DVector::<f64>::from_fn(d, |_, _| s * rng.sample::<f64, _>(StandardNormal));
    let x = DMatrix::<f64>::from_fn(n, d, |_, _| rng.sample(StandardNormal));
    let y = DVector::from_fn(n, |i, _| {
        let row = x.row(i).transpose();
        row.dot(&a).sin() + 0.5 * row.dot(&b).cos() + noise * rng.sample::<f64, _>(StandardNormal)
    });
    (x, y)
}
