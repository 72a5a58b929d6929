//! The seven experiment runners.
//!
//! Every trial gets its own seed `substream(seed, cell, trial)`, where `cell`
//! counts (grid point, coupling) combinations in report order. Trials run in
//! parallel and are collected in order, so output does not depend on the
//! thread count.

use nalgebra::DMatrix;
use otrf_core::eucrf::{self, feature_matrix, gaussian_gram, gram_rmse_trial, rlf_lengthscale_heuristic};
use otrf_core::gp::{self, approx_posterior, exact_posterior_for, fit_hyperparams, gaussian_kl, FitConfig, RegressionData};
use otrf_core::graph::{erdos_renyi, exact_graph_kernel, SigmaCouplingFile};
use otrf_core::grf::{self, estimate_quantile_projections, grf_gram_estimate};
use otrf_core::matching::{averaged_sigma_cost, hungarian, node_pairs, SigmaTrainConfig};
use otrf_core::pagerank::{exact_pagerank, mc_pagerank, solve_pagerank_sigma, TargetPolicy};
use otrf_core::stats::{ratio_se, MeanSe};
use otrf_core::{
    couplings, rng, CouplingSpec, Featurizer, FrequencyEnsemble, GaussianKernelParams, GeometricParams, GraphData, ModulationFn,
    SigmaCoupling, WalkCoupling,
};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{parse_featurizer, ExperimentConfig, ExperimentKind};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_csv, ingest_graph, split_table, Split, Table};
use crate::report::{Report, Row, TrialTable};
use crate::row;

const STREAM_DATA: u64 = 1;
const STREAM_SIGMA_GRAPH: u64 = 2;
const STREAM_COPULA: u64 = 3;
const STREAM_TOKENS: u64 = 4;
const STREAM_SPLIT: u64 = 1_000;
const STREAM_GRAPH: u64 = 2_000;
const STREAM_SIGMA: u64 = 3_000;

pub fn trial_seed(seed: u64, cell: u64, trial: u64) -> u64 {
    rng::substream(seed, cell, trial).next_u64()
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn finite(xs: &[f64], what: &str) -> CliResult<()> {
    match xs.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(CliError::Numeric(format!("{what} produced a non-finite value ({v})"))),
        None => Ok(()),
    }
}

/// Run trials `0..trials` of one cell in parallel, in order.
fn run_cell<F>(seed: u64, cell: u64, trials: usize, f: F) -> CliResult<Vec<(u64, f64)>>
where
    F: Fn(u64) -> otrf_core::Result<f64> + Sync,
{
    let out: Vec<(u64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, cell, t);
            f(s).map(|v| (s, v))
        })
        .collect::<otrf_core::Result<_>>()?;
    Ok(out)
}

fn stat_fields(r: &mut Row, s: &MeanSe) {
    r.insert("mean".into(), json!(s.mean));
    r.insert("se".into(), json!(s.se));
    r.insert("two_se".into(), json!(2.0 * s.se));
    r.insert("trials".into(), json!(s.n));
}

/// Add `normalized` / `normalized_se` relative to the `iid` entry (or the
/// first one when iid was not run).
fn normalize(rows: &mut [Row], stats: &[MeanSe], tags: &[String], baseline: &str) {
    let b = tags.iter().position(|t| t == baseline).unwrap_or(0);
    for (i, r) in rows.iter_mut().enumerate() {
        let (ratio, se) = if i == b { (1.0, 0.0) } else { ratio_se(stats[i], stats[b]) };
        r.insert("baseline".into(), json!(tags[b]));
        r.insert("normalized".into(), json!(ratio));
        r.insert("normalized_se".into(), json!(se));
    }
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<(Report, ExperimentConfig)> {
    let mut cfg = cfg.clone();
    let kind = cfg.experiment.ok_or_else(|| CliError::Config("config has not been resolved".into()))?;
    let report = match kind {
        ExperimentKind::RfBench => rf_bench(&mut cfg)?,
        ExperimentKind::CopulaTrain => copula_train(&mut cfg)?,
        ExperimentKind::GrfBench => grf_bench(&cfg)?,
        ExperimentKind::SigmaTrain => sigma_train(&cfg)?,
        ExperimentKind::GpEval => gp_eval(&mut cfg)?,
        ExperimentKind::PagerankBench => pagerank_bench(&cfg)?,
        ExperimentKind::AttentionBench => attention_bench(&cfg)?,
    };
    Ok((report, cfg))
}

// ---- Euclidean data -------------------------------------------------------

fn load_table(cfg: &ExperimentConfig) -> CliResult<Table> {
    let dc = &cfg.data;
    match &dc.path {
        Some(p) => ingest_csv(p, dc.target.as_deref().unwrap_or_default()),
        None => {
            let (x, y) = gp::synthetic_regression(dc.synthetic_points, dc.synthetic_dim, dc.noise, &mut rng::stream(cfg.seed(), STREAM_DATA));
            Ok(Table { features: (0..x.ncols()).map(|i| format!("x{i}")).collect(), x, y })
        }
    }
}

fn load_split(cfg: &ExperimentConfig, table: &Table, index: usize) -> CliResult<Split> {
    split_table(table, cfg.data.train_fraction, cfg.data.max_points, &mut rng::stream(cfg.seed(), STREAM_SPLIT + index as u64))
}

/// Fill an empty m grid with the data dimension.
fn default_m(cfg: &mut ExperimentConfig, d: usize) {
    if cfg.m.is_empty() {
        cfg.m = vec![d];
    }
}

fn kernel_params(cfg: &ExperimentConfig, split: &Split, fz: Featurizer) -> CliResult<GaussianKernelParams> {
    let x = &split.x_train;
    let params = match (fz, cfg.kernel.lengthscale) {
        (Featurizer::Rff, Some(l)) => GaussianKernelParams::new(l, 1.0, 0.1)?,
        (Featurizer::Rff, None) => {
            let init = GaussianKernelParams::new((x.ncols() as f64).sqrt(), 1.0, 0.1)?;
            fit_hyperparams(x, &split.y_train, init, &FitConfig { lr: cfg.kernel.fit_lr, steps: cfg.kernel.fit_steps })?
        }
        (Featurizer::Rlf, l) => GaussianKernelParams::new(l.unwrap_or_else(|| rlf_lengthscale_heuristic(x)), 1.0, 0.0)?,
    };
    Ok(params)
}

fn params_json(p: &GaussianKernelParams) -> serde_json::Value {
    json!({ "lengthscale": p.lengthscale, "output_scale": p.output_scale, "noise_scale": p.noise_scale })
}

fn schemes(cfg: &ExperimentConfig, m: usize) -> CliResult<Vec<CouplingSpec>> {
    cfg.couplings.iter().map(|t| Ok(CouplingSpec::from_tag(t, m)?)).collect()
}

fn rf_bench(cfg: &mut ExperimentConfig) -> CliResult<Report> {
    let seed = cfg.seed();
    let table = load_table(cfg)?;
    let split = load_split(cfg, &table, 0)?;
    default_m(cfg, split.x_train.ncols());
    let x = &split.x_train;
    let mut report = Report::new(
        ExperimentKind::RfBench,
        seed,
        TrialTable::new(&["seed", "featurizer", "m", "coupling", "trial", "trial_seed", "rmse"]),
    );
    let mut fitted = serde_json::Map::new();
    let mut cell = 0u64;
    for fz_name in &cfg.featurizers {
        let fz = parse_featurizer(fz_name)?;
        let params = kernel_params(cfg, &split, fz)?;
        fitted.insert(fz_name.clone(), params_json(&params));
        let exact = gaussian_gram(x, &params);
        for &m in &cfg.m {
            let mut rows = Vec::new();
            let mut stats = Vec::new();
            for (tag, scheme) in cfg.couplings.iter().zip(schemes(cfg, m)?) {
                let res = run_cell(seed, cell, cfg.trials, |s| gram_rmse_trial(x, &exact, m, &scheme, &params, fz, s))?;
                cell += 1;
                let vals: Vec<f64> = res.iter().map(|r| r.1).collect();
                finite(&vals, "Gram RMSE")?;
                for (t, (s, v)) in res.iter().enumerate() {
                    report.trials.push(vec![seed.to_string(), fz_name.clone(), m.to_string(), tag.clone(), t.to_string(), s.to_string(), fmt(*v)]);
                }
                let st = MeanSe::from_samples(&vals);
                let mut r = row! { "seed" => seed, "featurizer" => fz_name, "m" => m, "coupling" => tag };
                stat_fields(&mut r, &st);
                rows.push(r);
                stats.push(st);
            }
            normalize(&mut rows, &stats, &cfg.couplings, "iid");
            report.results.extend(rows);
        }
    }
    report.details.insert("metric".into(), json!("relative Frobenius error of the Gram estimate"));
    report.details.insert("train_points".into(), json!(x.nrows()));
    report.details.insert("dim".into(), json!(x.ncols()));
    report.details.insert("kernel".into(), json!(fitted));
    Ok(report)
}

fn copula_train(cfg: &mut ExperimentConfig) -> CliResult<Report> {
    let seed = cfg.seed();
    let table = load_table(cfg)?;
    let split = load_split(cfg, &table, 0)?;
    let d = split.x_train.ncols();
    default_m(cfg, d);
    let x = &split.x_train;
    let fz = parse_featurizer(&cfg.featurizers[0])?;
    let params = kernel_params(cfg, &split, fz)?;
    let exact = gaussian_gram(x, &params);
    let mut report = Report::new(ExperimentKind::CopulaTrain, seed, TrialTable::new(&["seed", "m", "step", "loss"]));
    let cc = &cfg.copula;
    let mut cell = 0u64;
    for (mi, &m) in cfg.m.iter().enumerate() {
        let problem = couplings::CopulaProblem { x, kernel: params, featurizer: fz };
        let train = couplings::CopulaTrainConfig { lr: cc.lr, steps: cc.steps, mc_samples: cc.mc_samples, block: m };
        let fit = couplings::optimize_copula(&problem, &train, &mut rng::stream(seed, STREAM_COPULA + mi as u64))?;
        for (step, loss) in fit.loss_trace.iter().enumerate() {
            report.trials.push(vec![seed.to_string(), m.to_string(), step.to_string(), fmt(*loss)]);
        }
        let smoothed = couplings::smoothed_tail(&fit.loss_trace, cc.smoothing_window);
        let learned = CouplingSpec::Copula(fit.params.clone());
        let mut refs = Vec::new();
        for (tag, scheme) in [("copula", learned), ("orthogonal", CouplingSpec::Orthogonal), ("orthogonal_pnc", CouplingSpec::OrthogonalPnc)] {
            let res = run_cell(seed, cell, cc.reference_trials, |s| gram_rmse_trial(x, &exact, m, &scheme, &params, fz, s))?;
            cell += 1;
            let vals: Vec<f64> = res.iter().map(|r| r.1).collect();
            finite(&vals, "reference RMSE")?;
            refs.push((tag, MeanSe::from_samples(&vals)));
        }
        let pnc = refs[2].1;
        for (tag, st) in &refs {
            let mut r = row! { "seed" => seed, "featurizer" => &cfg.featurizers[0], "m" => m, "coupling" => tag };
            stat_fields(&mut r, st);
            r.insert("relative_to_pnc".into(), json!(st.mean / pnc.mean));
            if *tag == "copula" {
                r.insert("smoothed_training_loss".into(), json!(smoothed));
                r.insert("smoothed_relative_to_pnc".into(), json!(smoothed / pnc.mean));
                r.insert("theta".into(), json!(fit.params.theta()));
            }
            report.results.push(r);
        }
    }
    report.details.insert("kernel".into(), params_json(&params));
    report.details.insert("smoothing_window".into(), json!(cc.smoothing_window));
    Ok(report)
}

fn gp_eval(cfg: &mut ExperimentConfig) -> CliResult<Report> {
    let seed = cfg.seed();
    let table = load_table(cfg)?;
    let splits: Vec<Split> = (0..cfg.splits).map(|s| load_split(cfg, &table, s)).collect::<CliResult<_>>()?;
    default_m(cfg, table.x.ncols());
    // One set of hyperparameters, fitted on the first training split.
    let params = kernel_params(cfg, &splits[0], Featurizer::Rff)?;
    if !(params.noise_scale > 0.0) {
        return Err(CliError::Config("GP evaluation needs a positive noise scale".into()));
    }
    let exact: Vec<_> = splits
        .iter()
        .map(|sp| {
            let data = RegressionData::new(sp.x_train.clone(), sp.y_train.clone(), sp.x_test.clone())?;
            exact_posterior_for(&data, &params)
        })
        .collect::<otrf_core::Result<_>>()?;
    let mut report = Report::new(
        ExperimentKind::GpEval,
        seed,
        TrialTable::new(&["seed", "m", "coupling", "split", "trial", "trial_seed", "kl", "test_rmse"]),
    );
    let mut cell = 0u64;
    for &m in &cfg.m {
        // Per-split mean KL for each coupling.
        let mut per_split: Vec<Vec<f64>> = Vec::new();
        let mut rmse_per_split: Vec<Vec<f64>> = Vec::new();
        for (tag, scheme) in cfg.couplings.iter().zip(schemes(cfg, m)?) {
            let mut kls = Vec::with_capacity(splits.len());
            let mut rmses = Vec::with_capacity(splits.len());
            for (si, sp) in splits.iter().enumerate() {
                let res: Vec<(u64, f64, f64)> = (0..cfg.trials as u64)
                    .into_par_iter()
                    .map(|t| {
                        let s = trial_seed(seed, cell, t);
                        let ens = FrequencyEnsemble::generate(m, sp.x_train.ncols(), &scheme, s)?;
                        let fd = feature_matrix(&sp.x_train, &ens, &params, Featurizer::Rff)?;
                        let fp = feature_matrix(&sp.x_test, &ens, &params, Featurizer::Rff)?;
                        let q = approx_posterior(&fd, &fp, &sp.y_train, params.noise_scale)?;
                        let kl = gaussian_kl(&exact[si], &q)?;
                        let rmse = ((&q.mean - &sp.y_test).norm_squared() / sp.y_test.len() as f64).sqrt();
                        Ok((s, kl, rmse))
                    })
                    .collect::<otrf_core::Result<_>>()?;
                cell += 1;
                let kl: Vec<f64> = res.iter().map(|r| r.1).collect();
                let rm: Vec<f64> = res.iter().map(|r| r.2).collect();
                finite(&kl, "posterior KL")?;
                finite(&rm, "test RMSE")?;
                for (t, (s, k, r)) in res.iter().enumerate() {
                    report.trials.push(vec![seed.to_string(), m.to_string(), tag.clone(), si.to_string(), t.to_string(), s.to_string(), fmt(*k), fmt(*r)]);
                }
                kls.push(otrf_core::stats::mean(&kl));
                rmses.push(otrf_core::stats::mean(&rm));
            }
            per_split.push(kls);
            rmse_per_split.push(rmses);
        }
        let b = cfg.couplings.iter().position(|t| t == "orthogonal").unwrap_or(0);
        for (ci, tag) in cfg.couplings.iter().enumerate() {
            let st = MeanSe::from_samples(&per_split[ci]);
            let mut r = row! { "seed" => seed, "m" => m, "coupling" => tag };
            stat_fields(&mut r, &st);
            r.insert("trials".into(), json!(cfg.trials));
            r.insert("splits".into(), json!(splits.len()));
            r.insert("kl_per_test_point".into(), json!(st.mean / splits[0].y_test.len() as f64));
            r.insert("test_rmse".into(), json!(otrf_core::stats::mean(&rmse_per_split[ci])));
            let diff: Vec<f64> = per_split[ci].iter().zip(&per_split[b]).map(|(a, c)| a - c).collect();
            let ds = MeanSe::from_samples(&diff);
            r.insert("paired_baseline".into(), json!(cfg.couplings[b]));
            r.insert("paired_diff".into(), json!(if ci == b { 0.0 } else { ds.mean }));
            r.insert("paired_diff_se".into(), json!(if ci == b { 0.0 } else { ds.se }));
            report.results.push(r);
        }
    }
    let exact_rmse: Vec<f64> =
        exact.iter().zip(&splits).map(|(p, sp)| ((&p.mean - &sp.y_test).norm_squared() / sp.y_test.len() as f64).sqrt()).collect();
    report.details.insert("metric".into(), json!("KL(exact || approximate) in nats over all test points, averaged per split"));
    report.details.insert("kernel".into(), params_json(&params));
    report.details.insert("exact_test_rmse".into(), json!(otrf_core::stats::mean(&exact_rmse)));
    Ok(report)
}

fn attention_bench(cfg: &ExperimentConfig) -> CliResult<Report> {
    let seed = cfg.seed();
    let (n, d) = (cfg.attention.tokens, cfg.attention.dim);
    // Tokens ~ N(0, I / sqrt(d)).
    let sd = (d as f64).powf(-0.25);
    let mut r = rng::stream(seed, STREAM_TOKENS);
    let x = DMatrix::from_fn(n, d, |_, _| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r));
    let mut report = Report::new(
        ExperimentKind::AttentionBench,
        seed,
        TrialTable::new(&["seed", "m", "coupling", "trial", "attention_mse", "kernel_variance", "kernel_covariance"]),
    );
    let mut cell = 0u64;
    for &m in &cfg.m {
        let mut rows = Vec::new();
        let mut stats = Vec::new();
        for (tag, scheme) in cfg.couplings.iter().zip(schemes(cfg, m)?) {
            let (st, per) = eucrf::attention_estimate(&x, m, &scheme, cfg.trials, trial_seed(seed, cell, 0))?;
            cell += 1;
            let mse: Vec<f64> = per.iter().map(|t| t.attention_mse).collect();
            finite(&mse, "attention MSE")?;
            for (t, p) in per.iter().enumerate() {
                report.trials.push(vec![
                    seed.to_string(),
                    m.to_string(),
                    tag.clone(),
                    t.to_string(),
                    fmt(p.attention_mse),
                    fmt(p.kernel_variance),
                    fmt(p.kernel_covariance),
                ]);
            }
            let mut row = row! { "seed" => seed, "m" => m, "coupling" => tag };
            stat_fields(&mut row, &st.attention_mse);
            row.insert("kernel_variance".into(), json!(st.kernel_variance));
            row.insert("kernel_covariance".into(), json!(st.kernel_covariance));
            rows.push(row);
            stats.push(st.attention_mse);
        }
        normalize(&mut rows, &stats, &cfg.couplings, "orthogonal");
        report.results.extend(rows);
    }
    report.details.insert("metric".into(), json!("attention MSE averaged over rows"));
    report.details.insert("tokens".into(), json!(n));
    report.details.insert("dim".into(), json!(d));
    Ok(report)
}

// ---- graphs ----------------------------------------------------------------

fn load_graphs(cfg: &ExperimentConfig) -> CliResult<Vec<(String, GraphData)>> {
    let gc = &cfg.graph;
    match &gc.path {
        Some(p) => Ok(vec![(p.file_name().map_or_else(|| "graph".into(), |s| s.to_string_lossy().into_owned()), ingest_graph(p)?)]),
        None => (0..gc.count)
            .map(|i| Ok((format!("er{i}"), erdos_renyi(gc.nodes, gc.edge_prob, &mut rng::stream(cfg.seed(), STREAM_GRAPH + i as u64))?)))
            .collect(),
    }
}

fn sigma_train_graph(cfg: &ExperimentConfig) -> CliResult<GraphData> {
    let sc = &cfg.sigma;
    Ok(erdos_renyi(sc.train_nodes, sc.train_edge_prob, &mut rng::stream(cfg.seed(), STREAM_SIGMA_GRAPH))?)
}

fn load_sigma_file(cfg: &ExperimentConfig) -> CliResult<Option<Vec<SigmaCouplingFile>>> {
    let Some(p) = &cfg.sigma.path else { return Ok(None) };
    let input = |msg: String| CliError::Input { path: p.clone(), msg };
    let text = std::fs::read_to_string(p).map_err(|e| input(e.to_string()))?;
    let files: Vec<SigmaCouplingFile> = serde_json::from_str(&text).map_err(|e| input(e.to_string()))?;
    for f in &files {
        SigmaCoupling::from_file(f).map_err(|e| input(e.to_string()))?;
    }
    Ok(Some(files))
}

fn pick_sigma(files: &[SigmaCouplingFile], p: f64, n: usize) -> CliResult<SigmaCoupling> {
    let f = files
        .iter()
        .find(|f| f.n == n && (f.p_halt - p).abs() < 1e-12)
        .ok_or_else(|| CliError::Config(format!("sigma file has no coupling for p_halt = {p}, n = {n}")))?;
    Ok(SigmaCoupling::from_file(f)?)
}

/// Walk couplings for one halting probability, with the `n` used by sigma
/// entries (`None` for the others).
fn walk_couplings(
    cfg: &ExperimentConfig,
    p: f64,
    pi: usize,
    sigma_for: &mut dyn FnMut(f64, usize, usize, usize) -> CliResult<SigmaCoupling>,
) -> CliResult<Vec<(WalkCoupling, Option<usize>)>> {
    let mut out = Vec::new();
    for tag in &cfg.couplings {
        match tag.as_str() {
            "iid" => out.push((WalkCoupling::Iid, None)),
            "antithetic" => out.push((WalkCoupling::AntitheticTermination, None)),
            "sigma" => {
                for (ni, &n) in cfg.n.iter().enumerate() {
                    out.push((WalkCoupling::Sigma(sigma_for(p, n, pi, ni)?), Some(n)));
                }
            }
            other => return Err(CliError::Config(format!("unknown walk coupling '{other}'"))),
        }
    }
    Ok(out)
}

fn sigma_stream(cfg: &ExperimentConfig, pi: usize, ni: usize) -> rng::Rng {
    rng::stream(cfg.seed(), STREAM_SIGMA + (pi * cfg.n.len() + ni) as u64)
}

fn coupling_label(c: &WalkCoupling) -> String {
    c.tag().to_string()
}

fn walk_stats_rows(rows: &mut [Row], stats: &[MeanSe], tags: &[String]) {
    normalize(rows, stats, tags, "iid");
}

fn grf_bench(cfg: &ExperimentConfig) -> CliResult<Report> {
    let seed = cfg.seed();
    let graphs = load_graphs(cfg)?;
    let spec = cfg.kernel.graph;
    let f = ModulationFn::for_kernel(&spec, grf::K_MAX)?;
    let files = load_sigma_file(cfg)?;
    let train = if files.is_none() && cfg.couplings.iter().any(|c| c == "sigma") { Some(sigma_train_graph(cfg)?) } else { None };
    let sc = &cfg.sigma;
    let mut sigma_for = |p: f64, n: usize, pi: usize, ni: usize| -> CliResult<SigmaCoupling> {
        match (&files, &train) {
            (Some(fs), _) => pick_sigma(fs, p, n),
            (None, Some(g)) => {
                let tc = SigmaTrainConfig { walks_per_quantile: sc.walks_per_quantile, max_pairs: sc.max_pairs };
                Ok(otrf_core::matching::solve_sigma_coupling(g, p, n, &f, &tc, &mut sigma_stream(cfg, pi, ni))?)
            }
            (None, None) => unreachable!("sigma requested without a training graph"),
        }
    };
    let per_p: Vec<Vec<(WalkCoupling, Option<usize>)>> =
        cfg.p_halt.iter().enumerate().map(|(pi, &p)| walk_couplings(cfg, p, pi, &mut sigma_for)).collect::<CliResult<_>>()?;
    let mut report = Report::new(
        ExperimentKind::GrfBench,
        seed,
        TrialTable::new(&["seed", "graph", "p_halt", "m", "coupling", "n", "trial", "trial_seed", "error"]),
    );
    let mut cell = 0u64;
    for (gname, g) in &graphs {
        let exact = exact_graph_kernel(g, &spec)?;
        let exact_norm = exact.norm();
        for (pi, &p) in cfg.p_halt.iter().enumerate() {
            for &m in &cfg.m {
                let mut rows = Vec::new();
                let mut stats = Vec::new();
                let mut tags = Vec::new();
                for (wc, n) in &per_p[pi] {
                    let res = run_cell(seed, cell, cfg.trials, |s| Ok((grf_gram_estimate(g, m, wc, &f, p, s)? - &exact).norm() / exact_norm))?;
                    cell += 1;
                    let vals: Vec<f64> = res.iter().map(|r| r.1).collect();
                    finite(&vals, "GRF Gram error")?;
                    let label = coupling_label(wc);
                    let n_str = n.map_or_else(String::new, |n| n.to_string());
                    for (t, (s, v)) in res.iter().enumerate() {
                        report.trials.push(vec![
                            seed.to_string(),
                            gname.clone(),
                            fmt(p),
                            m.to_string(),
                            label.clone(),
                            n_str.clone(),
                            t.to_string(),
                            s.to_string(),
                            fmt(*v),
                        ]);
                    }
                    let st = MeanSe::from_samples(&vals);
                    let mut r = row! { "seed" => seed, "graph" => gname, "nodes" => g.n(), "p_halt" => p, "m" => m, "coupling" => &label, "n" => n };
                    stat_fields(&mut r, &st);
                    rows.push(r);
                    stats.push(st);
                    tags.push(label);
                }
                walk_stats_rows(&mut rows, &stats, &tags);
                report.results.extend(rows);
            }
        }
    }
    report.details.insert("metric".into(), json!("relative Frobenius error of the GRF Gram estimate"));
    report.details.insert("kernel".into(), serde_json::to_value(spec).expect("kernel spec serializes"));
    report.details.insert("sigma_source".into(), json!(if files.is_some() { "file" } else { "trained" }));
    Ok(report)
}

fn sigma_train(cfg: &ExperimentConfig) -> CliResult<Report> {
    let seed = cfg.seed();
    let g = match &cfg.graph.path {
        Some(p) => ingest_graph(p)?,
        None => sigma_train_graph(cfg)?,
    };
    let f = ModulationFn::for_kernel(&cfg.kernel.graph, grf::K_MAX)?;
    let sc = &cfg.sigma;
    let mut report = Report::new(ExperimentKind::SigmaTrain, seed, TrialTable::new(&["seed", "p_halt", "n", "quantile", "sigma"]));
    let mut files = Vec::new();
    for (pi, &p) in cfg.p_halt.iter().enumerate() {
        for (ni, &n) in cfg.n.iter().enumerate() {
            // Same draw order as `matching::solve_sigma_coupling`, so the
            // permutations match what grf-bench trains on the fly.
            let mut r = sigma_stream(cfg, pi, ni);
            let qp = estimate_quantile_projections(&g, n, p, &f, sc.walks_per_quantile, r.next_u64())?;
            let pairs = node_pairs(g.n(), sc.max_pairs, &mut r);
            let c = averaged_sigma_cost(&qp, &pairs)?;
            let (perm, cost) = hungarian(&c);
            let identity: Vec<usize> = (0..n).collect();
            let reversal: Vec<usize> = (0..n).rev().collect();
            let coupling = SigmaCoupling::new(perm, GeometricParams::new(p)?)?;
            let file = coupling.to_file(seed);
            for (q, s) in file.sigma.iter().enumerate() {
                report.trials.push(vec![seed.to_string(), fmt(p), n.to_string(), (q + 1).to_string(), s.to_string()]);
            }
            report.results.push(row! {
                "seed" => seed,
                "p_halt" => p,
                "n" => n,
                "coupling" => "sigma",
                "cost" => cost,
                "identity_cost" => c.assignment_cost(&identity),
                "reversal_cost" => c.assignment_cost(&reversal),
                "node_pairs" => pairs.len(),
                "sigma" => &file.sigma,
            });
            files.push(file);
        }
    }
    let body = serde_json::to_string_pretty(&files).expect("sigma couplings serialize") + "\n";
    report.artifacts.push(("sigma_couplings.json".into(), body));
    report.details.insert("graph_nodes".into(), json!(g.n()));
    report.details.insert("kernel".into(), serde_json::to_value(cfg.kernel.graph).expect("kernel spec serializes"));
    report.details.insert("sigma_indexing".into(), json!("1-based"));
    Ok(report)
}

fn pagerank_bench(cfg: &ExperimentConfig) -> CliResult<Report> {
    let seed = cfg.seed();
    let graphs = load_graphs(cfg)?;
    let files = load_sigma_file(cfg)?;
    let train = if files.is_none() && cfg.couplings.iter().any(|c| c == "sigma") { Some(sigma_train_graph(cfg)?) } else { None };
    let samples = cfg.sigma.samples;
    let mut sigma_for = |p: f64, n: usize, pi: usize, ni: usize| -> CliResult<SigmaCoupling> {
        match (&files, &train) {
            (Some(fs), _) => pick_sigma(fs, p, n),
            (None, Some(g)) => Ok(solve_pagerank_sigma(g, p, n, TargetPolicy::Average, samples, &mut sigma_stream(cfg, pi, ni))?),
            (None, None) => unreachable!("sigma requested without a training graph"),
        }
    };
    let per_p: Vec<Vec<(WalkCoupling, Option<usize>)>> =
        cfg.p_halt.iter().enumerate().map(|(pi, &p)| walk_couplings(cfg, p, pi, &mut sigma_for)).collect::<CliResult<_>>()?;
    let mut report = Report::new(
        ExperimentKind::PagerankBench,
        seed,
        TrialTable::new(&["seed", "graph", "p_halt", "m", "coupling", "n", "trial", "trial_seed", "l2_error", "mass"]),
    );
    let mut cell = 0u64;
    let mut unit_mass = true;
    for (gname, g) in &graphs {
        for (pi, &p) in cfg.p_halt.iter().enumerate() {
            let exact = exact_pagerank(g, p)?;
            for &m in &cfg.m {
                let mut rows = Vec::new();
                let mut stats = Vec::new();
                let mut tags = Vec::new();
                for (wc, n) in &per_p[pi] {
                    let res: Vec<(u64, f64, f64)> = (0..cfg.trials as u64)
                        .into_par_iter()
                        .map(|t| {
                            let s = trial_seed(seed, cell, t);
                            let est = mc_pagerank(g, p, m, wc, s)?;
                            Ok((s, est.l2_error(&exact), est.mass()))
                        })
                        .collect::<otrf_core::Result<_>>()?;
                    cell += 1;
                    let vals: Vec<f64> = res.iter().map(|r| r.1).collect();
                    finite(&vals, "PageRank error")?;
                    unit_mass &= res.iter().all(|r| r.2 == 1.0);
                    let label = coupling_label(wc);
                    let n_str = n.map_or_else(String::new, |n| n.to_string());
                    for (t, (s, v, mass)) in res.iter().enumerate() {
                        report.trials.push(vec![
                            seed.to_string(),
                            gname.clone(),
                            fmt(p),
                            m.to_string(),
                            label.clone(),
                            n_str.clone(),
                            t.to_string(),
                            s.to_string(),
                            fmt(*v),
                            fmt(*mass),
                        ]);
                    }
                    let st = MeanSe::from_samples(&vals);
                    let mut r = row! { "seed" => seed, "graph" => gname, "nodes" => g.n(), "p_halt" => p, "m" => m, "coupling" => &label, "n" => n };
                    stat_fields(&mut r, &st);
                    rows.push(r);
                    stats.push(st);
                    tags.push(label);
                }
                walk_stats_rows(&mut rows, &stats, &tags);
                report.results.extend(rows);
            }
        }
    }
    report.details.insert("metric".into(), json!("L2 error of the PageRank estimate"));
    report.details.insert("unit_mass".into(), json!(unit_mass));
    report.details.insert("sigma_source".into(), json!(if files.is_some() { "file" } else { "trained" }));
    Ok(report)
}
