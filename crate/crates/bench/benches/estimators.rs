use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use otrf_bench::{er_graph, kernel, modulation, points};
use otrf_core::eucrf::{feature_matrix, gaussian_gram, gram_rmse_trial};
use otrf_core::gp::{approx_posterior, exact_posterior_for, RegressionData};
use otrf_core::grf::grf_gram_estimate;
use otrf_core::matching::{hungarian, solve_sigma_coupling, SigmaTrainConfig};
use otrf_core::pagerank::mc_pagerank;
use otrf_core::{rng, CostMatrix, CouplingSpec, Featurizer, FrequencyEnsemble, WalkCoupling};
use rand::Rng;

fn ensembles(c: &mut Criterion) {
    let mut g = c.benchmark_group("ensemble_m64_d16");
    for tag in ["iid", "orthogonal", "orthogonal_pnc", "halton"] {
        let scheme = CouplingSpec::from_tag(tag, 64).unwrap();
        g.bench_function(tag, |b| b.iter(|| FrequencyEnsemble::generate(64, 16, &scheme, 7).unwrap()));
    }
    g.finish();
}

fn gram(c: &mut Criterion) {
    let x = points(128, 8, 1);
    let p = kernel(8);
    let exact = gaussian_gram(&x, &p);
    let mut g = c.benchmark_group("gram_rmse_n128_d8");
    for fz in [Featurizer::Rff, Featurizer::Rlf] {
        for m in [8, 64] {
            g.bench_with_input(BenchmarkId::new(format!("{fz:?}"), m), &m, |b, &m| {
                b.iter(|| gram_rmse_trial(&x, &exact, m, &CouplingSpec::OrthogonalPnc, &p, fz, 3).unwrap())
            });
        }
    }
    g.finish();
}

fn gp_posteriors(c: &mut Criterion) {
    let x = points(256, 8, 2);
    let y = x.column(0).map(f64::sin);
    let p = kernel(8);
    let (xt, xp) = (x.rows(0, 128).into_owned(), x.rows(128, 128).into_owned());
    let yt = y.rows(0, 128).into_owned();
    let data = RegressionData::new(xt.clone(), yt.clone(), xp.clone()).unwrap();
    let ens = FrequencyEnsemble::generate(64, 8, &CouplingSpec::Orthogonal, 4).unwrap();
    let (fd, fp) = (feature_matrix(&xt, &ens, &p, Featurizer::Rff).unwrap(), feature_matrix(&xp, &ens, &p, Featurizer::Rff).unwrap());
    let mut g = c.benchmark_group("gp_posterior_n128");
    g.bench_function("exact", |b| b.iter(|| exact_posterior_for(&data, &p).unwrap()));
    g.bench_function("rff_m64", |b| b.iter(|| approx_posterior(&fd, &fp, &yt, p.noise_scale).unwrap()));
    g.finish();
}

fn assignment(c: &mut Criterion) {
    let mut r = rng::seeded(5);
    let mut g = c.benchmark_group("hungarian");
    for n in [10, 30, 100] {
        let cost = CostMatrix::new(DMatrix::from_fn(n, n, |_, _| r.random::<f64>())).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| b.iter(|| hungarian(cost)));
    }
    g.finish();
}

fn graph_estimators(c: &mut Criterion) {
    let graph = er_graph(100, 0.1, 6);
    let f = modulation();
    let sigma = solve_sigma_coupling(&graph, 0.3, 10, &f, &SigmaTrainConfig { walks_per_quantile: 20, max_pairs: 500 }, &mut rng::seeded(8)).unwrap();
    let couplings = [WalkCoupling::Iid, WalkCoupling::AntitheticTermination, WalkCoupling::Sigma(sigma)];
    let mut g = c.benchmark_group("er100_p0.3_m2");
    for wc in &couplings {
        g.bench_function(format!("grf_gram/{}", wc.tag()), |b| b.iter(|| grf_gram_estimate(&graph, 2, wc, &f, 0.3, 9).unwrap()));
        g.bench_function(format!("pagerank/{}", wc.tag()), |b| b.iter(|| mc_pagerank(&graph, 0.3, 2, wc, 9).unwrap()));
    }
    g.finish();
}

fn config() -> Criterion {
    Criterion::default().sample_size(20).warm_up_time(Duration::from_millis(500)).measurement_time(Duration::from_secs(2))
}

criterion_group! {
    name = benches;
    config = config();
    targets = ensembles, gram, gp_posteriors, assignment, graph_estimators
}
criterion_main!(benches);
