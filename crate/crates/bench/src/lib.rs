//! Fixed inputs shared by the criterion benches.

use nalgebra::DMatrix;
use otrf_core::graph::erdos_renyi;
use otrf_core::{gp, rng, GaussianKernelParams, GraphData, GraphKernelSpec, ModulationFn};

/// `n x d` standard-normal points.
pub fn points(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    gp::synthetic_regression(n, d, 0.0, &mut rng::seeded(seed)).0
}

pub fn kernel(d: usize) -> GaussianKernelParams {
    GaussianKernelParams::new((d as f64).sqrt(), 1.0, 0.1).expect("valid kernel")
}

pub fn er_graph(n: usize, p_edge: f64, seed: u64) -> GraphData {
    erdos_renyi(n, p_edge, &mut rng::seeded(seed)).expect("valid graph")
}

pub fn modulation() -> ModulationFn {
    let spec = GraphKernelSpec::regularized_laplacian(1.0, 2).expect("valid spec");
    ModulationFn::for_kernel(&spec, otrf_core::grf::K_MAX).expect("modulation")
}
