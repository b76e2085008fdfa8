//! Fixtures shared by the benchmarks.

use rsmpc_core::{cvar_envelope, solve_pe, MpcController, Plant, Pmf, Vector};

/// CVaR vertices of the second-order benchmark at level `alpha`.
pub fn benchmark_vertices(alpha: f64) -> Vec<Pmf> {
    let plant = Plant::second_order_benchmark();
    cvar_envelope(plant.model.pmf(), alpha).unwrap().with_vertices().unwrap().vertices().to_vec()
}

/// Controller for the second-order benchmark.
pub fn benchmark_controller(alpha: f64, horizon: usize) -> MpcController {
    let plant = Plant::second_order_benchmark();
    let vertices = benchmark_vertices(alpha);
    let design = solve_pe(&plant, &vertices).unwrap();
    MpcController::new(plant, design, vertices, horizon).unwrap()
}

/// A start the benchmark controller can solve from at horizon 4.
pub fn inner_start() -> Vector {
    Vector::from_vec(vec![1.8, 0.3])
}
