//! τ(x) = x, B(x) = x, uniform kernel. The profile is self-similar (λ = 1,
//! φ ∝ x), but convergence from f_η concentrated near 0 is not uniform in η.

use std::sync::Arc;

use gfkit::coefficients::{CoefficientSet, FragmentationKernel, FragmentationRate, GrowthRate};
use gfkit::diagnostics::osgood_demo;
use gfkit::discretization::Grid;
use gfkit::eigensolver::solve_perron;

fn main() -> gfkit::Result<()> {
    let c = CoefficientSet::new(GrowthRate::power(1.0, 1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::uniform())?;
    let grid = Arc::new(Grid::geometric(1e-5, 60.0, 4096)?);
    let triple = solve_perron(&c, &grid, 1e-10, 20_000)?;
    let x = grid.centers();
    let phi = triple.phi().values();
    let k = triple.interior_cells / 2;
    println!("λ = {:.8}, φ/x at x = {:.1e}, {:.1e}: {:.6}, {:.6}", triple.lambda, x[0], x[k], phi[0] / x[0], phi[k] / x[k]);
    let etas = [0.1, 0.01, 0.001];
    let d = osgood_demo(&c, &grid, &triple, &etas, 1.0)?;
    for (eta, v) in etas.iter().zip(&d) {
        println!("η = {eta:<6} ‖T_1 f_η − G‖_L¹(φ) = {v:.6}");
    }
    Ok(())
}
