//! Perron eigentriple of the baseline model (τ ≡ 1, B(x) = x, mitosis)
//! under grid refinement.

use std::sync::Arc;
use std::time::Instant;

use gfkit::coefficients::{CoefficientSet, FragmentationKernel, FragmentationRate, GrowthRate};
use gfkit::discretization::Grid;
use gfkit::eigensolver::solve_perron;

fn main() -> gfkit::Result<()> {
    let coeffs = CoefficientSet::new(
        GrowthRate::constant(1.0),
        FragmentationRate::power(1.0, 1.0),
        FragmentationKernel::mitosis(),
    )?;
    println!("{:>6} {:>20} {:>10} {:>10} {:>10} {:>8} {:>8}", "N", "lambda", "direct", "dual", "C", "iters", "ms");
    for n in [256, 512, 1024, 2048, 4096] {
        let grid = Arc::new(Grid::geometric_snapped(1e-3, 50.0, n, 0.5)?);
        let start = Instant::now();
        let t = solve_perron(&coeffs, &grid, 1e-9, 50_000)?;
        println!(
            "{:>6} {:>20.15} {:>10.2e} {:>10.2e} {:>10.5} {:>8} {:>8}",
            n,
            t.lambda,
            t.direct_residual,
            t.dual_residual,
            t.sandwich_constant.unwrap_or(f64::NAN),
            t.iterations,
            start.elapsed().as_millis()
        );
    }
    Ok(())
}
