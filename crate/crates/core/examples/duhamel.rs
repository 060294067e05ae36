//! Dyson-Phillips partial sums against the splitting scheme, and the residual
//! of the Duhamel formula under quadrature refinement.

use std::sync::Arc;

use gfkit::coefficients::{CoefficientSet, FragmentationKernel, FragmentationRate, GrowthRate};
use gfkit::discretization::{DiscreteField, Grid};
use gfkit::eigensolver::solve_perron;
use gfkit::evolution::{duhamel_residual, dyson_phillips_partial, evolve, EvolutionConfig};

fn main() -> gfkit::Result<()> {
    let c = CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::mitosis())?;
    let grid = Arc::new(Grid::geometric_snapped(1e-3, 50.0, 2048, 0.5)?);
    let triple = solve_perron(&c, &grid, 1e-10, 20_000)?;
    let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
    let norm = f.weighted_norm(1.0);

    let cfg = EvolutionConfig { dt: 1e-3, t_end: 0.5, step_consistent: false, rescale_by_lambda: false, ..Default::default() };
    let reference = evolve(&c, &grid, &triple, &f, &cfg)?;
    for n in 0..=8 {
        let d = dyson_phillips_partial(&c, &grid, &f, 0.5, n)?;
        let gap = d.combine(1.0, reference.final_field(), -1.0)?.weighted_norm(1.0);
        println!("generations ≤ {n}: ‖Σ T^(k) f − T f‖ / ‖f‖ = {:.3e}", gap / norm);
    }
    for q in [8, 16, 32, 64, 128] {
        let r = duhamel_residual(&c, &grid, &triple, &f, 1.0, q)?;
        println!("Duhamel residual at t = 1, {q:>3} nodes: {:.3e}", r / norm);
    }
    Ok(())
}
