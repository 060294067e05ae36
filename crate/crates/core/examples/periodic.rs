//! τ(x) = x with mitosis: no spectral gap. The rescaled solution keeps
//! oscillating with period ln 2 instead of converging.

use std::sync::Arc;

use gfkit::coefficients::{CoefficientSet, FragmentationKernel, FragmentationRate, GrowthRate};
use gfkit::diagnostics::{detect_oscillation, fit_rate};
use gfkit::discretization::{DiscreteField, Grid};
use gfkit::eigensolver::solve_perron;
use gfkit::evolution::{evolve, EvolutionConfig};

fn main() -> gfkit::Result<()> {
    let c = CoefficientSet::new(GrowthRate::power(1.0, 1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::mitosis())?;
    let grid = Arc::new(Grid::geometric_snapped(1e-4, 30.0, 4096, 0.5)?);
    let triple = solve_perron(&c, &grid, 1e-10, 20_000)?;
    println!("λ = {:.8}", triple.lambda);
    let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
    // with dt = ln r the flow maps cells onto cells
    let lattice = grid.ratio().unwrap().ln();
    for div in [1.0, 2.0] {
        let dt = lattice / div;
        let cfg = EvolutionConfig {
            dt,
            t_end: (30.0 / dt).round() * dt,
            step_consistent: false,
            aeg_alpha: Some(1.0),
            probe: Some((1.0, 1.25)),
            ..Default::default()
        };
        let tr = evolve(&c, &grid, &triple, &f, &cfg)?;
        let osc = detect_oscillation(&tr.times, &tr.probe);
        let fit = fit_rate(&tr.times, &tr.aeg, None)?;
        println!(
            "dt = ln r/{div}: periodic {} period {:.5} amplitude {:.3e}  tail σ = {:.2e}",
            osc.periodic, osc.period, osc.amplitude, fit.sigma
        );
    }
    Ok(())
}
