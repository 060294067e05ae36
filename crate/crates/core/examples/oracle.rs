//! Branching particle simulation against the PDE moments for the baseline
//! model. For τ ≡ 1, B(x) = x, mitosis the number and mass solve
//! N' = M, M' = N, so both have closed forms.

use std::sync::Arc;

use gfkit::coefficients::{CoefficientSet, FragmentationKernel, FragmentationRate, GrowthRate};
use gfkit::discretization::{DiscreteField, Grid};
use gfkit::eigensolver::solve_perron;
use gfkit::evolution::{evolve, EvolutionConfig};
use gfkit::particle_oracle::{simulate, OracleConfig};

fn main() -> gfkit::Result<()> {
    let c = CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::mitosis())?;
    let grid = Arc::new(Grid::geometric_snapped(1e-3, 50.0, 2048, 0.5)?);
    let triple = solve_perron(&c, &grid, 1e-10, 20_000)?;
    let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);

    let cfg = EvolutionConfig { dt: 1e-3, t_end: 2.0, step_consistent: false, rescale_by_lambda: false, ..Default::default() };
    let tr = evolve(&c, &grid, &triple, &f, &cfg)?;
    let oc = OracleConfig { seed, ..Default::default() };
    let mc = simulate(&c, &f, &oc, Some((triple.phi(), triple.lambda)))?.series;

    let (n0, m0) = (f.integral(), f.first_moment());
    println!("{:>4} {:>10} {:>10} {:>18} {:>10} {:>10} {:>18}", "t", "N exact", "N pde", "N mc", "M exact", "M pde", "M mc");
    for (k, &t) in oc.times.iter().enumerate() {
        let i = tr.times.iter().position(|&s| s >= t - 1e-9).unwrap();
        println!(
            "{t:>4} {:>10.6} {:>10.6} {:>10.6}±{:.1e} {:>10.6} {:>10.6} {:>10.6}±{:.1e}",
            n0 * t.cosh() + m0 * t.sinh(),
            tr.number[i],
            mc.number_mean[k],
            mc.number_se[k],
            m0 * t.cosh() + n0 * t.sinh(),
            tr.mass[i],
            mc.mass_mean[k],
            mc.mass_se[k]
        );
    }
    Ok(())
}
