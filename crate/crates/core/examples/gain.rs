//! Discrete gain ℱ₊ and its adjoint: exact duality on the grid, size
//! conservation, and convergence of ⟨ℱ₊f, φ⟩ toward the continuous pairing.

use std::sync::Arc;

use gfkit::coefficients::{CoefficientSet, FragmentationKernel, FragmentationRate, GrowthRate};
use gfkit::discretization::{assemble_adjoint_gain, assemble_gain, assemble_loss, bracket, DiscreteField, Grid};
use gfkit::quadrature::integrate_default;

fn main() -> gfkit::Result<()> {
    let f = |x: f64| x * x * (-x).exp();
    let phi = |x: f64| x * (2.0 + x.sin());
    let (a, b) = (1e-3, 30.0);
    let c = CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::mitosis())?;
    // ℱ₊*φ(x) = 2B(x)φ(x/2) for mitosis
    let exact = integrate_default(|x| f(x) * 2.0 * x * phi(x / 2.0), a, b);
    println!("{:>6} {:>10} {:>12} {:>12} {:>12}", "N", "h", "duality", "size", "consistency");
    for n in [256, 512, 1024, 2048, 4096] {
        let g = Arc::new(Grid::geometric(a, b, n)?);
        let fh = DiscreteField::from_fn(g.clone(), f);
        let ph = DiscreteField::sample(g.clone(), phi);
        let gain = assemble_gain(&c, &g)?.apply(&fh);
        let loss = assemble_loss(&c, &g).apply(&fh);
        let lhs = bracket(&gain, &ph)?;
        let rhs = bracket(&fh, &assemble_adjoint_gain(&c, &g)?.apply(&ph))?;
        let size = gain.combine(1.0, &loss, -1.0)?.first_moment();
        println!(
            "{n:>6} {:>10.3e} {:>12.2e} {:>12.2e} {:>12.3e}",
            g.max_width(),
            (lhs - rhs).abs(),
            size.abs(),
            (lhs - exact).abs() / exact
        );
    }
    Ok(())
}
