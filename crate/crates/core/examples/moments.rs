//! Creation of moments by the transport semigroup: t^{(β−α)/γ₀}e^{−βτ₁t}‖S_t f‖_{L¹_β}
//! stays bounded as t → 0 although f has no β-moment to spare.

use std::sync::Arc;

use gfkit::coefficients::{CoefficientSet, FragmentationKernel, FragmentationRate, GrowthRate};
use gfkit::diagnostics::moment_creation;
use gfkit::discretization::{DiscreteField, Grid};

fn main() -> gfkit::Result<()> {
    let c = CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::mitosis())?;
    let times: Vec<f64> = (0..=10).map(|k| 0.5f64.powi(k)).collect();
    for n in [1024, 2048, 4096, 8192] {
        let grid = Arc::new(Grid::geometric_snapped(1e-3, 50.0, n, 0.5)?);
        let f = DiscreteField::from_fn(grid, |x| (1.0 + x).powi(-3));
        let m = moment_creation(&c, &f, 1.0, 3.0, &times)?;
        let row: Vec<String> = m.scaled.iter().map(|v| format!("{v:.4}")).collect();
        println!("N = {n:>5}: sup {:.6}  [{}]", m.sup, row.join(" "));
    }
    Ok(())
}
