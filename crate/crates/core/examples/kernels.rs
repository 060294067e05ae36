//! Fragmentation kernels: moments ℘_α, the critical exponent α̲ and the
//! hypothesis report for a few coefficient sets.

use gfkit::coefficients::{
    critical_alpha, kernel_moment, threshold_alpha, validate_hypotheses, CoefficientSet, FragmentationKernel,
    FragmentationRate, GrowthRate,
};

fn main() -> gfkit::Result<()> {
    let kernels = [
        ("mitosis", FragmentationKernel::mitosis()),
        ("asymmetric θ=0.3", FragmentationKernel::asymmetric(0.3)),
        ("uniform", FragmentationKernel::uniform()),
        ("power law ν=-1/2", FragmentationKernel::power_law(-0.5)),
    ];
    println!("{:<18} {:>8} {:>8} {:>8} {:>8} {:>8}", "kernel", "℘₀", "℘₁", "℘₂", "℘₃", "α̲");
    for (name, k) in &kernels {
        println!(
            "{name:<18} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.3}",
            kernel_moment(k, 0.0),
            kernel_moment(k, 1.0),
            kernel_moment(k, 2.0),
            kernel_moment(k, 3.0),
            critical_alpha(k)
        );
    }

    let sample: Vec<f64> = (0..200).map(|i| 1e-3 * 1.05f64.powi(i)).collect();
    for (name, tau) in [("τ = 1", GrowthRate::constant(1.0)), ("τ = x", GrowthRate::power(1.0, 1.0))] {
        let c = CoefficientSet::new(tau, FragmentationRate::power(1.0, 1.0), FragmentationKernel::uniform())?;
        let report = validate_hypotheses(&c, &sample)?;
        println!("\n{name}, B = x, uniform kernel: mode {:?}, threshold α = {}", report.mode, threshold_alpha(&c));
        for check in &report.checks {
            println!("  [{}] {}", if check.passed { "ok" } else { "--" }, check.name);
        }
    }

    // ℘₁ ≠ 1 is rejected at construction
    match FragmentationKernel::new(vec![(0.5, 1.5)], None) {
        Ok(_) => println!("\nunexpected: 1.5·δ_{{1/2}} accepted"),
        Err(e) => println!("\n1.5·δ_{{1/2}}: {e}"),
    }
    Ok(())
}
