//! Characteristics X(t,x) for three growth rates, with the inverse flow,
//! Jacobian, exit time and damping integral.

use gfkit::characteristics::{flow_upper_bound, Flow};
use gfkit::coefficients::{CoefficientSet, FragmentationKernel, FragmentationRate, GrowthRate};

fn main() -> gfkit::Result<()> {
    let rates = [
        ("τ = 1", GrowthRate::constant(1.0)),
        ("τ = max(1,x)", GrowthRate::affine_capped(1.0)),
        ("τ = x", GrowthRate::power(1.0, 1.0)),
    ];
    let b = FragmentationRate::power(1.0, 1.0);
    for (name, tau) in rates {
        let c = CoefficientSet::new(tau.clone(), b.clone(), FragmentationKernel::mitosis())?;
        let flow = Flow::for_coefficients(&c);
        println!("{name} (Osgood: {})", flow.is_osgood());
        println!("  {:>6} {:>6} {:>12} {:>12} {:>10} {:>10} {:>12}", "t", "x", "X(t,x)", "bound", "J(t,X)", "t_*(x)", "damping");
        for &(t, x) in &[(0.5, 0.1), (1.0, 1.0), (2.0, 3.0)] {
            let xt = flow.flow(t, x)?;
            let back = flow.backward(t, xt).unwrap_or(f64::NAN);
            assert!((back - x).abs() < 1e-12 * x);
            println!(
                "  {t:>6} {x:>6} {xt:>12.6} {:>12.6} {:>10.5} {:>10.4} {:>12.6}",
                flow_upper_bound(tau.tau1, t, x),
                flow.jacobian(t, xt)?,
                flow.exit_time(x),
                flow.damping_integral(&b, 0.0, t, xt)?
            );
        }
    }
    Ok(())
}
