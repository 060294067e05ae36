//! Acceptance runner: one line per criterion, nonzero exit when any fails.
//!
//! Runs without the libtest harness so that the lines always reach stdout and
//! the runtimes are measured one criterion at a time.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gfkit::characteristics::{flow_upper_bound, Flow};
use gfkit::coefficients::{kernel_moment, CoefficientSet, FragmentationKernel, FragmentationRate, GrowthRate};
use gfkit::diagnostics::{
    detect_oscillation, fit_rate, fit_rate_with, moment_creation, osgood_demo, FitOptions,
};
use gfkit::discretization::{assemble_adjoint_gain, assemble_gain, assemble_loss, bracket, DiscreteField, Grid};
use gfkit::eigensolver::{check_sandwich, solve_perron, PerronTriple};
use gfkit::evolution::{
    duhamel_residual, dyson_phillips_partial, evolve, step_consistent_triple, EvolutionConfig, SimulationTrace,
};
use gfkit::particle_oracle::{simulate, OracleConfig};
use gfkit::quadrature::integrate_default;

type Outcome = Result<(bool, String), gfkit::GfError>;

fn baseline() -> CoefficientSet {
    CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::mitosis()).unwrap()
}

fn baseline_grid(n: usize) -> Arc<Grid> {
    Arc::new(Grid::geometric_snapped(1e-3, 50.0, n, 0.5).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn at(times: &[f64], t: f64) -> usize {
    times.iter().position(|&s| s >= t - 1e-9).expect("time inside the trace")
}

fn kernels() -> Outcome {
    let cases: [(&str, FragmentationKernel, Box<dyn Fn(f64) -> f64>); 4] = [
        ("mitosis", FragmentationKernel::mitosis(), Box::new(|a| 2f64.powf(1.0 - a))),
        ("asymmetric", FragmentationKernel::asymmetric(0.3), Box::new(|a| 0.3f64.powf(a) + 0.7f64.powf(a))),
        ("uniform", FragmentationKernel::uniform(), Box::new(|a| 2.0 / (a + 1.0))),
        ("power_law", FragmentationKernel::power_law(-0.5), Box::new(|a| 1.5 / (a + 0.5))),
    ];
    let alphas = [0.0, 0.5, 1.0, 2.0, 3.0, 7.5];
    let (mut mass, mut closed, mut p0) = (0.0f64, 0.0f64, f64::INFINITY);
    for (_, k, exact) in &cases {
        mass = mass.max((kernel_moment(k, 1.0) - 1.0).abs());
        p0 = p0.min(kernel_moment(k, 0.0));
        for &a in &alphas {
            closed = closed.max((kernel_moment(k, a) - exact(a)).abs() / exact(a));
        }
    }
    let ok = mass <= 1e-10 && p0 > 1.0 && closed <= 1e-10;
    Ok((ok, format!("max|℘₁−1| = {mass:.1e}, min ℘₀ = {p0}, closed forms {closed:.1e}")))
}

fn flow_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = [
        ("τ=1", GrowthRate::constant(1.0)),
        ("τ=max(1,x)", GrowthRate::affine_capped(1.0)),
        ("τ=x", GrowthRate::power(1.0, 1.0)),
    ];
    let mut worst = [0.0f64; 4];
    let mut fails = 0usize;
    for (_, tau) in &cases {
        let flow = Flow::new(tau);
        for _ in 0..10_000 {
            let t = rng.gen_range(0.0..2.0);
            let s = rng.gen_range(0.0..2.0);
            let x = 10f64.powf(rng.gen_range(-3.0..1.7));
            let x2 = x * (1.0 + rng.gen_range(1e-6..1.0));
            let xt = flow.flow(t, x)?;
            let semi = rel(flow.flow(t + s, x)?, flow.flow(t, flow.flow(s, x)?)?);
            let inv = flow.backward(t, xt).map_or(f64::INFINITY, |y| rel(y, x));
            let mono = flow.flow(t, x2)? > xt;
            let upper = flow_upper_bound(tau.tau1, t, x);
            let bound = (x - xt).max(xt - upper).max(0.0) / xt;
            worst[0] = worst[0].max(semi);
            worst[1] = worst[1].max(inv);
            worst[3] = worst[3].max(bound);
            if !mono {
                worst[2] += 1.0;
            }
            if semi > 1e-9 || inv > 1e-9 || !mono || bound > 1e-9 {
                fails += 1;
            }
        }
    }
    Ok((
        fails == 0,
        format!(
            "3×10⁴ samples: semiflow {:.1e}, inverse {:.1e}, order violations {}, bound excess {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    ))
}

fn adjointness() -> Outcome {
    // continuous reference ⟨ℱ₊f, φ⟩ for f = x²e^{−x}, φ = x(2 + sin x), B(x) = x
    let f = |x: f64| x * x * (-x).exp();
    let phi = |x: f64| x * (2.0 + x.sin());
    let prim = |x: f64| x * x + x.sin() - x * x.cos();
    let (a, b) = (1e-3, 30.0);
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, kernel) in [("mitosis", FragmentationKernel::mitosis()), ("uniform", FragmentationKernel::uniform())] {
        let exact = match name {
            "mitosis" => integrate_default(|x| f(x) * x * 2.0 * phi(x / 2.0), a, b),
            _ => integrate_default(|x| 2.0 * f(x) * prim(x), a, b),
        };
        let c = CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::power(1.0, 1.0), kernel)?;
        let mut rows = Vec::new();
        for n in [512usize, 1024, 2048, 4096] {
            let g = Arc::new(Grid::geometric(a, b, n)?);
            let fh = DiscreteField::from_fn(g.clone(), f);
            let ph = DiscreteField::sample(g.clone(), phi);
            let gain = assemble_gain(&c, &g)?.apply(&fh);
            let lhs = bracket(&gain, &ph)?;
            let rhs = bracket(&fh, &assemble_adjoint_gain(&c, &g)?.apply(&ph))?;
            let loss = assemble_loss(&c, &g).apply(&fh);
            let size = gain.combine(1.0, &loss, -1.0)?.first_moment().abs() / loss.first_moment();
            rows.push((g.max_width(), (lhs - rhs).abs() / lhs.abs(), size, rel(lhs, exact)));
        }
        // O(h) bound calibrated on the coarsest grid by the consistency error
        let c0 = rows[0].3 / rows[0].0;
        let within = rows.iter().all(|r| r.1 <= c0 * r.0 && r.2 <= c0 * r.0 && r.3 <= c0 * r.0 * (1.0 + 1e-12));
        let halving = rows.windows(2).all(|w| w[1].3 <= 0.5 * w[0].3);
        ok &= within && halving;
        lines.push(format!(
            "{name}: dual ≤ {:.1e}, size ≤ {:.1e}, consistency {}",
            rows.iter().map(|r| r.1).fold(0.0, f64::max),
            rows.iter().map(|r| r.2).fold(0.0, f64::max),
            rows.iter().map(|r| format!("{:.2e}", r.3)).collect::<Vec<_>>().join("→")
        ));
    }
    Ok((ok, lines.join("; ")))
}

fn perron_baseline() -> Outcome {
    let c = baseline();
    let t1 = solve_perron(&c, &baseline_grid(2048), 1e-10, 20_000)?;
    let t2 = solve_perron(&c, &baseline_grid(4096), 1e-10, 20_000)?;
    let (c1, c2) = (check_sandwich(&t1), check_sandwich(&t2));
    let mass = (t1.g().integral() - 1.0).abs();
    let pairing = (bracket(t1.g(), t1.phi())? - 1.0).abs();
    let ok = t1.direct_residual <= 1e-8
        && t1.dual_residual <= 1e-8
        && t1.lambda > 0.0
        && (t1.lambda - t2.lambda).abs() <= 1e-4
        && mass <= 1e-10
        && pairing <= 1e-10
        && c1.is_finite()
        && rel(c2, c1) <= 0.1;
    Ok((
        ok,
        format!(
            "λ = {:.8}, residuals {:.1e}/{:.1e}, |λ_N−λ_2N| = {:.1e}, ∫G−1 = {mass:.1e}, ⟨G,φ⟩−1 = {pairing:.1e}, C = {c1:.5} → {c2:.5}",
            t1.lambda,
            t1.direct_residual,
            t1.dual_residual,
            (t1.lambda - t2.lambda).abs()
        ),
    ))
}

fn osgood_self_similar() -> Outcome {
    let c = CoefficientSet::new(GrowthRate::power(1.0, 1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::uniform())?;
    let grid = Arc::new(Grid::geometric(1e-5, 60.0, 4096)?);
    let t = solve_perron(&c, &grid, 1e-10, 20_000)?;
    let ratios: Vec<f64> = grid
        .centers()
        .iter()
        .zip(t.phi().values())
        .take(t.interior_cells)
        .map(|(x, p)| p / x)
        .collect();
    let mid = ratios[ratios.len() / 2];
    let spread = ratios.iter().map(|r| rel(*r, mid)).fold(0.0, f64::max);
    let x_hi = grid.centers()[t.interior_cells - 1];
    let ok = (t.lambda - 1.0).abs() <= 1e-4 && spread <= 1e-3;
    Ok((ok, format!("λ − 1 = {:.1e}, max |φ/(φ₀x) − 1| = {spread:.1e} on [1e-5, {x_hi:.1}]", t.lambda - 1.0)))
}

fn baseline_trace(grid: &Arc<Grid>, triple: &PerronTriple, f: &DiscreteField) -> gfkit::Result<SimulationTrace> {
    let cfg = EvolutionConfig { dt: 1e-3, t_end: 20.0, aeg_alpha: Some(2.0), step_consistent: false, ..Default::default() };
    evolve(&baseline(), grid, triple, f, &cfg)
}

fn step_triple(grid: &Arc<Grid>) -> gfkit::Result<PerronTriple> {
    let c = baseline();
    let t = solve_perron(&c, grid, 1e-10, 20_000)?;
    step_consistent_triple(&c, &t, &EvolutionConfig { dt: 1e-3, ..Default::default() })
}

fn conservation() -> Outcome {
    let grid = baseline_grid(2048);
    let triple = step_triple(&grid)?;
    let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
    let tr = baseline_trace(&grid, &triple, &f)?;
    let drift = tr.conservation_drift();
    let ok = drift <= 1e-6 && tr.min_value >= 0.0;
    Ok((
        ok,
        format!("relative drift {drift:.1e} (tail loss {:.1e}), min f = {:e}", tr.tail_loss.last().unwrap(), tr.min_value),
    ))
}

fn async_growth() -> Outcome {
    let grid = baseline_grid(2048);
    let triple = step_triple(&grid)?;
    let inits = [
        ("indicator", DiscreteField::indicator(grid.clone(), 1.0, 2.0)),
        ("bump", DiscreteField::from_fn(grid.clone(), |x| (-(x - 5.0) * (x - 5.0) / 0.5).exp())),
        (
            "two-bump",
            DiscreteField::from_fn(grid.clone(), |x| {
                (-(x - 0.5) * (x - 0.5) / 0.02).exp() + 0.5 * (-(x - 8.0) * (x - 8.0) / 0.5).exp()
            }),
        ),
    ];
    let mut ok = true;
    let mut sigmas = Vec::new();
    let mut parts = Vec::new();
    for (name, f) in &inits {
        let tr = baseline_trace(&grid, &triple, f)?;
        let fit = fit_rate_with(&tr.times, &tr.aeg, FitOptions { window: Some((5.0, 20.0)), floor: 1e-8 })?;
        let ratio = tr.aeg[at(&tr.times, 20.0)] / tr.aeg[at(&tr.times, 1.0)];
        ok &= fit.sigma > 0.0 && fit.goodness >= 0.99 && ratio <= 1e-3;
        sigmas.push(fit.sigma);
        parts.push(format!("{name} σ = {:.4} R² = {:.4} d(20)/d(1) = {ratio:.1e}", fit.sigma, fit.goodness));
    }
    let lo = sigmas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sigmas.iter().cloned().fold(0.0, f64::max);
    ok &= hi <= 1.1 * lo;
    Ok((ok, parts.join("; ")))
}

fn moments() -> Outcome {
    let times: Vec<f64> = (0..=10).map(|k| 0.5f64.powi(k)).collect();
    let sup = |n: usize| -> gfkit::Result<f64> {
        let grid = baseline_grid(n);
        let f = DiscreteField::from_fn(grid, |x| (1.0 + x).powi(-3));
        Ok(moment_creation(&baseline(), &f, 1.0, 3.0, &times)?.sup)
    };
    let (a, b) = (sup(2048)?, sup(4096)?);
    Ok((a.is_finite() && rel(b, a) <= 0.2, format!("sup = {a:.5} (N=2048), {b:.5} (N=4096)")))
}

fn duhamel_dyson() -> Outcome {
    let c = baseline();
    let grid = baseline_grid(2048);
    let triple = solve_perron(&c, &grid, 1e-10, 20_000)?;
    let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
    let norm = f.weighted_norm(1.0);
    let cfg = EvolutionConfig { dt: 1e-3, t_end: 0.5, step_consistent: false, rescale_by_lambda: false, ..Default::default() };
    let ev = evolve(&c, &grid, &triple, &f, &cfg)?;
    let dyson = dyson_phillips_partial(&c, &grid, &f, 0.5, 6)?;
    let gap = dyson.combine(1.0, ev.final_field(), -1.0)?.weighted_norm(1.0) / norm;
    let res: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&q| duhamel_residual(&c, &grid, &triple, &f, 1.0, q).map(|r| r / norm))
        .collect::<gfkit::Result<_>>()?;
    let ok = gap <= 1e-3 && res[2] <= 5e-3 && res.windows(2).all(|w| w[1] <= w[0]);
    Ok((
        ok,
        format!(
            "Dyson n=6 gap {gap:.1e}; Duhamel residual {} at 16/32/64 points",
            res.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

fn periodic() -> Outcome {
    let c = CoefficientSet::new(GrowthRate::power(1.0, 1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::mitosis())?;
    let grid = Arc::new(Grid::geometric_snapped(1e-4, 30.0, 4096, 0.5)?);
    let triple = solve_perron(&c, &grid, 1e-10, 20_000)?;
    let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
    let lattice = grid.ratio().unwrap().ln();
    let mut runs = Vec::new();
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
        let sigma = fit_rate(&tr.times, &tr.aeg, None)?.sigma;
        runs.push((osc, sigma));
    }
    let ((o1, s1), (o2, s2)) = (runs[0], runs[1]);
    let ok = o1.periodic && o2.periodic && rel(o2.period, o1.period) <= 0.01 && s1 <= 0.01;
    Ok((
        ok,
        format!(
            "periodic {}/{}, period {:.5} → {:.5} (ln 2 = {:.5}), σ = {s1:.1e} at the lattice step ({s2:.1e} at half step)",
            o1.periodic,
            o2.periodic,
            o1.period,
            o2.period,
            std::f64::consts::LN_2
        ),
    ))
}

fn osgood_non_uniform() -> Outcome {
    let c = CoefficientSet::new(GrowthRate::power(1.0, 1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::uniform())?;
    let grid = Arc::new(Grid::geometric(1e-5, 60.0, 4096)?);
    let triple = solve_perron(&c, &grid, 1e-10, 20_000)?;
    let d = osgood_demo(&c, &grid, &triple, &[0.1, 0.01, 0.001], 1.0)?;
    let ok = d.windows(2).all(|w| w[1] > w[0]) && d.iter().all(|v| *v <= 2.0 + 1e-6) && d[2] >= 1.8;
    Ok((ok, format!("distances {:.6}, {:.6}, {:.6}", d[0], d[1], d[2])))
}

fn monte_carlo() -> Outcome {
    let c = baseline();
    let grid = baseline_grid(2048);
    let triple = solve_perron(&c, &grid, 1e-10, 20_000)?;
    let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
    let cfg = EvolutionConfig { dt: 1e-3, t_end: 2.0, step_consistent: false, rescale_by_lambda: false, ..Default::default() };
    let tr = evolve(&c, &grid, &triple, &f, &cfg)?;
    let oc = OracleConfig { n0: 10_000, times: vec![0.5, 1.0, 2.0], replicas: 32, seed: 1, keep_particles: false };
    let mc = simulate(&c, &f, &oc, Some((triple.phi(), triple.lambda)))?.series;
    let mut worst = 0.0f64;
    for (k, &t) in oc.times.iter().enumerate() {
        let i = at(&tr.times, t);
        let pde = [tr.number[i], tr.mass[i], tr.bracket[i] * (-triple.lambda * t).exp()];
        let est = [
            (mc.number_mean[k], mc.number_se[k]),
            (mc.mass_mean[k], mc.mass_se[k]),
            (mc.bracket_mean[k], mc.bracket_se[k]),
        ];
        for (p, (m, se)) in pde.iter().zip(est) {
            worst = worst.max((p - m).abs() / se);
        }
    }
    Ok((worst <= 3.0, format!("max |PDE − MC|/SE = {worst:.2} over ∫f, ∫xf, e^{{−λt}}⟨f,φ⟩ at t = 0.5, 1, 2")))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 12] = [
        ("kernel admissibility", 1, kernels),
        ("flow laws", 5, flow_laws),
        ("adjointness and size conservation", 30, adjointness),
        ("Perron solve, baseline", 60, perron_baseline),
        ("Osgood self-similar profile", 60, osgood_self_similar),
        ("conservation and positivity", 180, conservation),
        ("asynchronous exponential growth", 600, async_growth),
        ("moment creation", 60, moments),
        ("Duhamel/Dyson-Phillips consistency", 180, duhamel_dyson),
        ("periodic counterexample", 300, periodic),
        ("Osgood non-uniformity", 300, osgood_non_uniform),
        ("Monte Carlo cross-validation", 300, monte_carlo),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && in_time, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {detail} [{:.2} s of {budget} s]",
            k + 1,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
