//! Perron eigentriple (λ, G, φ).
//!
//! The direct problem (τG)' + (λ + B)G = ℱ₊G is written as G = R(λ)ℱ₊G with
//! R(λ) the inverse of f ↦ (τf)' + (λ + B)f under the inflow condition
//! τf = 0 at the left end. R is applied by one upwind sweep of an exponential
//! integrator. λ is the root of ρ(R(λ)ℱ₊) = 1, found by safeguarded false
//! position on log ρ; ρ and G come from power iteration. φ is the dominant
//! vector of the weighted adjoint R(λ)*ℱ₊*.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::characteristics::Flow;
use crate::coefficients::{CoefficientSet, Mode};
use crate::discretization::{
    assemble_adjoint_gain, assemble_gain, bracket, weight, DiscreteField, Grid, OperatorMatrix,
};
use crate::error::{GfError, Result};

/// Per-cell travel time ΔF and hazard ΔH = ∫B/τ.
#[derive(Debug, Clone)]
pub(crate) struct CellData {
    df: Vec<f64>,
    dh: Vec<f64>,
    widths: Vec<f64>,
}

impl CellData {
    pub(crate) fn new(coeffs: &CoefficientSet, grid: &Grid) -> Self {
        let flow = Flow::for_coefficients(coeffs);
        let e = grid.edges();
        let df = e.windows(2).map(|w| flow.travel_time(w[0], w[1])).collect();
        let dh = e.windows(2).map(|w| flow.hazard(w[0], w[1])).collect();
        CellData { df, dh, widths: grid.widths().to_vec() }
    }
}

/// (1 − e^{−K})/K and (K − 1 + e^{−K})/K².
fn phi12(k: f64) -> (f64, f64) {
    if k.abs() < 0.05 {
        let mut p1 = 0.0;
        let mut p2 = 0.0;
        let mut term = 1.0;
        let mut fact1 = 1.0;
        let mut fact2 = 2.0;
        for n in 0..8 {
            p1 += term / fact1;
            p2 += term / fact2;
            term *= -k;
            fact1 *= (n + 2) as f64;
            fact2 *= (n + 3) as f64;
        }
        (p1, p2)
    } else {
        let em = (-k).exp_m1();
        (-em / k, (k + em) / (k * k))
    }
}

/// Discrete R: one upwind sweep with a per-cell exponential integrator on the
/// flux u = τf. Within a cell, f = α·u_in + β·h and u_out = E·u_in + γ·h.
#[derive(Debug, Clone)]
pub(crate) struct Resolvent {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    decay: Vec<f64>,
    widths: Vec<f64>,
}

impl Resolvent {
    /// c = μ + λ is the constant part of the damping.
    pub(crate) fn new(cells: &CellData, c: f64) -> Self {
        let n = cells.df.len();
        let mut r = Resolvent {
            alpha: Vec::with_capacity(n),
            beta: Vec::with_capacity(n),
            gamma: Vec::with_capacity(n),
            decay: Vec::with_capacity(n),
            widths: cells.widths.clone(),
        };
        for i in 0..n {
            let w = cells.widths[i];
            let k = c * cells.df[i] + cells.dh[i];
            let iota = cells.df[i] / w;
            let (p1, p2) = phi12(k);
            r.alpha.push(iota * p1);
            r.beta.push(iota * w * p2);
            r.gamma.push(w * p1);
            r.decay.push((-k).exp());
        }
        r
    }

    pub(crate) fn apply(&self, h: &[f64], out: &mut [f64]) {
        let mut u = 0.0;
        for i in 0..h.len() {
            out[i] = self.alpha[i] * u + self.beta[i] * h[i];
            u = self.decay[i] * u + self.gamma[i] * h[i];
        }
    }

    pub(crate) fn apply_inverse(&self, f: &[f64], out: &mut [f64]) {
        let mut u = 0.0;
        for i in 0..f.len() {
            let h = (f[i] - self.alpha[i] * u) / self.beta[i];
            out[i] = h;
            u = self.decay[i] * u + self.gamma[i] * h;
        }
    }

    /// Plain transpose Rᵀ.
    fn apply_transpose(&self, g: &[f64], out: &mut [f64]) {
        let mut v = 0.0;
        for i in (0..g.len()).rev() {
            out[i] = self.beta[i] * g[i] + self.gamma[i] * v;
            v = self.alpha[i] * g[i] + self.decay[i] * v;
        }
    }

    /// (R⁻¹)ᵀ.
    fn apply_inverse_transpose(&self, g: &[f64], out: &mut [f64]) {
        // R⁻¹: h = f/β − (α/β)u, u_{i+1} = a_i u_i + b_i f_i
        let n = g.len();
        let mut v = 0.0;
        for j in (0..n).rev() {
            let (a, b) = (self.alpha[j], self.beta[j]);
            out[j] = g[j] / b + (self.gamma[j] / b) * v;
            let q = -a / b * g[j];
            let aj = self.decay[j] - self.gamma[j] * a / b;
            v = q + aj * v;
        }
    }

    /// Weighted adjoint R* = W⁻¹RᵀW for the bracket Σ fᵢφᵢΔxᵢ.
    pub(crate) fn apply_adjoint(&self, g: &[f64], out: &mut [f64]) {
        let wg: Vec<f64> = g.iter().zip(&self.widths).map(|(a, w)| a * w).collect();
        self.apply_transpose(&wg, out);
        out.iter_mut().zip(&self.widths).for_each(|(o, w)| *o /= w);
    }

    fn apply_adjoint_inverse(&self, g: &[f64], out: &mut [f64]) {
        let wg: Vec<f64> = g.iter().zip(&self.widths).map(|(a, w)| a * w).collect();
        self.apply_inverse_transpose(&wg, out);
        out.iter_mut().zip(&self.widths).for_each(|(o, w)| *o /= w);
    }
}

/// (μ − 𝒜₀)⁻¹h with 𝒜₀f = −(τf)' − (λ + B)f.
pub fn apply_resolvent(
    coeffs: &CoefficientSet,
    grid: &Arc<Grid>,
    mu: f64,
    lambda: f64,
    h: &DiscreteField,
) -> Result<DiscreteField> {
    if !(mu > 0.0) {
        return Err(GfError::DomainError(format!("resolvent needs μ > 0, got {mu}")));
    }
    if !crate::discretization::same_grid(grid, h.grid()) {
        return Err(GfError::GridMismatch);
    }
    coeffs.kernel.check_structure()?;
    let r = Resolvent::new(&CellData::new(coeffs, grid), mu + lambda);
    let mut out = vec![0.0; grid.len()];
    r.apply(h.values(), &mut out);
    Ok(h.with_values(out))
}

#[derive(Debug, Clone)]
pub struct PerronTriple {
    pub lambda: f64,
    pub g: DiscreteField,
    pub phi: DiscreteField,
    pub direct_residual: f64,
    pub dual_residual: f64,
    /// C with C⁻¹(1+x) ≤ φ ≤ C(1+x) on the grid (standard mode only).
    pub sandwich_constant: Option<f64>,
    /// Cells below this index are unaffected by the outflow boundary at x_max
    /// (coupling e^{−∫(λ+B)/τ} to x_max below 1e-8).
    pub interior_cells: usize,
    pub iterations: usize,
}

impl PerronTriple {
    pub fn g(&self) -> &DiscreteField {
        &self.g
    }

    pub fn phi(&self) -> &DiscreteField {
        &self.phi
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.g().grid()
    }

    /// Builds a triple from given data, normalizing ∫G = 1 and ⟨G,φ⟩ = 1.
    pub fn from_parts(lambda: f64, g: DiscreteField, phi: DiscreteField) -> Result<Self> {
        let g = g.scaled(1.0 / g.integral());
        let phi = phi.scaled(1.0 / bracket(&g, &phi)?);
        let n = g.len();
        Ok(PerronTriple {
            lambda,
            sandwich_constant: Some(sandwich(&phi, n)),
            interior_cells: n,
            g,
            phi,
            direct_residual: f64::NAN,
            dual_residual: f64::NAN,
            iterations: 0,
        })
    }

    /// Writes `x,G,phi` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,G,phi")?;
        let g = self.g();
        for ((x, a), b) in g.grid().centers().iter().zip(g.values()).zip(self.phi().values()) {
            writeln!(out, "{}", crate::discretization::csv_row(&[*x, *a, *b]))?;
        }
        Ok(())
    }
}

fn sandwich(phi: &DiscreteField, cells: usize) -> f64 {
    phi.grid()
        .centers()
        .iter()
        .zip(phi.values())
        .take(cells.max(1))
        .map(|(x, p)| (p / (1.0 + x)).max((1.0 + x) / p))
        .fold(1.0, f64::max)
}

/// max of max(φ/(1+x), (1+x)/φ) over the cells outside the outflow boundary layer.
pub fn check_sandwich(triple: &PerronTriple) -> f64 {
    sandwich(triple.phi(), triple.interior_cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerronOptions {
    /// Target for the direct and dual residuals.
    pub tol: f64,
    /// Cap on power iterations per spectral-radius evaluation and on root-finding steps.
    pub max_iter: usize,
}

impl Default for PerronOptions {
    fn default() -> Self {
        PerronOptions { tol: 1e-9, max_iter: 20_000 }
    }
}

/// Stops a power iteration at the tolerance or once the update stagnates at round-off.
struct Stopper {
    tol: f64,
    best: f64,
    stalled: usize,
}

impl Stopper {
    fn new(tol: f64) -> Self {
        Stopper { tol, best: f64::INFINITY, stalled: 0 }
    }

    fn done(&mut self, diff: f64) -> bool {
        if diff < self.tol {
            return true;
        }
        if diff < 0.9 * self.best {
            self.best = diff;
            self.stalled = 0;
        } else {
            self.stalled += 1;
        }
        // a stalled update well below the tolerance scale is round-off
        self.stalled > 30 && self.best < 1e-3 * self.tol.sqrt()
    }
}

struct Problem<'a> {
    cells: CellData,
    gain: OperatorMatrix,
    widths: &'a [f64],
    centers: &'a [f64],
    max_iter: usize,
    inner_tol: f64,
    iterations: usize,
}

impl Problem<'_> {
    fn mass(&self, v: &[f64]) -> f64 {
        v.iter().zip(self.widths).map(|(a, w)| a * w).sum()
    }

    /// Power iteration on R(λ)ℱ₊; returns ρ and leaves the normalized vector in `v`.
    fn spectral_radius(&mut self, lambda: f64, v: &mut Vec<f64>) -> Result<f64> {
        let r = Resolvent::new(&self.cells, lambda);
        let n = v.len();
        let mut tmp = vec![0.0; n];
        let mut next = vec![0.0; n];
        let m = self.mass(v);
        v.iter_mut().for_each(|a| *a /= m);
        let mut rho = f64::NAN;
        let mut stop = Stopper::new(self.inner_tol);
        for it in 0..self.max_iter {
            self.gain.apply_slice(v, &mut tmp);
            r.apply(&tmp, &mut next);
            let m = self.mass(&next);
            if !(m > 0.0) || !m.is_finite() {
                return Err(GfError::NoConvergence { iterations: it, residual: m });
            }
            rho = m;
            let mut diff = 0.0;
            for ((a, b), w) in next.iter_mut().zip(v.iter()).zip(self.widths) {
                *a /= m;
                diff += (*a - b).abs() * w;
            }
            std::mem::swap(v, &mut next);
            self.iterations += 1;
            if stop.done(diff) {
                return Ok(rho);
            }
        }
        Err(GfError::NoConvergence { iterations: self.max_iter, residual: rho })
    }

    /// Power iteration on R(λ)*ℱ₊*, normalized against `g`.
    fn dual_vector(&mut self, lambda: f64, adjoint: &OperatorMatrix, g: &[f64], v: &mut Vec<f64>) -> Result<f64> {
        let r = Resolvent::new(&self.cells, lambda);
        let n = v.len();
        let mut tmp = vec![0.0; n];
        let mut next = vec![0.0; n];
        let pair = |a: &[f64]| -> f64 { a.iter().zip(g).zip(self.widths).map(|((x, y), w)| x * y * w).sum() };
        let m = pair(v);
        v.iter_mut().for_each(|a| *a /= m);
        let mut rho = f64::NAN;
        let mut stop = Stopper::new(self.inner_tol * 1e-3);
        for it in 0..self.max_iter {
            adjoint.apply_slice(v, &mut tmp);
            r.apply_adjoint(&tmp, &mut next);
            let m = pair(&next);
            if !(m > 0.0) || !m.is_finite() {
                return Err(GfError::NoConvergence { iterations: it, residual: m });
            }
            rho = m;
            let mut diff: f64 = 0.0;
            for ((a, b), x) in next.iter_mut().zip(v.iter()).zip(self.centers) {
                *a /= m;
                diff = diff.max((*a - b).abs() / (1.0 + x));
            }
            std::mem::swap(v, &mut next);
            self.iterations += 1;
            if stop.done(diff) {
                return Ok(rho);
            }
        }
        Err(GfError::NoConvergence { iterations: self.max_iter, residual: rho })
    }
}

/// Computes (λ, G, φ) with ∫G = 1 and ⟨G, φ⟩ = 1.
pub fn solve_perron(coeffs: &CoefficientSet, grid: &Arc<Grid>, tol: f64, max_iter: usize) -> Result<PerronTriple> {
    solve_perron_with(coeffs, grid, PerronOptions { tol, max_iter })
}

pub fn solve_perron_with(coeffs: &CoefficientSet, grid: &Arc<Grid>, opts: PerronOptions) -> Result<PerronTriple> {
    if !(opts.tol > 0.0) {
        return Err(GfError::Config(format!("tolerance must be positive, got {}", opts.tol)));
    }
    coeffs.kernel.check_structure()?;
    if coeffs.b.bounded_sup() == Some(0.0) {
        return Err(GfError::invalid("HB", "B ≡ 0: no fragmentation, the Perron problem has no solution"));
    }
    let mut prob = Problem {
        cells: CellData::new(coeffs, grid),
        gain: assemble_gain(coeffs, grid)?,
        widths: grid.widths(),
        centers: grid.centers(),
        max_iter: opts.max_iter,
        inner_tol: (opts.tol * 1e-4).clamp(1e-15, 1e-12),
        iterations: 0,
    };

    let mut v: Vec<f64> = grid.centers().iter().map(|x| (-x).exp() + 1e-3).collect();
    let upper = coeffs.lambda_upper_bound();
    let (mut lo, mut hi) = (0.0, if upper > 0.0 { upper } else { 1.0 });
    let mut g_lo = prob.spectral_radius(lo, &mut v)?.ln();
    let mut g_hi = prob.spectral_radius(hi, &mut v)?.ln();
    let mut expansions = 0;
    while g_hi > 0.0 {
        lo = hi;
        g_lo = g_hi;
        hi *= 2.0;
        g_hi = prob.spectral_radius(hi, &mut v)?.ln();
        expansions += 1;
        if expansions > 60 {
            return Err(GfError::NoConvergence { iterations: prob.iterations, residual: g_hi });
        }
    }
    while g_lo < 0.0 {
        let width = (hi - lo).max(1.0);
        hi = lo;
        g_hi = g_lo;
        lo -= width;
        g_lo = prob.spectral_radius(lo, &mut v)?.ln();
        expansions += 1;
        if expansions > 60 {
            return Err(GfError::NoConvergence { iterations: prob.iterations, residual: g_lo });
        }
    }

    // Illinois false position on log ρ(λ), which decreases in λ
    let mut lambda = lo;
    let mut side = 0i8;
    for step in 0..opts.max_iter.max(200) {
        lambda = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
        if !(lambda > lo && lambda < hi) {
            lambda = 0.5 * (lo + hi);
        }
        let g = prob.spectral_radius(lambda, &mut v)?.ln();
        if g.abs() < 1e-15 || (hi - lo) < 4.0 * f64::EPSILON * lambda.abs().max(1.0) {
            break;
        }
        if g > 0.0 {
            lo = lambda;
            g_lo = g;
            if side == 1 {
                g_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = lambda;
            g_hi = g;
            if side == -1 {
                g_lo *= 0.5;
            }
            side = -1;
        }
        if step + 1 == opts.max_iter.max(200) {
            return Err(GfError::NoConvergence { iterations: prob.iterations, residual: g });
        }
    }

    let mass = prob.mass(&v);
    let g: Vec<f64> = v.iter().map(|a| a / mass).collect();

    let adjoint = assemble_adjoint_gain(coeffs, grid)?;
    let mut phi: Vec<f64> = grid.centers().iter().map(|x| 1.0 + x).collect();
    prob.dual_vector(lambda, &adjoint, &g, &mut phi)?;

    let g_field = DiscreteField::new(grid.clone(), g)?;
    let phi_field = DiscreteField::new(grid.clone(), phi)?;
    let (direct_residual, dual_residual) = residuals(&prob, lambda, &adjoint, &g_field, &phi_field);
    let mut triple = PerronTriple::from_parts(lambda, g_field, phi_field)?;
    triple.interior_cells = interior_cells(&prob.cells, lambda);
    triple.sandwich_constant = Some(check_sandwich(&triple));
    triple.direct_residual = direct_residual;
    triple.dual_residual = dual_residual;
    triple.iterations = prob.iterations;
    if coeffs.mode() == Mode::Osgood {
        triple.sandwich_constant = None;
    }
    if direct_residual > opts.tol || dual_residual > opts.tol {
        return Err(GfError::NoConvergence {
            iterations: prob.iterations,
            residual: direct_residual.max(dual_residual),
        });
    }
    Ok(triple)
}

/// Number of leading cells whose coupling to the outflow edge is below 1e-8.
fn interior_cells(cells: &CellData, lambda: f64) -> usize {
    let threshold = 1e8f64.ln();
    let mut depth = 0.0;
    for i in (0..cells.df.len()).rev() {
        depth += lambda * cells.df[i] + cells.dh[i];
        if depth >= threshold {
            return i;
        }
    }
    0
}

/// ‖L(λ)G − ℱ₊G‖_{L¹_1} and ∫|L(λ)*φ − ℱ₊*φ|/(1+x), with L(λ)G = (τG)' + (λ+B)G.
///
/// The dual residual is width-weighted: pointwise, the discrete dual generator
/// turns one-ulp changes of φ in the smallest cells into O(ε/Δx) residuals.
fn residuals(prob: &Problem, lambda: f64, adjoint: &OperatorMatrix, g: &DiscreteField, phi: &DiscreteField) -> (f64, f64) {
    let r = Resolvent::new(&prob.cells, lambda);
    let n = g.len();
    // normalized copies, matching the stored triple
    let gv: Vec<f64> = g.values().iter().map(|a| a / g.integral()).collect();
    let gn = g.with_values(gv.clone());
    let s = bracket(&gn, phi).unwrap_or(1.0);
    let pv: Vec<f64> = phi.values().iter().map(|a| a / s).collect();

    let mut lg = vec![0.0; n];
    let mut fg = vec![0.0; n];
    r.apply_inverse(&gv, &mut lg);
    prob.gain.apply_slice(&gv, &mut fg);
    let direct = lg
        .iter()
        .zip(&fg)
        .zip(prob.centers)
        .zip(prob.widths)
        .map(|(((a, b), x), w)| (a - b).abs() * weight(*x, 1.0) * w)
        .sum();

    let mut lp = vec![0.0; n];
    let mut fp = vec![0.0; n];
    r.apply_adjoint_inverse(&pv, &mut lp);
    adjoint.apply_slice(&pv, &mut fp);
    let dual = lp
        .iter()
        .zip(&fp)
        .zip(prob.centers)
        .zip(prob.widths)
        .map(|(((a, b), x), w)| (a - b).abs() * w / (1.0 + x))
        .sum();
    (direct, dual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{FragmentationKernel, FragmentationRate, GrowthRate};

    fn baseline() -> CoefficientSet {
        CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::mitosis()).unwrap()
    }

    #[test]
    fn phi_series_matches_closed_form() {
        for &k in &[0.049, 0.051, 1e-6, 0.3] {
            let (a, b) = phi12(k);
            let em = (-k).exp_m1();
            assert!((a + em / k).abs() < 1e-13);
            assert!((b - (k + em) / (k * k)).abs() < 1e-9);
        }
    }

    #[test]
    fn resolvent_examples() {
        let grid = Arc::new(Grid::uniform(1e-3, 10.0, 4000).unwrap());
        let c = CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::zero(), FragmentationKernel::mitosis()).unwrap();
        let zero = DiscreteField::zeros(grid.clone());
        assert_eq!(apply_resolvent(&c, &grid, 1.0, 0.0, &zero).unwrap().values().iter().sum::<f64>(), 0.0);
        // h = δ at a: f = e^{−μ(x−a)} for x > a
        let a = 2.0;
        let i = grid.locate(a).unwrap();
        let mut h = DiscreteField::zeros(grid.clone());
        h.values_mut()[i] = 1.0 / grid.widths()[i];
        let mu = 0.7;
        let f = apply_resolvent(&c, &grid, mu, 0.0, &h).unwrap();
        for (k, &x) in grid.centers().iter().enumerate() {
            if x > a + 0.01 {
                let exact = (-mu * (x - grid.edges()[i + 1])).exp() * (-mu * grid.widths()[i]).exp_m1() / (-mu * grid.widths()[i]);
                assert!((f.values()[k] - exact).abs() < 1e-3, "x={x}");
            } else if x < a - 0.01 {
                assert_eq!(f.values()[k], 0.0);
            }
        }
    }

    #[test]
    fn resolvent_inverse_and_transpose() {
        let grid = Arc::new(Grid::geometric(1e-3, 20.0, 64).unwrap());
        let cells = CellData::new(&baseline(), &grid);
        let r = Resolvent::new(&cells, 0.8);
        let h: Vec<f64> = (0..64).map(|i| ((i * 7919) % 13) as f64 + 0.5).collect();
        let g: Vec<f64> = (0..64).map(|i| ((i * 104729) % 11) as f64 - 3.0).collect();
        let mut f = vec![0.0; 64];
        let mut back = vec![0.0; 64];
        r.apply(&h, &mut f);
        assert!(f.iter().all(|v| *v > 0.0));
        r.apply_inverse(&f, &mut back);
        for k in 0..64 {
            assert!((back[k] - h[k]).abs() < 1e-9 * h[k].abs().max(1.0));
        }
        // ⟨R h, g⟩_W = ⟨h, R* g⟩_W and R*⁻¹ R* = I
        let mut rs = vec![0.0; 64];
        r.apply_adjoint(&g, &mut rs);
        let w = grid.widths();
        let lhs: f64 = (0..64).map(|k| f[k] * g[k] * w[k]).sum();
        let rhs: f64 = (0..64).map(|k| h[k] * rs[k] * w[k]).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        let mut gi = vec![0.0; 64];
        r.apply_adjoint_inverse(&rs, &mut gi);
        for k in 0..64 {
            assert!((gi[k] - g[k]).abs() < 1e-8 * g[k].abs().max(1.0), "{k}: {} {}", gi[k], g[k]);
        }
    }

    #[test]
    fn baseline_perron_triple() {
        let grid = Arc::new(Grid::geometric_snapped(1e-3, 50.0, 512, 0.5).unwrap());
        let t = solve_perron(&baseline(), &grid, 1e-8, 20_000).unwrap();
        assert!(t.lambda > 0.0);
        assert!((t.g().integral() - 1.0).abs() < 1e-12);
        assert!((bracket(t.g(), t.phi()).unwrap() - 1.0).abs() < 1e-12);
        assert!(t.phi().min_value() > 0.0);
        assert!(t.g().min_value() >= 0.0);
        assert!(t.sandwich_constant.unwrap().is_finite());
    }

    #[test]
    fn sandwich_examples() {
        let grid = Arc::new(Grid::geometric(1e-3, 50.0, 64).unwrap());
        let g = DiscreteField::sample(grid.clone(), |x| (-x).exp());
        let t = PerronTriple::from_parts(1.0, g.clone(), DiscreteField::sample(grid.clone(), |x| 1.0 + x)).unwrap();
        // φ is rescaled so that ⟨G,φ⟩ = 1, which rescales C accordingly
        let s = bracket(&g.scaled(1.0 / g.integral()), &DiscreteField::sample(grid.clone(), |x| 1.0 + x)).unwrap();
        assert!((check_sandwich(&t) - s.max(1.0 / s)).abs() < 1e-12);
        assert_eq!(sandwich(&DiscreteField::sample(grid.clone(), |x| 1.0 + x), 64), 1.0);
        assert!((sandwich(&DiscreteField::sample(grid, |x| 2.0 * (1.0 + x)), 64) - 2.0).abs() < 1e-15);
    }
}
