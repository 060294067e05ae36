//! Model data: growth rate τ, total fragmentation rate B and fragmentation
//! kernel ℘, with kernel moments and hypothesis validation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GfError, Result};
use crate::piecewise::{Piece, PiecewiseIntegrand, Segment};

/// Tolerance on the mass-conservation identity ℘₁ = 1.
pub const MASS_CONSERVATION_TOL: f64 = 1e-10;

/// Whether characteristics reach the boundary x = 0 in finite time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Standard,
    Osgood,
}

fn piecewise_linear(xs: &[f64], vs: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return vs[0];
    }
    let n = xs.len();
    if x >= xs[n - 1] {
        return vs[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    vs[k] + t * (vs[k + 1] - vs[k])
}

fn check_table(xs: &[f64], vs: &[f64], hypothesis: &'static str) -> Result<()> {
    if xs.len() < 2 || xs.len() != vs.len() {
        return Err(GfError::invalid(hypothesis, "table needs ≥ 2 points and matching lengths"));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) || xs[0] <= 0.0 {
        return Err(GfError::invalid(hypothesis, "table abscissae must be positive and strictly increasing"));
    }
    if vs.iter().any(|v| !v.is_finite()) {
        return Err(GfError::invalid(hypothesis, "table values must be finite"));
    }
    Ok(())
}

/// Piecewise-linear table with constant extrapolation, as integrand segments.
fn table_segments(xs: &[f64], vs: &[f64]) -> PiecewiseIntegrand {
    let n = xs.len();
    let mut segs = vec![Segment {
        lo: 0.0,
        hi: xs[0],
        piece: Piece::Power { a: vs[0], q: 0.0 },
    }];
    let xs_a: Arc<[f64]> = xs.into();
    let vs_a: Arc<[f64]> = vs.into();
    segs.push(Segment {
        lo: xs[0],
        hi: xs[n - 1],
        piece: Piece::Numeric(Arc::new(move |x| piecewise_linear(&xs_a, &vs_a, x))),
    });
    segs.push(Segment {
        lo: xs[n - 1],
        hi: f64::INFINITY,
        piece: Piece::Power { a: vs[n - 1], q: 0.0 },
    });
    PiecewiseIntegrand::new(segs)
}

/// Family of growth rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GrowthFamily {
    /// τ(x) = c
    Constant { c: f64 },
    /// τ(x) = c·x^p
    Power { c: f64, p: f64 },
    /// τ(x) = c·max(1, x)
    AffineCapped { c: f64 },
    /// piecewise-linear table, constant beyond its ends
    Tabulated { xs: Vec<f64>, values: Vec<f64> },
}

/// Growth rate τ together with the constants (ν₀, τ₀, τ₁) of its growth bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRate {
    pub family: GrowthFamily,
    pub nu0: f64,
    pub tau0: f64,
    pub tau1: f64,
}

impl GrowthRate {
    /// Builds a growth rate with bound constants inferred from the family.
    pub fn new(family: GrowthFamily) -> Result<Self> {
        let (nu0, tau0, tau1) = match &family {
            GrowthFamily::Constant { c } => {
                if *c <= 0.0 || !c.is_finite() {
                    return Err(GfError::invalid("Hτ", format!("growth rate must be positive, got c = {c}")));
                }
                (0.0, *c, *c)
            }
            GrowthFamily::Power { c, p } => {
                if *c <= 0.0 || !c.is_finite() || !p.is_finite() {
                    return Err(GfError::invalid("Hτ", format!("power growth needs c > 0, got c = {c}")));
                }
                (p.min(1.0), *c, *c)
            }
            GrowthFamily::AffineCapped { c } => {
                if *c <= 0.0 || !c.is_finite() {
                    return Err(GfError::invalid("Hτ", format!("growth rate must be positive, got c = {c}")));
                }
                (1.0, *c, *c)
            }
            GrowthFamily::Tabulated { xs, values } => {
                check_table(xs, values, "Hτ")?;
                if values.iter().any(|v| *v <= 0.0) {
                    return Err(GfError::invalid("Hτ", "tabulated growth rate must be positive"));
                }
                let tau0 = xs
                    .iter()
                    .zip(values)
                    .filter(|(x, _)| **x >= 1.0)
                    .map(|(_, v)| *v)
                    .fold(*values.last().unwrap(), f64::min);
                let tau1 = xs
                    .iter()
                    .zip(values)
                    .map(|(x, v)| v / x.max(1.0))
                    .fold(values[0], f64::max);
                (0.0, tau0, tau1)
            }
        };
        Ok(GrowthRate { family, nu0, tau0, tau1 })
    }

    pub fn constant(c: f64) -> Self {
        Self::new(GrowthFamily::Constant { c }).expect("constant growth")
    }

    pub fn power(c: f64, p: f64) -> Self {
        Self::new(GrowthFamily::Power { c, p }).expect("power growth")
    }

    pub fn affine_capped(c: f64) -> Self {
        Self::new(GrowthFamily::AffineCapped { c }).expect("affine-capped growth")
    }

    /// Overrides the inferred bound constants.
    pub fn with_bounds(mut self, nu0: f64, tau0: f64, tau1: f64) -> Self {
        self.nu0 = nu0;
        self.tau0 = tau0;
        self.tau1 = tau1;
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.family {
            GrowthFamily::Constant { c } => *c,
            GrowthFamily::Power { c, p } => c * x.powf(*p),
            GrowthFamily::AffineCapped { c } => c * x.max(1.0),
            GrowthFamily::Tabulated { xs, values } => piecewise_linear(xs, values, x),
        }
    }

    pub(crate) fn segments(&self) -> PiecewiseIntegrand {
        match &self.family {
            GrowthFamily::Constant { c } => PiecewiseIntegrand::power(*c, 0.0),
            GrowthFamily::Power { c, p } => PiecewiseIntegrand::power(*c, *p),
            GrowthFamily::AffineCapped { c } => PiecewiseIntegrand::new(vec![
                Segment { lo: 0.0, hi: 1.0, piece: Piece::Power { a: *c, q: 0.0 } },
                Segment { lo: 1.0, hi: f64::INFINITY, piece: Piece::Power { a: *c, q: 1.0 } },
            ]),
            GrowthFamily::Tabulated { xs, values } => table_segments(xs, values),
        }
    }

    /// True when 1/τ is integrable near 0 (characteristics reach the boundary).
    pub fn integrable_at_zero(&self) -> bool {
        match &self.family {
            GrowthFamily::Power { p, .. } => *p < 1.0,
            _ => true,
        }
    }

    pub fn mode(&self) -> Mode {
        if self.integrable_at_zero() {
            Mode::Standard
        } else {
            Mode::Osgood
        }
    }
}

/// Family of total fragmentation rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FragmentationFamily {
    /// B(x) = b·x^γ (γ = 0 gives a constant rate, b = 0 no fragmentation)
    Power { b: f64, gamma: f64 },
    /// B(x) = b·min(x, x_cap)^γ
    CappedPower { b: f64, gamma: f64, x_cap: f64 },
    /// piecewise-linear table, constant beyond its ends
    Tabulated { xs: Vec<f64>, values: Vec<f64> },
}

/// Total fragmentation rate B with its bound constants (γ₀, γ₁, B₀, B₁, x₀).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentationRate {
    pub family: FragmentationFamily,
    pub gamma0: f64,
    pub gamma1: f64,
    pub b0: f64,
    pub b1: f64,
    pub x0: f64,
}

impl FragmentationRate {
    pub fn new(family: FragmentationFamily) -> Result<Self> {
        let (gamma0, gamma1, b0, b1, x0) = match &family {
            FragmentationFamily::Power { b, gamma } => {
                if *b < 0.0 || !b.is_finite() || *gamma < 0.0 {
                    return Err(GfError::invalid("HB", format!("B = b·x^γ needs b ≥ 0, γ ≥ 0 (b = {b}, γ = {gamma})")));
                }
                (*gamma, *gamma, *b, *b, 1.0)
            }
            FragmentationFamily::CappedPower { b, gamma, x_cap } => {
                if *b < 0.0 || *gamma < 0.0 || *x_cap <= 0.0 {
                    return Err(GfError::invalid("HB", "capped power needs b ≥ 0, γ ≥ 0, x_cap > 0"));
                }
                (*gamma, *gamma, *b, *b, 1.0)
            }
            FragmentationFamily::Tabulated { xs, values } => {
                check_table(xs, values, "HB")?;
                if values.iter().any(|v| *v < 0.0) {
                    return Err(GfError::invalid("HB", "tabulated fragmentation rate must be nonnegative"));
                }
                let bmax = values.iter().cloned().fold(0.0, f64::max);
                (0.0, 0.0, *values.last().unwrap(), bmax, 1.0)
            }
        };
        Ok(FragmentationRate { family, gamma0, gamma1, b0, b1, x0 })
    }

    pub fn power(b: f64, gamma: f64) -> Self {
        Self::new(FragmentationFamily::Power { b, gamma }).expect("power fragmentation rate")
    }

    pub fn zero() -> Self {
        Self::power(0.0, 0.0)
    }

    pub fn with_bounds(mut self, gamma0: f64, gamma1: f64, b0: f64, b1: f64, x0: f64) -> Self {
        self.gamma0 = gamma0;
        self.gamma1 = gamma1;
        self.b0 = b0;
        self.b1 = b1;
        self.x0 = x0;
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.family {
            FragmentationFamily::Power { b, gamma } => {
                if *gamma == 0.0 {
                    *b
                } else {
                    b * x.powf(*gamma)
                }
            }
            FragmentationFamily::CappedPower { b, gamma, x_cap } => b * x.min(*x_cap).powf(*gamma),
            FragmentationFamily::Tabulated { xs, values } => piecewise_linear(xs, values, x),
        }
    }

    /// Supremum of B when it is bounded (used as a thinning majorant).
    pub fn bounded_sup(&self) -> Option<f64> {
        match &self.family {
            FragmentationFamily::Power { b, gamma } => (*gamma == 0.0 || *b == 0.0).then_some(*b),
            FragmentationFamily::CappedPower { b, gamma, x_cap } => Some(b * x_cap.powf(*gamma)),
            FragmentationFamily::Tabulated { values, .. } => Some(values.iter().cloned().fold(0.0, f64::max)),
        }
    }

    pub(crate) fn segments(&self) -> PiecewiseIntegrand {
        match &self.family {
            FragmentationFamily::Power { b, gamma } => PiecewiseIntegrand::power(*b, *gamma),
            FragmentationFamily::CappedPower { b, gamma, x_cap } => PiecewiseIntegrand::new(vec![
                Segment { lo: 0.0, hi: *x_cap, piece: Piece::Power { a: *b, q: *gamma } },
                Segment {
                    lo: *x_cap,
                    hi: f64::INFINITY,
                    piece: Piece::Power { a: b * x_cap.powf(*gamma), q: 0.0 },
                },
            ]),
            FragmentationFamily::Tabulated { xs, values } => table_segments(xs, values),
        }
    }
}

/// Absolutely continuous part of a fragmentation kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelDensity {
    /// weight·(ν+2)·z^ν on (0, 1), ν > -1
    PowerLaw { nu: f64, weight: f64 },
    /// 2·weight on (0, 1)
    Uniform { weight: f64 },
    /// piecewise-linear density through (z_k, v_k), constant extrapolation to 0 and 1
    Tabulated { zs: Vec<f64>, values: Vec<f64> },
}

impl KernelDensity {
    fn as_power_law(&self) -> Option<(f64, f64)> {
        match self {
            KernelDensity::PowerLaw { nu, weight } => Some((*nu, *weight)),
            KernelDensity::Uniform { weight } => Some((0.0, *weight)),
            KernelDensity::Tabulated { .. } => None,
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        if z <= 0.0 || z >= 1.0 {
            return 0.0;
        }
        match self {
            KernelDensity::Tabulated { zs, values } => piecewise_linear(zs, values, z),
            _ => {
                let (nu, w) = self.as_power_law().unwrap();
                w * (nu + 2.0) * z.powf(nu)
            }
        }
    }

    /// Breakpoints of the tabulated density extended with 0 and 1.
    fn table_knots(zs: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
        let mut knots = vec![(0.0, values[0])];
        knots.extend(zs.iter().cloned().zip(values.iter().cloned()));
        knots.push((1.0, *values.last().unwrap()));
        knots
    }

    /// ∫_a^b z^k·density(z) dz for k ∈ {0, 1} and 0 ≤ a ≤ b ≤ 1.
    pub fn partial_moment(&self, k: i32, a: f64, b: f64) -> f64 {
        let a = a.clamp(0.0, 1.0);
        let b = b.clamp(0.0, 1.0);
        if b <= a {
            return 0.0;
        }
        match self {
            KernelDensity::Tabulated { zs, values } => {
                let knots = Self::table_knots(zs, values);
                let mut total = 0.0;
                for w in knots.windows(2) {
                    let (z0, v0) = w[0];
                    let (z1, v1) = w[1];
                    let lo = a.max(z0);
                    let hi = b.min(z1);
                    if lo >= hi || z1 <= z0 {
                        continue;
                    }
                    // v(z) = v0 + s (z - z0)
                    let s = (v1 - v0) / (z1 - z0);
                    let c0 = v0 - s * z0;
                    let p = |z: f64| match k {
                        0 => c0 * z + s * z * z / 2.0,
                        _ => c0 * z * z / 2.0 + s * z * z * z / 3.0,
                    };
                    total += p(hi) - p(lo);
                }
                total
            }
            _ => {
                let (nu, w) = self.as_power_law().unwrap();
                let e = nu + 1.0 + k as f64;
                w * (nu + 2.0) * (b.powf(e) - a.powf(e)) / e
            }
        }
    }
}

/// Fragmentation kernel ℘: finite atoms plus an optional density on (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentationKernel {
    #[serde(default)]
    pub atoms: Vec<(f64, f64)>,
    #[serde(default)]
    pub density: Option<KernelDensity>,
}

impl FragmentationKernel {
    /// Builds a kernel and checks the structural part of (H℘).
    pub fn new(atoms: Vec<(f64, f64)>, density: Option<KernelDensity>) -> Result<Self> {
        let k = FragmentationKernel { atoms, density };
        k.check_structure()?;
        Ok(k)
    }

    /// ℘ = 2δ_{1/2}
    pub fn mitosis() -> Self {
        FragmentationKernel { atoms: vec![(0.5, 2.0)], density: None }
    }

    /// ℘ = δ_θ + δ_{1-θ}
    pub fn asymmetric(theta: f64) -> Self {
        FragmentationKernel { atoms: vec![(theta, 1.0), (1.0 - theta, 1.0)], density: None }
    }

    /// ℘(dz) = 2 dz
    pub fn uniform() -> Self {
        FragmentationKernel { atoms: vec![], density: Some(KernelDensity::Uniform { weight: 1.0 }) }
    }

    /// ℘(dz) = (ν+2) z^ν dz
    pub fn power_law(nu: f64) -> Self {
        FragmentationKernel { atoms: vec![], density: Some(KernelDensity::PowerLaw { nu, weight: 1.0 }) }
    }

    pub fn is_atomic(&self) -> bool {
        self.density.is_none()
    }

    pub(crate) fn check_structure(&self) -> Result<()> {
        for &(z, w) in &self.atoms {
            if !(z > 0.0 && z < 1.0) {
                return Err(GfError::invalid("H℘", format!("atom position {z} outside (0, 1)")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(GfError::invalid("H℘", format!("atom weight {w} must be positive")));
            }
        }
        match &self.density {
            Some(KernelDensity::PowerLaw { nu, weight }) if !(*nu > -1.0) || !(*weight > 0.0) => {
                return Err(GfError::invalid("H℘", format!("power-law density needs ν > -1 and positive weight (ν = {nu})")));
            }
            Some(KernelDensity::Uniform { weight }) if !(*weight > 0.0) => {
                return Err(GfError::invalid("H℘", "uniform density needs a positive weight"));
            }
            Some(KernelDensity::Tabulated { zs, values }) => {
                if zs.len() < 2 || zs.len() != values.len() {
                    return Err(GfError::invalid("H℘", "tabulated density needs ≥ 2 points"));
                }
                if zs.windows(2).any(|w| w[1] <= w[0]) || zs[0] <= 0.0 || *zs.last().unwrap() >= 1.0 {
                    return Err(GfError::invalid("H℘", "tabulated density abscissae must increase inside (0, 1)"));
                }
                if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    return Err(GfError::invalid("H℘", "tabulated density must be nonnegative"));
                }
            }
            _ => {}
        }
        if self.atoms.is_empty() && self.density.is_none() {
            return Err(GfError::invalid("H℘", "kernel is the zero measure"));
        }
        let m1 = kernel_moment(self, 1.0);
        if (m1 - 1.0).abs() > MASS_CONSERVATION_TOL {
            return Err(GfError::invalid(
                "H℘",
                format!("mass conservation ∫z℘(dz) = 1 violated: ℘₁ = {m1}"),
            ));
        }
        Ok(())
    }

    /// ∫_{(a,b]} z^k ℘(dz) for k ∈ {0, 1}: atoms in the half-open range plus density.
    pub fn partial_moment(&self, k: i32, a: f64, b: f64) -> f64 {
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|(z, _)| *z > a && *z <= b)
            .map(|(z, w)| w * z.powi(k))
            .sum();
        atoms + self.density.as_ref().map_or(0.0, |d| d.partial_moment(k, a, b))
    }
}

/// ∫ z^α·density over (0, 1) for a tabulated density: each knot interval is
/// linear in z, so the integral is a sum of closed-form power integrals.
fn tabulated_moment(zs: &[f64], values: &[f64], alpha: f64) -> f64 {
    let pow_int = |e: f64, a: f64, b: f64| -> f64 {
        if e == 0.0 {
            if a == 0.0 {
                f64::INFINITY
            } else {
                (b / a).ln()
            }
        } else if a == 0.0 && e < 0.0 {
            f64::INFINITY
        } else {
            (b.powf(e) - a.powf(e)) / e
        }
    };
    let knots = KernelDensity::table_knots(zs, values);
    let mut total = 0.0;
    for w in knots.windows(2) {
        let (z0, v0) = w[0];
        let (z1, v1) = w[1];
        if z1 <= z0 || (v0 == 0.0 && v1 == 0.0) {
            continue;
        }
        let s = (v1 - v0) / (z1 - z0);
        let c0 = v0 - s * z0;
        if c0 != 0.0 {
            total += c0 * pow_int(alpha + 1.0, z0, z1);
        }
        if s != 0.0 {
            total += s * pow_int(alpha + 2.0, z0, z1);
        }
    }
    total
}

/// α-moment ℘_α = ∫ z^α ℘(dz); +∞ when α ≤ α̲.
pub fn kernel_moment(kernel: &FragmentationKernel, alpha: f64) -> f64 {
    let atoms: f64 = kernel.atoms.iter().map(|(z, w)| w * z.powf(alpha)).sum();
    let density = match &kernel.density {
        None => 0.0,
        Some(d) => match d.as_power_law() {
            Some((nu, w)) => {
                if alpha <= -(nu + 1.0) {
                    f64::INFINITY
                } else {
                    w * (nu + 2.0) / (nu + alpha + 1.0)
                }
            }
            None => {
                if alpha <= critical_alpha(kernel) {
                    f64::INFINITY
                } else if let KernelDensity::Tabulated { zs, values } = d {
                    tabulated_moment(zs, values, alpha)
                } else {
                    unreachable!()
                }
            }
        },
    };
    atoms + density
}

/// Critical exponent α̲ = inf{α : ℘_α < ∞}.
pub fn critical_alpha(kernel: &FragmentationKernel) -> f64 {
    match &kernel.density {
        None => f64::NEG_INFINITY,
        Some(d) => match d.as_power_law() {
            Some((nu, _)) => -(nu + 1.0),
            // the table is extended by its first value down to z = 0
            None => match d {
                KernelDensity::Tabulated { values, .. } if values[0] > 0.0 => -1.0,
                _ => f64::NEG_INFINITY,
            },
        },
    }
}

/// The full coefficient set (τ, B, ℘).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub tau: GrowthRate,
    pub b: FragmentationRate,
    pub kernel: FragmentationKernel,
}

impl CoefficientSet {
    pub fn new(tau: GrowthRate, b: FragmentationRate, kernel: FragmentationKernel) -> Result<Self> {
        kernel.check_structure()?;
        Ok(CoefficientSet { tau, b, kernel })
    }

    pub fn mode(&self) -> Mode {
        self.tau.mode()
    }

    /// B/τ as a piecewise integrand.
    pub(crate) fn b_over_tau(&self) -> PiecewiseIntegrand {
        self.b.segments().product(&self.tau.segments().reciprocal())
    }

    /// Constant τ₁ + (℘₀ − 1)·B₁ bounding the Malthus parameter from above.
    pub fn lambda_upper_bound(&self) -> f64 {
        self.tau.tau1 + (kernel_moment(&self.kernel, 0.0) - 1.0) * self.b.b1
    }
}

/// max(1, α̲ + 2γ₁ − 2γ₀): exponents above this give exponential convergence.
pub fn threshold_alpha(coeffs: &CoefficientSet) -> f64 {
    let a = critical_alpha(&coeffs.kernel) + 2.0 * coeffs.b.gamma1 - 2.0 * coeffs.b.gamma0;
    if a.is_nan() || a == f64::NEG_INFINITY {
        1.0
    } else {
        a.max(1.0)
    }
}

/// One line of a validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub hypothesis: String,
    pub name: String,
    pub passed: bool,
    pub witness: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
    pub mode: Mode,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &HypothesisCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Log-spaced probe points in [1e-6, 1e6].
fn probe_points() -> Vec<f64> {
    (0..=240).map(|k| 10f64.powf(-6.0 + 12.0 * k as f64 / 240.0)).collect()
}

fn samplewise<F: Fn(f64) -> bool>(points: &[f64], ok: F) -> Option<f64> {
    points.iter().cloned().find(|&x| !ok(x))
}

/// Samplewise check of the hypotheses on τ, B and ℘.
///
/// Structural failures (non-positive τ, negative B, ℘₁ ≠ 1) are errors;
/// growth-bound inequalities are reported with a witness point.
pub fn validate_hypotheses(coeffs: &CoefficientSet, sample_points: &[f64]) -> Result<ValidationReport> {
    if sample_points.is_empty() {
        return Err(GfError::Config("validation needs at least one sample point".into()));
    }
    coeffs.kernel.check_structure()?;
    let mut points: Vec<f64> = sample_points.iter().cloned().filter(|x| *x > 0.0).collect();
    points.extend(probe_points());
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();

    let tau = &coeffs.tau;
    let b = &coeffs.b;
    if let Some(x) = points.iter().find(|&&x| !(tau.eval(x) > 0.0)) {
        return Err(GfError::invalid("Hτ", format!("τ must be positive, τ({x}) = {}", tau.eval(*x))));
    }
    if let Some(x) = points.iter().find(|&&x| !(b.eval(x) >= 0.0)) {
        return Err(GfError::invalid("HB", format!("B must be nonnegative, B({x}) = {}", b.eval(*x))));
    }

    let mut checks = Vec::new();
    let mut push = |hyp: &str, name: &str, witness: Option<f64>, passed: bool, detail: String| {
        checks.push(HypothesisCheck {
            hypothesis: hyp.to_string(),
            name: name.to_string(),
            passed,
            witness,
            detail,
        });
    };

    let integrable = tau.integrable_at_zero();
    push(
        "Hτ",
        "inverse_tau_integrable_at_zero",
        None,
        integrable,
        if integrable {
            "1/τ ∈ L¹(0,1)".into()
        } else {
            "1/τ ∉ L¹(0,1): Osgood regime".into()
        },
    );
    let params_ok = tau.nu0 <= 1.0 && tau.tau1 >= tau.tau0 && tau.tau0 > 0.0;
    push(
        "Hτ",
        "tau_parameters",
        None,
        params_ok,
        format!("ν₀ = {}, τ₀ = {}, τ₁ = {}", tau.nu0, tau.tau0, tau.tau1),
    );
    let rel = 1e-12;
    let w = samplewise(&points, |x| {
        let lower = if x >= 1.0 { tau.tau0 * x.powf(tau.nu0) } else { 0.0 };
        lower <= tau.eval(x) * (1.0 + rel)
    });
    push("Hτ", "tau_lower_bound", w, w.is_none(), "τ₀·1_{x≥1}·x^ν₀ ≤ τ(x)".into());
    let w = samplewise(&points, |x| tau.eval(x) <= tau.tau1 * x.max(1.0) * (1.0 + rel));
    push("Hτ", "tau_upper_bound", w, w.is_none(), "τ(x) ≤ τ₁·max(1,x)".into());

    let params_ok = b.gamma1 >= b.gamma0 && b.gamma0 > 0.0 && b.b1 >= b.b0 && b.b0 > 0.0 && b.x0 > 0.0;
    push(
        "HB",
        "b_parameters",
        None,
        params_ok,
        format!(
            "γ₀ = {}, γ₁ = {}, B₀ = {}, B₁ = {}, x₀ = {} (γ₁ ≥ γ₀ > 0 and B₁ ≥ B₀ > 0 required)",
            b.gamma0, b.gamma1, b.b0, b.b1, b.x0
        ),
    );
    let w = samplewise(&points, |x| {
        let lower = if x >= b.x0 { b.b0 * x.powf(b.gamma0) } else { 0.0 };
        lower <= b.eval(x) * (1.0 + rel)
    });
    push("HB", "b_lower_bound", w, w.is_none(), "B₀·1_{x≥x₀}·x^γ₀ ≤ B(x)".into());
    let w = samplewise(&points, |x| b.eval(x) <= b.b1 * x.powf(b.gamma1).max(1.0) * (1.0 + rel));
    push("HB", "b_upper_bound", w, w.is_none(), "B(x) ≤ B₁·max(1, x^γ₁)".into());
    // connected support: no zero strictly between two positive samples
    let positive: Vec<bool> = points.iter().map(|&x| b.eval(x) > 0.0).collect();
    let first = positive.iter().position(|p| *p);
    let last = positive.iter().rposition(|p| *p);
    let gap = match (first, last) {
        (Some(f), Some(l)) => (f..=l).find(|&i| !positive[i]).map(|i| points[i]),
        _ => None,
    };
    push("HB", "b_connected_support", gap, gap.is_none(), "supp B connected".into());

    let m1 = kernel_moment(&coeffs.kernel, 1.0);
    let m0 = kernel_moment(&coeffs.kernel, 0.0);
    push("H℘", "kernel_mass_conservation", None, true, format!("℘₁ = {m1}"));
    push(
        "H℘",
        "kernel_finite_mass",
        None,
        m0.is_finite() && m0 > 1.0,
        format!("1 = ℘₁ < ℘₀ = {m0} < ∞"),
    );

    Ok(ValidationReport { checks, mode: coeffs.mode() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mitosis_moments() {
        let k = FragmentationKernel::mitosis();
        assert!((kernel_moment(&k, 1.0) - 1.0).abs() < 1e-15);
        assert!((kernel_moment(&k, 0.0) - 2.0).abs() < 1e-15);
        assert_eq!(critical_alpha(&k), f64::NEG_INFINITY);
    }

    #[test]
    fn uniform_moments() {
        let k = FragmentationKernel::uniform();
        assert!((kernel_moment(&k, 2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(critical_alpha(&k), -1.0);
        assert_eq!(kernel_moment(&k, -1.0), f64::INFINITY);
        assert_eq!(critical_alpha(&FragmentationKernel::power_law(-0.5)), -0.5);
    }

    #[test]
    fn threshold_examples() {
        let c = CoefficientSet::new(
            GrowthRate::constant(1.0),
            FragmentationRate::power(1.0, 1.0),
            FragmentationKernel::mitosis(),
        )
        .unwrap();
        assert_eq!(threshold_alpha(&c), 1.0);
        let mut u = c.clone();
        u.kernel = FragmentationKernel::uniform();
        assert_eq!(threshold_alpha(&u), 1.0);
        u.b = FragmentationRate::power(1.0, 1.0).with_bounds(1.0, 2.5, 1.0, 1.0, 1.0);
        assert!((threshold_alpha(&u) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn validation_standard_case() {
        let c = CoefficientSet::new(
            GrowthRate::constant(1.0),
            FragmentationRate::power(1.0, 1.0),
            FragmentationKernel::mitosis(),
        )
        .unwrap();
        let r = validate_hypotheses(&c, &[0.01, 1.0, 10.0]).unwrap();
        assert!(r.all_passed(), "{:?}", r.failed().collect::<Vec<_>>());
        assert_eq!(r.mode, Mode::Standard);
    }

    #[test]
    fn validation_osgood_case() {
        let c = CoefficientSet::new(
            GrowthRate::power(1.0, 1.0),
            FragmentationRate::power(1.0, 1.0),
            FragmentationKernel::uniform(),
        )
        .unwrap();
        let r = validate_hypotheses(&c, &[0.01, 1.0, 10.0]).unwrap();
        assert_eq!(r.mode, Mode::Osgood);
        let failed: Vec<_> = r.failed().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["inverse_tau_integrable_at_zero"]);
    }

    #[test]
    fn validation_rejects_mass_violation() {
        let k = FragmentationKernel { atoms: vec![(0.5, 3.0)], density: None };
        let c = CoefficientSet {
            tau: GrowthRate::constant(1.0),
            b: FragmentationRate::power(1.0, 1.0),
            kernel: k,
        };
        match validate_hypotheses(&c, &[1.0]) {
            Err(GfError::InvalidCoefficient { hypothesis, message }) => {
                assert_eq!(hypothesis, "H℘");
                assert!(message.contains("1.5"), "{message}");
            }
            other => panic!("expected InvalidCoefficient, got {other:?}"),
        }
    }

    #[test]
    fn bounded_b_is_flagged() {
        let c = CoefficientSet::new(
            GrowthRate::constant(1.0),
            FragmentationRate::power(1.0, 0.0),
            FragmentationKernel::mitosis(),
        )
        .unwrap();
        let r = validate_hypotheses(&c, &[1.0]).unwrap();
        assert!(!r.check("b_parameters").unwrap().passed);
    }

    #[test]
    fn capped_rate_fails_lower_bound_with_witness() {
        let b = FragmentationRate::new(FragmentationFamily::CappedPower { b: 1.0, gamma: 1.0, x_cap: 5.0 }).unwrap();
        let c = CoefficientSet::new(GrowthRate::constant(1.0), b, FragmentationKernel::mitosis()).unwrap();
        let r = validate_hypotheses(&c, &[1.0, 10.0]).unwrap();
        let chk = r.check("b_lower_bound").unwrap();
        assert!(!chk.passed);
        assert!(chk.witness.unwrap() > 5.0);
    }

    #[test]
    fn tabulated_density_moments() {
        // tabulated uniform density 2 on (0,1)
        let d = KernelDensity::Tabulated { zs: vec![0.25, 0.75], values: vec![2.0, 2.0] };
        let k = FragmentationKernel::new(vec![], Some(d)).unwrap();
        assert!((kernel_moment(&k, 2.0) - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(critical_alpha(&k), -1.0);
        // a density vanishing near 0 has all negative moments finite
        let d = KernelDensity::Tabulated { zs: vec![0.2, 0.5, 0.8], values: vec![0.0, 4.0, 0.0] };
        let k = FragmentationKernel { atoms: vec![], density: Some(d) };
        assert_eq!(critical_alpha(&k), f64::NEG_INFINITY);
        let m = kernel_moment(&k, 1.5);
        let r = crate::quadrature::integrate(|z: f64| z.powf(1.5) * k.density.as_ref().unwrap().eval(z), 0.0, 1.0, 1e-13, 0.0, 2000);
        assert!((m - r.value).abs() < 1e-11);
    }
}
