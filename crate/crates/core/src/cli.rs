//! Scenario files and the `gfkit` command line.
//!
//! A scenario is a TOML file with one table per stage:
//!
//! ```toml
//! name = "baseline"
//!
//! [coefficients]
//! tau = { family = "constant", c = 1.0 }
//! b = { family = "power", b = 1.0, gamma = 1.0 }
//! kernel = { family = "mitosis" }
//!
//! [grid]
//! x_min = 1e-3
//! x_max = 50.0
//! n = 2048
//!
//! [evolution]
//! dt = 1e-3
//! t_end = 20.0
//!
//! [diagnostics]
//! alphas = [2.0]
//! fit_window = [5.0, 20.0]
//!
//! [[initial]]
//! kind = "indicator"
//! a = 1.0
//! b = 2.0
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use plotters::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{
    critical_alpha, threshold_alpha, validate_hypotheses, CoefficientSet, FragmentationFamily, FragmentationKernel,
    FragmentationRate, GrowthFamily, GrowthRate, KernelDensity, Mode, ValidationReport,
};
use crate::diagnostics::{aeg_distance, detect_oscillation, fit_rate_with, osgood_initial, FitOptions, Oscillation, RateFit};
use crate::discretization::{csv_row, fmt_float, DiscreteField, Grid};
use crate::eigensolver::{solve_perron, PerronTriple};
use crate::error::GfError;
use crate::evolution::{evolve, EvolutionConfig, Method, SimulationTrace};
use crate::particle_oracle::{simulate, MomentSeries, OracleConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable overriding the oracle seed.
pub const SEED_ENV: &str = "GFKIT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub coefficients: CoefficientSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub eigen: EigenSpec,
    #[serde(default)]
    pub evolution: EvolutionSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default = "default_initial")]
    pub initial: Vec<InitialTerm>,
    #[serde(default)]
    pub oracle: OracleSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub tau: GrowthFamily,
    pub b: FragmentationFamily,
    pub kernel: KernelSpec,
    /// Overrides (ν₀, τ₀, τ₁).
    #[serde(default)]
    pub tau_bounds: Option<[f64; 3]>,
    /// Overrides (γ₀, γ₁, B₀, B₁, x₀).
    #[serde(default)]
    pub b_bounds: Option<[f64; 5]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Mitosis,
    Asymmetric { theta: f64 },
    Uniform,
    PowerLaw { nu: f64 },
    Custom {
        #[serde(default)]
        atoms: Vec<(f64, f64)>,
        #[serde(default)]
        density: Option<KernelDensity>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingSpec {
    Geometric,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    #[serde(default = "default_spacing")]
    pub spacing: SpacingSpec,
    /// Dilation the geometric ratio is snapped to; defaults to the atom of a
    /// single-atom kernel.
    #[serde(default)]
    pub snap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenSpec {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for EigenSpec {
    fn default() -> Self {
        EigenSpec { tol: default_tol(), max_iter: default_max_iter() }
    }
}

/// A fixed step, or `"lattice"` for dt = ln r on a geometric grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSpec {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    Splitting,
    DuhamelPicard,
    DysonPhillips,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSpec {
    #[serde(default = "default_dt")]
    pub dt: StepSpec,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_method")]
    pub method: MethodSpec,
    #[serde(default = "default_dyson_order")]
    pub dyson_order: usize,
    #[serde(default = "default_true")]
    pub rescale: bool,
    #[serde(default = "default_true")]
    pub step_consistent: bool,
    #[serde(default)]
    pub probe: Option<[f64; 2]>,
    #[serde(default = "default_tail_limit")]
    pub tail_limit: f64,
    #[serde(default = "default_snapshots")]
    pub max_snapshots: usize,
}

impl Default for EvolutionSpec {
    fn default() -> Self {
        EvolutionSpec {
            dt: default_dt(),
            t_end: default_t_end(),
            method: default_method(),
            dyson_order: default_dyson_order(),
            rescale: true,
            step_consistent: true,
            probe: None,
            tail_limit: default_tail_limit(),
            max_snapshots: default_snapshots(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesSpec {
    Aeg,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub fit_window: Option<[f64; 2]>,
    #[serde(default = "default_floor")]
    pub fit_floor: f64,
    /// Series fed to the oscillation test; the probe band when one is set.
    #[serde(default)]
    pub oscillation: Option<SeriesSpec>,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec { alphas: default_alphas(), fit_window: None, fit_floor: default_floor(), oscillation: None }
    }
}

/// One additive term of the initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialTerm {
    Indicator {
        a: f64,
        b: f64,
        #[serde(default = "default_one")]
        weight: f64,
    },
    /// weight·exp(−(x − center)²/(2·width²))
    Gaussian {
        center: f64,
        width: f64,
        #[serde(default = "default_one")]
        weight: f64,
    },
    /// 1_{(0,η)}/(ηφ), normalized to ⟨f,φ⟩ = weight
    Osgood {
        eta: f64,
        #[serde(default = "default_one")]
        weight: f64,
    },
    /// piecewise-linear through (x_k, v_k), zero outside
    Tabulated { xs: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_n0")]
    pub n0: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_one_u64")]
    pub seed: u64,
    #[serde(default = "default_oracle_times")]
    pub times: Vec<f64>,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            enabled: true,
            n0: default_n0(),
            replicas: default_replicas(),
            seed: 1,
            times: default_oracle_times(),
        }
    }
}

fn default_initial() -> Vec<InitialTerm> {
    vec![InitialTerm::Indicator { a: 1.0, b: 2.0, weight: 1.0 }]
}
fn default_spacing() -> SpacingSpec {
    SpacingSpec::Geometric
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    20_000
}
fn default_dt() -> StepSpec {
    StepSpec::Fixed(1e-3)
}
fn default_t_end() -> f64 {
    20.0
}
fn default_method() -> MethodSpec {
    MethodSpec::Splitting
}
fn default_dyson_order() -> usize {
    6
}
fn default_true() -> bool {
    true
}
fn default_tail_limit() -> f64 {
    1e-6
}
fn default_snapshots() -> usize {
    512
}
fn default_alphas() -> Vec<f64> {
    vec![2.0]
}
fn default_floor() -> f64 {
    1e-8
}
fn default_one() -> f64 {
    1.0
}
fn default_one_u64() -> u64 {
    1
}
fn default_n0() -> usize {
    10_000
}
fn default_replicas() -> usize {
    32
}
fn default_oracle_times() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0]
}

/// A failed command: exit code plus a message for stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// Exit code of a library error.
pub fn exit_code(e: &GfError) -> i32 {
    match e {
        GfError::InvalidCoefficient { .. } | GfError::Config(_) => EXIT_VALIDATION,
        GfError::NoConvergence { .. } | GfError::BlowUp { .. } | GfError::TailOverflow { .. } => EXIT_NUMERICAL,
        _ => EXIT_OTHER,
    }
}

impl From<GfError> for Failure {
    fn from(e: GfError) -> Self {
        Failure::new(exit_code(&e), e.to_string())
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_OTHER, format!("{}: {e}", path.display()))
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::new(EXIT_VALIDATION, format!("scenario: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        Self::from_toml(&text).map_err(|f| Failure::new(f.code, format!("{}: {}", path.display(), f.message)))
    }

    pub fn coefficients(&self) -> Result<CoefficientSet, Failure> {
        let spec = &self.coefficients;
        let mut tau = GrowthRate::new(spec.tau.clone())?;
        if let Some([nu0, tau0, tau1]) = spec.tau_bounds {
            tau = tau.with_bounds(nu0, tau0, tau1);
        }
        let mut b = FragmentationRate::new(spec.b.clone())?;
        if let Some([g0, g1, b0, b1, x0]) = spec.b_bounds {
            b = b.with_bounds(g0, g1, b0, b1, x0);
        }
        let kernel = match &spec.kernel {
            KernelSpec::Mitosis => FragmentationKernel::mitosis(),
            KernelSpec::Asymmetric { theta } => FragmentationKernel::asymmetric(*theta),
            KernelSpec::Uniform => FragmentationKernel::uniform(),
            KernelSpec::PowerLaw { nu } => FragmentationKernel::power_law(*nu),
            KernelSpec::Custom { atoms, density } => FragmentationKernel::new(atoms.clone(), density.clone())?,
        };
        Ok(CoefficientSet::new(tau, b, kernel)?)
    }

    pub fn build_grid(&self, coeffs: &CoefficientSet) -> Result<Arc<Grid>, Failure> {
        let g = &self.grid;
        let grid = match g.spacing {
            SpacingSpec::Uniform => Grid::uniform(g.x_min, g.x_max, g.n)?,
            SpacingSpec::Geometric => {
                let snap = g.snap.or(match coeffs.kernel.atoms.as_slice() {
                    [(z, _)] if coeffs.kernel.density.is_none() => Some(*z),
                    _ => None,
                });
                match snap {
                    Some(z) => Grid::geometric_snapped(g.x_min, g.x_max, g.n, z)?,
                    None => Grid::geometric(g.x_min, g.x_max, g.n)?,
                }
            }
        };
        Ok(Arc::new(grid))
    }

    /// Sum of the initial terms on `triple`'s grid.
    pub fn initial_field(&self, triple: &PerronTriple) -> Result<DiscreteField, Failure> {
        let grid = triple.grid().clone();
        let mut values = vec![0.0; grid.len()];
        for term in &self.initial {
            let f = match term {
                InitialTerm::Indicator { a, b, weight } => DiscreteField::indicator(grid.clone(), *a, *b).scaled(*weight),
                InitialTerm::Gaussian { center, width, weight } => {
                    if !(*width > 0.0) {
                        return Err(Failure::new(EXIT_VALIDATION, format!("gaussian width must be positive, got {width}")));
                    }
                    DiscreteField::from_fn(grid.clone(), |x| weight * (-(x - center).powi(2) / (2.0 * width * width)).exp())
                }
                InitialTerm::Osgood { eta, weight } => osgood_initial(triple, *eta)?.scaled(*weight),
                InitialTerm::Tabulated { xs, values } => tabulated_initial(&grid, xs, values)?,
            };
            values.iter_mut().zip(f.values()).for_each(|(v, a)| *v += a);
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0)) {
            return Err(Failure::new(EXIT_VALIDATION, format!("initial condition is negative in cell {i}: {}", values[i])));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(Failure::new(EXIT_VALIDATION, "initial condition vanishes on the grid"));
        }
        Ok(DiscreteField::new(grid, values)?)
    }

    pub fn evolution_config(&self, grid: &Grid) -> Result<EvolutionConfig, Failure> {
        let e = &self.evolution;
        let (dt, t_end) = match &e.dt {
            StepSpec::Fixed(dt) => (*dt, e.t_end),
            StepSpec::Named(s) if s == "lattice" => {
                let r = grid
                    .ratio()
                    .ok_or_else(|| Failure::new(EXIT_VALIDATION, "dt = \"lattice\" needs a geometric grid"))?;
                let dt = r.ln();
                (dt, (e.t_end / dt).round().max(1.0) * dt)
            }
            StepSpec::Named(s) => return Err(Failure::new(EXIT_VALIDATION, format!("unknown dt \"{s}\" (a number or \"lattice\")"))),
        };
        let method = match e.method {
            MethodSpec::Splitting => Method::Splitting,
            MethodSpec::DuhamelPicard => Method::DuhamelPicard,
            MethodSpec::DysonPhillips => Method::DysonPhillips(e.dyson_order),
        };
        Ok(EvolutionConfig {
            dt,
            t_end,
            method,
            rescale_by_lambda: e.rescale,
            alphas: self.diagnostics.alphas.clone(),
            aeg_alpha: self.diagnostics.alphas.first().copied(),
            probe: e.probe.map(|[a, b]| (a, b)),
            step_consistent: e.step_consistent,
            tail_limit: e.tail_limit,
            max_snapshots: e.max_snapshots,
        })
    }

    pub fn oracle_config(&self) -> Result<OracleConfig, Failure> {
        let seed = match std::env::var(SEED_ENV) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| Failure::new(EXIT_VALIDATION, format!("{SEED_ENV} must be an unsigned integer, got \"{s}\"")))?,
            Err(_) => self.oracle.seed,
        };
        Ok(OracleConfig {
            n0: self.oracle.n0,
            times: self.oracle.times.clone(),
            replicas: self.oracle.replicas,
            seed,
            keep_particles: false,
        })
    }
}

fn tabulated_initial(grid: &Arc<Grid>, xs: &[f64], values: &[f64]) -> Result<DiscreteField, Failure> {
    if xs.len() < 2 || xs.len() != values.len() || xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Failure::new(EXIT_VALIDATION, "tabulated initial condition needs ≥ 2 increasing nodes and matching values"));
    }
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    Ok(DiscreteField::from_fn(grid.clone(), |x| {
        if x < lo || x > hi {
            return 0.0;
        }
        let k = xs.partition_point(|&p| p <= x).clamp(1, xs.len() - 1);
        let s = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
        values[k - 1] + s * (values[k] - values[k - 1])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub oracle: bool,
    pub quiet: bool,
    pub plots: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { oracle: true, quiet: false, plots: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub mode: Mode,
    pub n: usize,
    pub lambda: f64,
    pub direct_residual: f64,
    pub dual_residual: f64,
    #[serde(rename = "sandwich_C")]
    pub sandwich_c: Option<f64>,
    pub threshold_alpha: f64,
    pub lambda_step: f64,
    pub conservation_drift: f64,
    pub tail_loss: f64,
    pub min_value: f64,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub goodness: Option<f64>,
    pub periodic: bool,
    pub period: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub alpha: f64,
    /// None when fewer than three samples clear the floor.
    pub fit: Option<RateFit>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    pub series: SeriesSpec,
    #[serde(flatten)]
    pub result: Oscillation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub t: f64,
    pub number_pde: f64,
    pub mass_pde: f64,
    pub bracket_pde: f64,
    pub number_z: f64,
    pub mass_z: f64,
    pub bracket_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub replicas: usize,
    pub n0: usize,
    pub max_abs_z: Option<f64>,
    pub rows: Vec<OracleRow>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub fits: Vec<AlphaFit>,
    pub oscillation: OscillationReport,
    pub conservation_drift: f64,
    pub tail_loss: f64,
    pub min_value: f64,
    pub oracle: Option<OracleReport>,
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub validation: ValidationReport,
    pub triple: PerronTriple,
    pub trace: SimulationTrace,
    pub aeg: Vec<(f64, Vec<f64>)>,
    pub summary: Summary,
    pub diagnostics: Diagnostics,
    pub oracle: Option<(MomentSeries, Vec<OracleRow>)>,
}

fn note(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

/// Hypothesis failures other than the Osgood flag.
fn validation_failures(report: &ValidationReport) -> Vec<String> {
    report
        .failed()
        .filter(|c| c.name != "inverse_tau_integrable_at_zero")
        .map(|c| match c.witness {
            Some(w) => format!("({}) {} fails at x = {w}: {}", c.hypothesis, c.name, c.detail),
            None => format!("({}) {}: {}", c.hypothesis, c.name, c.detail),
        })
        .collect()
}

/// validate → eigen → evolve → diagnose → oracle, in memory.
pub fn execute(scn: &Scenario, opts: RunOptions) -> Result<RunOutput, (Failure, Option<ValidationReport>)> {
    let coeffs = scn.coefficients().map_err(|f| (f, None))?;
    let grid = scn.build_grid(&coeffs).map_err(|f| (f, None))?;
    let validation = validate_hypotheses(&coeffs, grid.centers()).map_err(|e| (e.into(), None))?;
    let fail = |f: Failure| (f, Some(validation.clone()));
    let mut problems = validation_failures(&validation);
    let a_crit = critical_alpha(&coeffs.kernel);
    for &a in &scn.diagnostics.alphas {
        if !(a > a_crit) || !a.is_finite() {
            problems.push(format!("(H℘) diagnostic exponent α = {a} must exceed α̲ = {a_crit}"));
        }
    }
    if !problems.is_empty() {
        return Err(fail(Failure::new(EXIT_VALIDATION, format!("hypothesis validation failed:\n  {}", problems.join("\n  ")))));
    }
    note(opts.quiet, format!("{}: {} cells on [{}, {}], mode {:?}", scn.name, grid.len(), grid.x_min(), grid.x_max(), coeffs.mode()));

    let triple = solve_perron(&coeffs, &grid, scn.eigen.tol, scn.eigen.max_iter).map_err(|e| fail(e.into()))?;
    note(opts.quiet, format!("λ = {} (residuals {:e}, {:e})", triple.lambda, triple.direct_residual, triple.dual_residual));

    let f_in = scn.initial_field(&triple).map_err(fail)?;
    let cfg = scn.evolution_config(&grid).map_err(fail)?;
    let trace = evolve(&coeffs, &grid, &triple, &f_in, &cfg).map_err(|e| fail(e.into()))?;
    note(opts.quiet, format!("evolved to t = {} in {} steps", cfg.t_end, trace.times.len() - 1));

    let mut columns = Vec::new();
    let mut fits = Vec::new();
    for &alpha in &scn.diagnostics.alphas {
        let d = aeg_distance(&trace, &trace.triple, &f_in, alpha).map_err(|e| fail(e.into()))?;
        let (t, v): (Vec<f64>, Vec<f64>) = d.into_iter().unzip();
        let window = scn.diagnostics.fit_window.map(|[a, b]| (a, b));
        let fo = FitOptions { window, floor: scn.diagnostics.fit_floor };
        let fit = match fit_rate_with(&t, &v, fo) {
            Ok(fit) => AlphaFit { alpha, fit: Some(fit), note: None },
            Err(e) => AlphaFit { alpha, fit: None, note: Some(e.to_string()) },
        };
        fits.push(fit);
        columns.push((t, v));
    }
    let aeg: Vec<(f64, Vec<f64>)> = match columns.first() {
        Some((t, _)) => t.iter().enumerate().map(|(k, &s)| (s, columns.iter().map(|c| c.1[k]).collect())).collect(),
        None => vec![],
    };

    let series = scn.diagnostics.oscillation.unwrap_or(if cfg.probe.is_some() { SeriesSpec::Probe } else { SeriesSpec::Aeg });
    let values = match series {
        SeriesSpec::Probe => &trace.probe,
        SeriesSpec::Aeg => &trace.aeg,
    };
    if values.is_empty() {
        return Err(fail(Failure::new(EXIT_OTHER, format!("oscillation series {series:?} was not recorded"))));
    }
    let oscillation = OscillationReport { series, result: detect_oscillation(&trace.times, values) };

    let tail_loss = trace.tail_loss.last().copied().unwrap_or(0.0);
    let first = fits.first().and_then(|f| f.fit);
    let summary = Summary {
        name: scn.name.clone(),
        mode: coeffs.mode(),
        n: grid.len(),
        lambda: triple.lambda,
        direct_residual: triple.direct_residual,
        dual_residual: triple.dual_residual,
        sandwich_c: triple.sandwich_constant,
        threshold_alpha: threshold_alpha(&coeffs),
        lambda_step: trace.triple.lambda,
        conservation_drift: trace.conservation_drift(),
        tail_loss,
        min_value: trace.min_value,
        alpha: fits.first().map(|f| f.alpha),
        sigma: first.map(|f| f.sigma),
        goodness: first.map(|f| f.goodness),
        periodic: oscillation.result.periodic,
        period: oscillation.result.period.is_finite().then_some(oscillation.result.period),
    };

    let mut oracle = None;
    let mut oracle_report = None;
    if opts.oracle && scn.oracle.enabled {
        let oc = scn.oracle_config().map_err(fail)?;
        match run_oracle(&coeffs, &grid, &triple, &f_in, &cfg, &oc) {
            Ok((series, rows)) => {
                let max_abs_z = rows
                    .iter()
                    .flat_map(|r| [r.number_z, r.mass_z, r.bracket_z])
                    .filter(|z| z.is_finite())
                    .map(f64::abs)
                    .fold(None, |m: Option<f64>, z| Some(m.map_or(z, |m| m.max(z))));
                note(opts.quiet, format!("oracle: {} replicas, max |z| = {:?}", oc.replicas, max_abs_z));
                oracle_report = Some(OracleReport {
                    seed: oc.seed,
                    replicas: oc.replicas,
                    n0: oc.n0,
                    max_abs_z,
                    rows: rows.clone(),
                    skipped: None,
                });
                oracle = Some((series, rows));
            }
            Err(GfError::UnsupportedKernel(msg)) => {
                note(opts.quiet, format!("oracle skipped: {msg}"));
                oracle_report = Some(OracleReport {
                    seed: oc.seed,
                    replicas: oc.replicas,
                    n0: oc.n0,
                    max_abs_z: None,
                    rows: vec![],
                    skipped: Some(msg),
                });
            }
            Err(e) => return Err(fail(e.into())),
        }
    }

    let diagnostics = Diagnostics {
        fits,
        oscillation,
        conservation_drift: summary.conservation_drift,
        tail_loss,
        min_value: trace.min_value,
        oracle: oracle_report,
    };
    Ok(RunOutput { validation, triple, trace, aeg, summary, diagnostics, oracle })
}

/// Particle moments against an unrescaled PDE run on the same grid.
fn run_oracle(
    coeffs: &CoefficientSet,
    grid: &Arc<Grid>,
    triple: &PerronTriple,
    f_in: &DiscreteField,
    cfg: &EvolutionConfig,
    oc: &OracleConfig,
) -> crate::Result<(MomentSeries, Vec<OracleRow>)> {
    let series = simulate(coeffs, f_in, oc, Some((triple.phi(), triple.lambda)))?.series;
    let pcfg = EvolutionConfig {
        rescale_by_lambda: false,
        step_consistent: false,
        alphas: vec![],
        aeg_alpha: None,
        probe: None,
        tail_limit: f64::INFINITY,
        max_snapshots: 2,
        ..cfg.clone()
    };
    // one run per time so that each observation time is hit exactly
    let pde = oc
        .times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                let b = crate::discretization::bracket(f_in, triple.phi())?;
                return Ok((f_in.integral(), f_in.first_moment(), b));
            }
            let tr = evolve(coeffs, grid, triple, f_in, &EvolutionConfig { t_end: t, ..pcfg.clone() })?;
            let k = tr.times.len() - 1;
            Ok((tr.number[k], tr.mass[k], tr.bracket[k] * (-triple.lambda * t).exp()))
        })
        .collect::<crate::Result<Vec<_>>>()?;
    // a deterministic moment (e.g. the number at t = 0) has a round-off standard error
    let z = |a: f64, m: f64, se: f64| if se > 1e-9 * m.abs() { (a - m) / se } else { f64::NAN };
    let rows = oc
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (n, m, b) = pde[k];
            OracleRow {
                t,
                number_pde: n,
                mass_pde: m,
                bracket_pde: b,
                number_z: z(n, series.number_mean[k], series.number_se[k]),
                mass_z: z(m, series.mass_mean[k], series.mass_se[k]),
                bracket_z: z(b, series.bracket_mean[k], series.bracket_se[k]),
            }
        })
        .collect();
    Ok((series, rows))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_failure(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_failure(path, e))
}

fn with_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> crate::Result<()>) -> Result<(), Failure> {
    let mut w = create(path)?;
    body(&mut w).map_err(|e| io_failure(path, e))?;
    w.flush().map_err(|e| io_failure(path, e))
}

/// Writes the artifact tree of a finished run into `out`.
pub fn write_artifacts(out: &Path, scn: &Scenario, run: &RunOutput, plots: bool) -> Result<(), Failure> {
    write_json(&out.join("validation.json"), &run.validation)?;
    with_file(&out.join("perron.csv"), |w| run.triple.write_csv(w))?;
    write_json(&out.join("summary.json"), &run.summary)?;
    with_file(&out.join("trace.csv"), |w| run.trace.write_csv(w))?;
    with_file(&out.join("aeg.csv"), |w| {
        let mut header = vec!["t".to_string()];
        header.extend(scn.diagnostics.alphas.iter().map(|a| format!("d_{a}")));
        writeln!(w, "{}", header.join(","))?;
        for (t, d) in &run.aeg {
            let row: Vec<f64> = std::iter::once(*t).chain(d.iter().cloned()).collect();
            writeln!(w, "{}", csv_row(&row))?;
        }
        Ok(())
    })?;
    write_json(&out.join("diagnostics.json"), &run.diagnostics)?;
    if let Some((series, rows)) = &run.oracle {
        with_file(&out.join("oracle.csv"), |w| {
            writeln!(w, "t,number_mean,number_se,number_pde,mass_mean,mass_se,mass_pde,bracket_mean,bracket_se,bracket_pde")?;
            for (k, r) in rows.iter().enumerate() {
                let row = [
                    r.t,
                    series.number_mean[k],
                    series.number_se[k],
                    r.number_pde,
                    series.mass_mean[k],
                    series.mass_se[k],
                    r.mass_pde,
                    series.bracket_mean[k],
                    series.bracket_se[k],
                    r.bracket_pde,
                ];
                writeln!(w, "{}", csv_row(&row))?;
            }
            Ok(())
        })?;
    }
    if plots {
        let curves: Vec<(String, Vec<(f64, f64)>)> = scn
            .diagnostics
            .alphas
            .iter()
            .enumerate()
            .map(|(k, a)| (format!("α = {a}"), run.aeg.iter().map(|(t, d)| (*t, d[k])).collect()))
            .collect();
        line_plot(&out.join("aeg.svg"), "distance to the asynchronous profile", "t", "d(t)", &curves, false)?;
        let x = run.triple.grid().centers();
        let profile = |f: &DiscreteField| x.iter().cloned().zip(f.values().iter().cloned()).collect::<Vec<_>>();
        line_plot(&out.join("profile_g.svg"), "Perron profile G", "x", "G(x)", &[("G".into(), profile(run.triple.g()))], true)?;
        line_plot(&out.join("profile_phi.svg"), "dual eigenfunction φ", "x", "φ(x)", &[("φ".into(), profile(run.triple.phi()))], true)?;
    }
    Ok(())
}

/// Static SVG line plot with a log y axis (and log x when `log_x`).
/// Non-positive values and values 16 decades below the maximum are dropped.
fn line_plot(path: &Path, title: &str, xl: &str, yl: &str, curves: &[(String, Vec<(f64, f64)>)], log_x: bool) -> Result<(), Failure> {
    let finite = |&(x, y): &(f64, f64)| y > 0.0 && y.is_finite() && x.is_finite() && (!log_x || x > 0.0);
    let top = curves.iter().flat_map(|c| c.1.iter().filter(|p| finite(p)).map(|p| p.1)).fold(0.0, f64::max);
    // at most 16 decades on the log axis
    let keep = |p: &(f64, f64)| finite(p) && p.1 >= top * 1e-16;
    let pts: Vec<(f64, f64)> = curves.iter().flat_map(|c| c.1.iter().cloned().filter(keep)).collect();
    let err = |e: &dyn std::fmt::Display| io_failure(path, e);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    if pts.is_empty() {
        return root.present().map_err(|e| err(&e));
    }
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let (y0, y1) = if y1 > y0 { (y0, y1) } else { (y0 / 2.0, y1 * 2.0) };
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    let palette = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];
    let mut builder = ChartBuilder::on(&root);
    builder.caption(title, ("sans-serif", 20)).margin(12).x_label_area_size(40).y_label_area_size(70);
    macro_rules! draw {
        ($chart:expr) => {{
            let mut chart = $chart.map_err(|e| err(&e))?;
            chart.configure_mesh().x_desc(xl).y_desc(yl).draw().map_err(|e| err(&e))?;
            for (k, (name, c)) in curves.iter().enumerate() {
                let color = palette[k % palette.len()];
                chart
                    .draw_series(LineSeries::new(c.iter().cloned().filter(|p| keep(p)), color.stroke_width(2)))
                    .map_err(|e| err(&e))?
                    .label(name.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            }
            chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw().map_err(|e| err(&e))?;
        }};
    }
    if log_x {
        draw!(builder.build_cartesian_2d((x0..x1).log_scale(), (y0..y1).log_scale()));
    } else {
        draw!(builder.build_cartesian_2d(x0..x1, (y0..y1).log_scale()));
    }
    root.present().map_err(|e| err(&e))
}

/// `gfkit run`: returns the summary on success.
pub fn run(config: &Path, out: &Path, opts: RunOptions) -> Result<Summary, Failure> {
    let scn = Scenario::load(config)?;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    match execute(&scn, opts) {
        Ok(run) => {
            write_artifacts(out, &scn, &run, opts.plots)?;
            note(opts.quiet, format!("wrote artifacts to {}", out.display()));
            Ok(run.summary)
        }
        Err((failure, validation)) => {
            if let Some(v) = validation {
                write_json(&out.join("validation.json"), &v)?;
            }
            Err(failure)
        }
    }
}

/// One `key=v1,v2,...` sweep axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepParam {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for SweepParam {
    type Err = Failure;

    fn from_str(s: &str) -> Result<Self, Failure> {
        let (key, vals) = s
            .split_once('=')
            .ok_or_else(|| Failure::new(EXIT_OTHER, format!("--param expects key=v1,v2,..., got \"{s}\"")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Failure::new(EXIT_OTHER, format!("--param has an empty key: \"{s}\"")));
        }
        let values = vals.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
        Ok(SweepParam { key: key.to_string(), values })
    }
}

/// Short names accepted by `--param`.
fn resolve_key(key: &str) -> &str {
    match key {
        "alpha" => "diagnostics.alphas",
        "n" | "N" => "grid.n",
        "dt" => "evolution.dt",
        "t_end" => "evolution.t_end",
        "seed" => "oracle.seed",
        other => other,
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets a dotted key; a scalar assigned over an array becomes a one-element array.
fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), Failure> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Failure::new(EXIT_VALIDATION, format!("sweep key {key}: {p} is not a table")))?;
    }
    let last = parts[parts.len() - 1].to_string();
    let value = match (cur.get(&last), value) {
        (Some(toml::Value::Array(_)), v @ (toml::Value::Float(_) | toml::Value::Integer(_))) => toml::Value::Array(vec![v]),
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    cur.insert(last, value);
    Ok(())
}

/// Scenario for one sweep point: `{key}` placeholders are substituted in the
/// template text, other keys are set as dotted paths.
pub fn sweep_point(template: &str, point: &[(String, String)]) -> Result<Scenario, Failure> {
    let mut text = template.to_string();
    let mut direct = Vec::new();
    for (key, raw) in point {
        let ph = format!("{{{key}}}");
        if text.contains(&ph) {
            text = text.replace(&ph, raw);
        } else {
            direct.push((key, raw));
        }
    }
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| Failure::new(EXIT_VALIDATION, format!("scenario: {e}")))?;
    for (key, raw) in direct {
        set_path(&mut table, resolve_key(key), parse_value(raw))?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Failure::new(EXIT_VALIDATION, format!("scenario: {e}")))
}

/// Cartesian product in flag order, first axis slowest.
pub fn sweep_points(params: &[SweepParam]) -> Vec<Vec<(String, String)>> {
    let mut points: Vec<Vec<(String, String)>> = vec![vec![]];
    for p in params {
        points = points
            .iter()
            .flat_map(|pt| {
                p.values.iter().map(move |v| {
                    let mut q = pt.clone();
                    q.push((p.key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    if params.is_empty() {
        vec![]
    } else {
        points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: Vec<(String, String)>,
    pub outcome: Result<Summary, Failure>,
}

/// `gfkit sweep`: runs every point (oracle off), writes `sweep.csv` and one
/// artifact directory per point.
pub fn sweep(config: &Path, params: &[SweepParam], out: &Path, jobs: usize, quiet: bool) -> Result<Vec<SweepRow>, Failure> {
    let template = fs::read_to_string(config).map_err(|e| io_failure(config, e))?;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let points = sweep_points(params);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure::new(EXIT_OTHER, e.to_string()))?;
    let opts = RunOptions { oracle: false, quiet: true, plots: false };
    let rows: Vec<SweepRow> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(k, point)| {
                let outcome = sweep_point(&template, point).and_then(|scn| {
                    let dir = out.join(format!("point_{k:03}"));
                    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
                    let run = execute(&scn, opts).map_err(|(f, _)| f)?;
                    write_artifacts(&dir, &scn, &run, false)?;
                    Ok(run.summary)
                });
                note(quiet, format!("point {k}: {}", if outcome.is_ok() { "ok" } else { "failed" }));
                SweepRow { point: point.clone(), outcome }
            })
            .collect()
    });
    let path = out.join("sweep.csv");
    let mut w = create(&path)?;
    let mut header = vec!["point".to_string()];
    header.extend(params.iter().map(|p| p.key.clone()));
    header.extend(["status", "lambda", "sigma", "goodness", "conservation_drift", "message"].map(String::from));
    let line = |w: &mut BufWriter<fs::File>, cells: Vec<String>| writeln!(w, "{}", cells.join(",")).map_err(|e| io_failure(&path, e));
    line(&mut w, header)?;
    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    for (k, row) in rows.iter().enumerate() {
        let mut cells = vec![k.to_string()];
        cells.extend(row.point.iter().map(|(_, v)| csv_cell(v)));
        match &row.outcome {
            Ok(s) => cells.extend([
                "ok".into(),
                fmt_float(s.lambda),
                opt(s.sigma),
                opt(s.goodness),
                fmt_float(s.conservation_drift),
                String::new(),
            ]),
            Err(f) => cells.extend([
                format!("exit_{}", f.code),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                csv_cell(&f.message),
            ]),
        }
        line(&mut w, cells)?;
    }
    w.flush().map_err(|e| io_failure(&path, e))?;
    Ok(rows)
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "gfkit", version, about = "Growth-fragmentation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the particle oracle.
        #[arg(long)]
        no_oracle: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Run a scenario template over a grid of parameter values.
    Sweep {
        config: PathBuf,
        /// key=v1,v2,... (repeatable; dotted keys or {key} placeholders)
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        quiet: bool,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_OTHER } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run { config, out, no_oracle, quiet } => {
            run(&config, &out, RunOptions { oracle: !no_oracle, quiet, plots: true }).map(|_| ())
        }
        Command::Sweep { config, params, out, jobs, quiet } => params
            .iter()
            .map(|p| p.parse::<SweepParam>())
            .collect::<Result<Vec<_>, _>>()
            .and_then(|params| sweep(&config, &params, &out, jobs, quiet))
            .map(|_| ()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("gfkit: {}", f.message);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "t"
[coefficients]
tau = { family = "constant", c = 1.0 }
b = { family = "power", b = 1.0, gamma = 1.0 }
kernel = { family = "mitosis" }
[grid]
x_min = 1e-3
x_max = 30.0
n = 256
[evolution]
t_end = 1.0
dt = 1e-2
[diagnostics]
alphas = [2.0]
"#;

    #[test]
    fn parses_defaults() {
        let s = Scenario::from_toml(BASE).unwrap();
        assert_eq!(s.initial, default_initial());
        assert_eq!(s.oracle.replicas, 32);
        assert_eq!(s.evolution.dt, StepSpec::Fixed(1e-2));
        let c = s.coefficients().unwrap();
        let g = s.build_grid(&c).unwrap();
        assert!(g.cells_per_dilation(0.5).is_some());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(Scenario::from_toml(&BASE.replace("n = 256", "n = 256\ncells = 3")).is_err());
    }

    #[test]
    fn bad_kernel_is_validation_failure() {
        let text = BASE.replace(r#"kernel = { family = "mitosis" }"#, r#"kernel = { family = "custom", atoms = [[0.5, 1.5]] }"#);
        let f = Scenario::from_toml(&text).unwrap().coefficients().unwrap_err();
        assert_eq!(f.code, EXIT_VALIDATION);
        assert!(f.message.contains("H℘"), "{}", f.message);
    }

    #[test]
    fn lattice_step() {
        let s = Scenario::from_toml(&BASE.replace("dt = 1e-2", "dt = \"lattice\"")).unwrap();
        let c = s.coefficients().unwrap();
        let g = s.build_grid(&c).unwrap();
        let cfg = s.evolution_config(&g).unwrap();
        assert!((cfg.dt - g.ratio().unwrap().ln()).abs() < 1e-15);
        let steps = cfg.t_end / cfg.dt;
        assert!((steps - steps.round()).abs() < 1e-9);
    }

    #[test]
    fn sweep_points_and_paths() {
        let p: SweepParam = "alpha=1.5,2,3".parse().unwrap();
        let q: SweepParam = "n=128,256".parse().unwrap();
        let pts = sweep_points(&[p.clone(), q]);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1], vec![("alpha".into(), "1.5".into()), ("n".into(), "256".into())]);
        let s = sweep_point(BASE, &pts[5]).unwrap();
        assert_eq!(s.diagnostics.alphas, vec![3.0]);
        assert_eq!(s.grid.n, 256);
        let empty: SweepParam = "alpha=".parse().unwrap();
        assert!(sweep_points(&[empty]).is_empty());
        let templ = BASE.replace("t_end = 1.0", "t_end = {horizon}");
        let s = sweep_point(&templ, &[("horizon".into(), "2.5".into())]).unwrap();
        assert_eq!(s.evolution.t_end, 2.5);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&GfError::NoConvergence { iterations: 1, residual: 1.0 }), EXIT_NUMERICAL);
        assert_eq!(exit_code(&GfError::BlowUp { time: 1.0, norm: 1e13 }), EXIT_NUMERICAL);
        assert_eq!(exit_code(&GfError::invalid("H℘", "x")), EXIT_VALIDATION);
        assert_eq!(exit_code(&GfError::Config("x".into())), EXIT_VALIDATION);
    }

    #[test]
    fn tabulated_initial_interpolates() {
        let grid = Arc::new(Grid::uniform(1.0, 3.0, 16).unwrap());
        let f = tabulated_initial(&grid, &[1.0, 3.0], &[0.0, 2.0]).unwrap();
        for (v, c) in f.values().iter().zip(grid.centers()) {
            assert!((v - (c - 1.0)).abs() < 1e-12);
        }
        assert!(tabulated_initial(&grid, &[2.0, 1.0], &[0.0, 1.0]).is_err());
    }
}
