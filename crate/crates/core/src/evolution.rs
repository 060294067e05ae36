//! Time evolution.
//!
//! Transport and decay follow the characteristics exactly: each source cell
//! is cut at the preimages of the target edges, every piece is carried along
//! the flow with its damping, and the piece is deposited at its centroid by a
//! fixed-pivot split between the two nearest cell centers. The remap keeps
//! particle number and first moment of every piece, stays positive, and has
//! no CFL restriction. The gain term enters by Strang splitting with a
//! second-order Taylor half step.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::characteristics::Flow;
use crate::coefficients::CoefficientSet;
use crate::discretization::{assemble_gain, bracket, same_grid, weight, Csr, DiscreteField, Grid, OperatorMatrix};
use crate::eigensolver::PerronTriple;
use crate::error::{GfError, Result};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Half gain, exact transport, half gain.
    Splitting,
    /// Trapezoidal Duhamel step solved by Picard iteration.
    DuhamelPicard,
    /// Dyson-Phillips terms up to the given order within each step.
    DysonPhillips(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_end: f64,
    pub method: Method,
    pub rescale_by_lambda: bool,
    /// Exponents of the recorded norms ‖f‖_{L¹_α}.
    pub alphas: Vec<f64>,
    /// When set, d(t) = ‖f(t) − ⟨f_in,φ⟩G‖_{L¹_α} is recorded at every step.
    pub aeg_alpha: Option<f64>,
    /// When set, ∫_a^b f is recorded at every step.
    pub probe: Option<(f64, f64)>,
    /// Replace (λ, G, φ) by the eigentriple of the discrete step map first.
    pub step_consistent: bool,
    /// Cumulative outflow allowed, relative to ⟨f_in,φ⟩.
    pub tail_limit: f64,
    pub max_snapshots: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            dt: 1e-3,
            t_end: 20.0,
            method: Method::Splitting,
            rescale_by_lambda: true,
            alphas: vec![1.0, 2.0],
            aeg_alpha: None,
            probe: None,
            step_consistent: true,
            tail_limit: 1e-6,
            max_snapshots: 512,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self, coeffs: &CoefficientSet, grid: &Grid) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(GfError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(GfError::Config(format!("t_end must be finite and ≥ 0, got {}", self.t_end)));
        }
        let b_max = grid.centers().iter().map(|&x| coeffs.b.eval(x)).fold(0.0, f64::max);
        if self.dt * b_max > 0.5 {
            return Err(GfError::Config(format!(
                "dt·max B = {} exceeds 0.5; reduce dt below {}",
                self.dt * b_max,
                0.5 / b_max
            )));
        }
        if self.max_snapshots < 2 {
            return Err(GfError::Config("max_snapshots must be at least 2".into()));
        }
        Ok(())
    }
}

/// Discrete S_t on a grid.
#[derive(Debug, Clone)]
pub struct TransportOperator {
    t: f64,
    lambda: f64,
    matrix: Csr,
    /// Number leaving through x_max per unit value in each source cell.
    outflow: Vec<f64>,
}

impl TransportOperator {
    pub fn new(flow: &Flow, coeffs: &CoefficientSet, grid: &Grid, lambda: f64, t: f64) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(GfError::DomainError(format!("transport needs finite t ≥ 0, got {t}")));
        }
        let n = grid.len();
        if t == 0.0 {
            let ident = (0..n).map(|i| (i, i, 1.0)).collect();
            return Ok(TransportOperator { t, lambda, matrix: Csr::from_triplets(n, ident), outflow: vec![0.0; n] });
        }
        let owned;
        let flow = if flow.has_hazard_for(&coeffs.b) {
            flow
        } else {
            owned = Flow::for_coefficients(coeffs);
            &owned
        };
        let (e, c, w) = (grid.edges(), grid.centers(), grid.widths());
        let pre: Vec<f64> = e.iter().map(|&x| flow.backward(t, x).unwrap_or(f64::NEG_INFINITY)).collect();
        let rule = gauss_legendre(3);
        let mut triplets = Vec::with_capacity(4 * n);
        let mut outflow = vec![0.0; n];

        let mut y = e[0];
        let mut j = 0;
        let mut i = pre.partition_point(|&p| p <= y).saturating_sub(1);
        while j < n {
            let src_hi = e[j + 1];
            let tgt_hi = if i < n { pre[i + 1] } else { f64::INFINITY };
            let hi = src_hi.min(tgt_hi);
            if hi > y {
                let (mid, half) = (0.5 * (y + hi), 0.5 * (hi - y));
                let (mut m, mut mom) = (0.0, 0.0);
                for (xg, wg) in rule.0.iter().zip(&rule.1) {
                    let yy = mid + half * xg;
                    let x = flow.flow(t, yy)?;
                    let d = (-lambda * t - flow.hazard(yy, x)).exp() * wg * half;
                    m += d;
                    mom += d * x;
                }
                if m > 0.0 {
                    if i >= n {
                        outflow[j] += m;
                    } else {
                        let xc = mom / m;
                        if xc <= c[0] {
                            triplets.push((0, j, m / w[0]));
                        } else if xc >= c[n - 1] {
                            triplets.push((n - 1, j, m / w[n - 1]));
                        } else {
                            let mut k = i.min(n - 2);
                            while k > 0 && xc < c[k] {
                                k -= 1;
                            }
                            while k + 2 < n && xc > c[k + 1] {
                                k += 1;
                            }
                            let theta = (xc - c[k]) / (c[k + 1] - c[k]);
                            triplets.push((k, j, m * (1.0 - theta) / w[k]));
                            triplets.push((k + 1, j, m * theta / w[k + 1]));
                        }
                    }
                }
            }
            y = hi;
            if src_hi <= hi {
                j += 1;
            }
            if tgt_hi <= hi {
                i += 1;
            }
        }
        Ok(TransportOperator { t, lambda, matrix: Csr::from_triplets(n, triplets), outflow })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// out = S_t f; returns the number carried past x_max.
    pub fn apply_slice(&self, f: &[f64], out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.matrix.apply_add(f, out);
        f.iter().zip(&self.outflow).map(|(a, b)| a * b).sum()
    }

    /// out = S_tᵀ g (plain transpose).
    pub fn apply_transpose_slice(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.matrix.apply_transpose_add(g, out);
    }
}

/// S_t f(x) = f(X(−t,x))·J(t,x)·e^{−∫₀^t B(X(−s,x))ds − λt} on the grid of `f`.
pub fn transport_step(flow: &Flow, coeffs: &CoefficientSet, lambda: f64, t: f64, f: &DiscreteField) -> Result<DiscreteField> {
    let op = TransportOperator::new(flow, coeffs, f.grid(), lambda, t)?;
    let mut out = vec![0.0; f.len()];
    op.apply_slice(f.values(), &mut out);
    Ok(f.with_values(out))
}

/// out = x + hFx + h²/2·F²x.
fn taylor_gain(gain: &OperatorMatrix, h: f64, x: &[f64], out: &mut [f64], s1: &mut [f64], s2: &mut [f64], transpose: bool) {
    let apply = |a: &[f64], b: &mut [f64]| {
        if transpose {
            gain.apply_transpose_slice(a, b)
        } else {
            gain.apply_slice(a, b)
        }
    };
    apply(x, s1);
    apply(s1, s2);
    for i in 0..x.len() {
        out[i] = x[i] + h * s1[i] + 0.5 * h * h * s2[i];
    }
}

/// One step of the discretized T_dt (times `scale`).
struct StepMap {
    method: Method,
    gain: Arc<OperatorMatrix>,
    transport: TransportOperator,
    dt: f64,
    scale: f64,
    scratch: [Vec<f64>; 5],
}

impl StepMap {
    fn new(method: Method, gain: Arc<OperatorMatrix>, transport: TransportOperator) -> Self {
        let n = gain.dim();
        let dt = transport.time();
        StepMap { method, gain, transport, dt, scale: 1.0, scratch: std::array::from_fn(|_| vec![0.0; n]) }
    }

    /// out = M f; returns the outflow (in number) of the transport part.
    fn apply(&mut self, f: &[f64], out: &mut [f64]) -> f64 {
        let [a, b, s1, s2, s3] = &mut self.scratch;
        let h = 0.5 * self.dt;
        let lost = match self.method {
            Method::Splitting => {
                taylor_gain(&self.gain, h, f, a, s1, s2, false);
                let lost = self.transport.apply_slice(a, b);
                taylor_gain(&self.gain, h, b, out, s1, s2, false);
                lost
            }
            Method::DuhamelPicard => {
                self.gain.apply_slice(f, s1);
                for i in 0..f.len() {
                    a[i] = f[i] + h * s1[i];
                }
                let lost = self.transport.apply_slice(a, b);
                out.copy_from_slice(b);
                for _ in 0..200 {
                    self.gain.apply_slice(out, s1);
                    let mut diff = 0.0;
                    let mut size = 0.0;
                    for i in 0..f.len() {
                        let v = b[i] + h * s1[i];
                        diff += (v - out[i]).abs();
                        size += v.abs();
                        out[i] = v;
                    }
                    if diff <= 1e-15 * size {
                        break;
                    }
                }
                lost
            }
            Method::DysonPhillips(terms) => {
                // U₀ = Sf, U₁ = h(SFf + FSf), U_{k+1} = hFU_k
                let lost = self.transport.apply_slice(f, a);
                out.copy_from_slice(a);
                if terms >= 1 {
                    self.gain.apply_slice(f, s1);
                    self.transport.apply_slice(s1, s2);
                    self.gain.apply_slice(a, s3);
                    for i in 0..f.len() {
                        b[i] = h * (s2[i] + s3[i]);
                        out[i] += b[i];
                    }
                    for _ in 2..=terms {
                        self.gain.apply_slice(b, s1);
                        for i in 0..f.len() {
                            b[i] = h * s1[i];
                            out[i] += b[i];
                        }
                    }
                }
                lost
            }
        };
        if self.scale != 1.0 {
            out.iter_mut().for_each(|o| *o *= self.scale);
        }
        lost * self.scale
    }

    /// out = Mᵀ g.
    fn apply_transpose(&mut self, g: &[f64], out: &mut [f64]) {
        let [a, b, s1, s2, s3] = &mut self.scratch;
        let h = 0.5 * self.dt;
        match self.method {
            Method::Splitting => {
                taylor_gain(&self.gain, h, g, a, s1, s2, true);
                self.transport.apply_transpose_slice(a, b);
                taylor_gain(&self.gain, h, b, out, s1, s2, true);
            }
            Method::DuhamelPicard => {
                // (I + hFᵀ)Sᵀ(I − hFᵀ)⁻¹
                a.copy_from_slice(g);
                for _ in 0..200 {
                    self.gain.apply_transpose_slice(a, s1);
                    let mut diff = 0.0;
                    let mut size = 0.0;
                    for i in 0..g.len() {
                        let v = g[i] + h * s1[i];
                        diff += (v - a[i]).abs();
                        size += v.abs();
                        a[i] = v;
                    }
                    if diff <= 1e-15 * size {
                        break;
                    }
                }
                self.transport.apply_transpose_slice(a, b);
                self.gain.apply_transpose_slice(b, s1);
                for i in 0..g.len() {
                    out[i] = b[i] + h * s1[i];
                }
            }
            Method::DysonPhillips(terms) => {
                self.transport.apply_transpose_slice(g, out);
                if terms >= 1 {
                    // p = Σ_{k<terms} (hFᵀ)^k g
                    a.copy_from_slice(g);
                    b.copy_from_slice(g);
                    for _ in 1..terms {
                        self.gain.apply_transpose_slice(b, s1);
                        for i in 0..g.len() {
                            b[i] = h * s1[i];
                            a[i] += b[i];
                        }
                    }
                    self.transport.apply_transpose_slice(a, s1);
                    self.gain.apply_transpose_slice(s1, s2);
                    self.gain.apply_transpose_slice(a, s1);
                    self.transport.apply_transpose_slice(s1, s3);
                    for i in 0..g.len() {
                        out[i] += h * (s2[i] + s3[i]);
                    }
                }
            }
        }
        if self.scale != 1.0 {
            out.iter_mut().for_each(|o| *o *= self.scale);
        }
    }
}

fn integral(v: &[f64], widths: &[f64]) -> f64 {
    v.iter().zip(widths).map(|(a, w)| a * w).sum()
}

fn step_count(t: f64, dt: f64) -> usize {
    ((t / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Number of steps and the step that lands exactly on t_end.
fn schedule(cfg: &EvolutionConfig) -> (usize, f64) {
    if cfg.t_end == 0.0 {
        (0, cfg.dt)
    } else {
        let n = step_count(cfg.t_end, cfg.dt);
        (n, cfg.t_end / n as f64)
    }
}

/// Dominant pair of the discrete step map, started from `v`; returns ρ and
/// the final relative residual per unit time.
fn step_power_iteration(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    v: &mut [f64],
    widths: &[f64],
    dt: f64,
    weights: Option<&[f64]>,
) -> Result<(f64, f64, usize)> {
    let n = v.len();
    let mut next = vec![0.0; n];
    let norm = |x: &[f64]| match weights {
        Some(ws) => x.iter().zip(ws).map(|(a, w)| a * w).sum::<f64>(),
        None => integral(x, widths),
    };
    let s = norm(v);
    v.iter_mut().for_each(|a| *a /= s);
    let target = 1e-13;
    let max_iter = (60.0 / dt).ceil() as usize + 1000;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for it in 1..=max_iter {
        apply(v, &mut next);
        let rho = norm(&next);
        let mut diff = 0.0;
        let mut size = 0.0;
        for i in 0..n {
            let scaled = next[i] / rho;
            let wi = widths[i];
            diff += (scaled - v[i]).abs() * wi;
            size += scaled.abs() * wi;
            v[i] = scaled;
        }
        let res = diff / size / dt;
        if res < target {
            return Ok((rho, res, it));
        }
        if res < 0.99 * best {
            best = res;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if stalled > 2000 && best < 1e-8 {
            return Ok((rho, res, it));
        }
    }
    Err(GfError::NoConvergence { iterations: max_iter, residual: best })
}

/// Eigentriple of the discrete step map of `cfg`, seeded with `triple`.
///
/// λ is shifted by ln ρ/dt so the rescaled step has spectral radius 1, and the
/// bracket with the returned φ is conserved by the discrete dynamics up to
/// round-off.
pub fn step_consistent_triple(coeffs: &CoefficientSet, triple: &PerronTriple, cfg: &EvolutionConfig) -> Result<PerronTriple> {
    let grid = triple.grid().clone();
    cfg.validate(coeffs, &grid)?;
    let (_, dt) = schedule(cfg);
    let gain = Arc::new(assemble_gain(coeffs, &grid)?);
    let flow = Flow::for_coefficients(coeffs);
    let transport = TransportOperator::new(&flow, coeffs, &grid, triple.lambda, dt)?;
    let mut step = StepMap::new(cfg.method, gain, transport);
    let widths = grid.widths();

    let mut g = triple.g().values().to_vec();
    let (rho, direct, it1) = step_power_iteration(|a, b| { step.apply(a, b); }, &mut g, widths, dt, None)?;
    // weighted adjoint: φ ↦ W⁻¹MᵀWφ, normalized by ⟨G,φ⟩
    let gw: Vec<f64> = g.iter().zip(widths).map(|(a, w)| a * w).collect();
    let mut phi = triple.phi().values().to_vec();
    let mut tmp = vec![0.0; phi.len()];
    let (_, dual, it2) = step_power_iteration(
        |a, b| {
            for i in 0..a.len() {
                tmp[i] = a[i] * widths[i];
            }
            step.apply_transpose(&tmp, b);
            for i in 0..a.len() {
                b[i] /= widths[i];
            }
        },
        &mut phi,
        widths,
        dt,
        Some(&gw),
    )?;
    let lambda = triple.lambda + rho.ln() / dt;
    let g = DiscreteField::new(grid.clone(), g)?;
    let phi = DiscreteField::new(grid, phi)?;
    let mut out = PerronTriple::from_parts(lambda, g, phi)?;
    out.direct_residual = direct;
    out.dual_residual = dual;
    out.sandwich_constant = triple.sandwich_constant;
    out.interior_cells = triple.interior_cells;
    out.iterations = it1 + it2;
    Ok(out)
}

/// Time series of one run. Scalar rows are aligned with `times`.
#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    /// ⟨f(t), φ⟩ with φ from `triple`.
    pub bracket: Vec<f64>,
    pub alphas: Vec<f64>,
    /// norms[k][step] = ‖f‖_{L¹_α} for α = alphas[k].
    pub norms: Vec<Vec<f64>>,
    pub number: Vec<f64>,
    pub mass: Vec<f64>,
    /// Cumulative outflow past x_max, in bracket units.
    pub tail_loss: Vec<f64>,
    pub aeg_alpha: Option<f64>,
    pub aeg: Vec<f64>,
    /// ∫_a^b f(t) over the configured probe band.
    pub probe: Vec<f64>,
    pub snapshots: Vec<(f64, DiscreteField)>,
    /// Triple used for rescaling and brackets.
    pub triple: PerronTriple,
    pub rescaled: bool,
    /// ⟨f_in, φ⟩.
    pub projection: f64,
    /// Smallest cell value seen at any step.
    pub min_value: f64,
}

impl SimulationTrace {
    pub fn final_field(&self) -> &DiscreteField {
        &self.snapshots.last().expect("trace has snapshots").1
    }

    /// max_t |⟨f(t),φ⟩ + loss(t) − ⟨f_in,φ⟩| / |⟨f_in,φ⟩| (rescaled runs).
    pub fn conservation_drift(&self) -> f64 {
        let b0 = self.bracket[0];
        self.bracket
            .iter()
            .zip(&self.tail_loss)
            .zip(&self.times)
            .map(|((b, l), t)| {
                let s = if self.rescaled { 1.0 } else { (-self.triple.lambda * t).exp() };
                ((b * s + l) - b0).abs() / b0.abs()
            })
            .fold(0.0, f64::max)
    }

    /// Writes `t,bracket_phi,norm_<α>...,number,mass,tail_loss[,aeg][,probe]` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["t".to_string(), "bracket_phi".to_string()];
        header.extend(self.alphas.iter().map(|a| format!("norm_{a}")));
        header.extend(["number", "mass", "tail_loss"].map(String::from));
        if !self.aeg.is_empty() {
            header.push("aeg".into());
        }
        if !self.probe.is_empty() {
            header.push("probe".into());
        }
        writeln!(out, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![*t, self.bracket[k]];
            row.extend(self.norms.iter().map(|s| s[k]));
            row.extend([self.number[k], self.mass[k], self.tail_loss[k]]);
            if !self.aeg.is_empty() {
                row.push(self.aeg[k]);
            }
            if !self.probe.is_empty() {
                row.push(self.probe[k]);
            }
            writeln!(out, "{}", crate::discretization::csv_row(&row))?;
        }
        Ok(())
    }
}

/// Steps at which snapshots are kept: 0, the last one, and log-spaced in between.
fn snapshot_marks(n_steps: usize, max: usize) -> Vec<usize> {
    let mut marks = vec![0];
    let k = max.saturating_sub(2).max(1);
    for i in 0..=k {
        let m = ((n_steps as f64).powf(i as f64 / k as f64)).round() as usize;
        if m > *marks.last().unwrap() && m <= n_steps {
            marks.push(m);
        }
    }
    if *marks.last().unwrap() != n_steps {
        marks.push(n_steps);
    }
    marks.truncate(max.max(2) - 1);
    if *marks.last().unwrap() != n_steps {
        marks.push(n_steps);
    }
    marks
}

/// T_t f_in by the method of `cfg`, rescaled by e^{−λt} unless disabled.
pub fn evolve(
    coeffs: &CoefficientSet,
    grid: &Arc<Grid>,
    triple: &PerronTriple,
    f_in: &DiscreteField,
    cfg: &EvolutionConfig,
) -> Result<SimulationTrace> {
    if !same_grid(grid, f_in.grid()) || !same_grid(grid, triple.grid()) {
        return Err(GfError::GridMismatch);
    }
    cfg.validate(coeffs, grid)?;
    let reference = if cfg.step_consistent {
        step_consistent_triple(coeffs, triple, cfg)?
    } else {
        triple.clone()
    };
    let (n_steps, dt) = schedule(cfg);
    let gain = Arc::new(assemble_gain(coeffs, grid)?);
    let flow = Flow::for_coefficients(coeffs);
    let transport = TransportOperator::new(&flow, coeffs, grid, triple.lambda, dt)?;
    let mut step = StepMap::new(cfg.method, gain, transport);
    // the operator divides out e^{λ_ref·dt} exactly
    step.scale = ((triple.lambda - reference.lambda) * dt).exp();

    let (centers, widths) = (grid.centers(), grid.widths());
    let phi = reference.phi().values();
    let phi_out = *triple.phi().values().last().unwrap_or(&0.0);
    let projection = bracket(f_in, reference.phi())?;
    let pg: Vec<f64> = reference.g().values().iter().map(|g| projection * g).collect();
    let weights: Vec<Vec<f64>> = cfg.alphas.iter().map(|&a| centers.iter().map(|&x| weight(x, a)).collect()).collect();
    let probe_weight: Option<Vec<f64>> = cfg.probe.map(|(a, b)| {
        grid.edges().windows(2).map(|e| (b.min(e[1]) - a.max(e[0])).max(0.0)).collect()
    });
    let aeg_weight: Option<Vec<f64>> = cfg.aeg_alpha.map(|a| centers.iter().map(|&x| weight(x, a)).collect());

    let mut trace = SimulationTrace {
        times: Vec::with_capacity(n_steps + 1),
        bracket: Vec::with_capacity(n_steps + 1),
        alphas: cfg.alphas.clone(),
        norms: vec![Vec::with_capacity(n_steps + 1); cfg.alphas.len()],
        number: Vec::with_capacity(n_steps + 1),
        mass: Vec::with_capacity(n_steps + 1),
        tail_loss: Vec::with_capacity(n_steps + 1),
        aeg_alpha: cfg.aeg_alpha,
        aeg: Vec::new(),
        probe: Vec::new(),
        snapshots: Vec::new(),
        triple: reference.clone(),
        rescaled: cfg.rescale_by_lambda,
        projection,
        min_value: f64::INFINITY,
    };
    let marks = snapshot_marks(n_steps, cfg.max_snapshots);
    let mut next_mark = 0;
    let mut f = f_in.values().to_vec();
    let mut next = vec![0.0; f.len()];
    let mut loss = 0.0;
    let limit = cfg.tail_limit * projection.abs();

    for k in 0..=n_steps {
        if k > 0 {
            let lost = step.apply(&f, &mut next);
            std::mem::swap(&mut f, &mut next);
            loss += lost * phi_out;
        }
        let t = k as f64 * dt;
        let growth = if cfg.rescale_by_lambda { 1.0 } else { (reference.lambda * t).exp() };
        let mut number = 0.0;
        let mut mass = 0.0;
        let mut br = 0.0;
        let mut min = f64::INFINITY;
        for i in 0..f.len() {
            let m = f[i] * widths[i];
            number += m;
            mass += m * centers[i];
            br += m * phi[i];
            min = min.min(f[i]);
        }
        trace.min_value = trace.min_value.min(min);
        for (series, w) in trace.norms.iter_mut().zip(&weights) {
            let norm = growth * f.iter().zip(w).zip(widths).map(|((a, b), c)| a.abs() * b * c).sum::<f64>();
            if !(norm <= 1e12) {
                return Err(GfError::BlowUp { time: t, norm });
            }
            series.push(norm);
        }
        if let Some(w) = &aeg_weight {
            let d = f
                .iter()
                .zip(&pg)
                .zip(w)
                .zip(widths)
                .map(|(((a, b), c), dx)| (a - b).abs() * c * dx)
                .sum::<f64>();
            trace.aeg.push(d);
        }
        if let Some(w) = &probe_weight {
            trace.probe.push(growth * f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>());
        }
        trace.times.push(t);
        trace.bracket.push(growth * br);
        trace.number.push(growth * number);
        trace.mass.push(growth * mass);
        trace.tail_loss.push(loss);
        if next_mark < marks.len() && marks[next_mark] == k {
            let field = DiscreteField::new(grid.clone(), f.iter().map(|v| v * growth).collect())?;
            trace.snapshots.push((t, field));
            next_mark += 1;
        }
        if loss > limit {
            return Err(GfError::TailOverflow { time: t, loss, limit });
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuhamelOptions {
    /// Exponent of the L¹_α norm of the residual.
    pub alpha: f64,
    /// Splitting step used for T_s.
    pub dt: f64,
}

impl Default for DuhamelOptions {
    fn default() -> Self {
        DuhamelOptions { alpha: 1.0, dt: 1e-3 }
    }
}

/// Nodes and weights on [0, t]: 8-point Gauss panels on dyadic intervals
/// [0, t/2^{P−1}], ..., [t/2, t].
fn graded_nodes(t: f64, quad_points: usize) -> Vec<(f64, f64)> {
    let per = quad_points.clamp(1, 8);
    let panels = (quad_points / per).max(1);
    let rule = gauss_legendre(per);
    let mut out = Vec::with_capacity(panels * per);
    for p in 0..panels {
        let hi = t / 2f64.powi((panels - 1 - p) as i32);
        let lo = if p == 0 { 0.0 } else { hi / 2.0 };
        let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (x, w) in rule.0.iter().zip(&rule.1) {
            out.push((c + h * x, w * h));
        }
    }
    out
}

/// ‖T_t f − S_t f − Σ w_k S_{t−s_k}ℱ₊T_{s_k} f‖_{L¹_1} with graded nodes s_k.
/// S is realized by the transport steps of the splitting, so the two sides share
/// one remap and the residual isolates splitting and quadrature error.
pub fn duhamel_residual(
    coeffs: &CoefficientSet,
    grid: &Arc<Grid>,
    triple: &PerronTriple,
    f_in: &DiscreteField,
    t: f64,
    quad_points: usize,
) -> Result<f64> {
    duhamel_residual_with(coeffs, grid, triple, f_in, t, quad_points, DuhamelOptions::default())
}

pub fn duhamel_residual_with(
    coeffs: &CoefficientSet,
    grid: &Arc<Grid>,
    triple: &PerronTriple,
    f_in: &DiscreteField,
    t: f64,
    quad_points: usize,
    opts: DuhamelOptions,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(GfError::DomainError(format!("Duhamel residual needs t > 0, got {t}")));
    }
    if !same_grid(grid, f_in.grid()) {
        return Err(GfError::GridMismatch);
    }
    let lambda = triple.lambda;
    let gain = Arc::new(assemble_gain(coeffs, grid)?);
    let flow = Flow::for_coefficients(coeffs);
    let n = grid.len();

    // Every term rides the same time path: T_s f by splitting, and S_t f plus the
    // running sum Σ w_k S_{t−s_k}ℱ₊T_{s_k} f by the transport steps of that splitting.
    let mut f = f_in.values().to_vec();
    let mut rhs = f_in.values().to_vec();
    let mut next = vec![0.0; n];
    let mut gf = vec![0.0; n];
    let mut s = 0.0;
    let nodes = graded_nodes(t, quad_points);
    for k in 0..=nodes.len() {
        let node = nodes.get(k).map_or(t, |p| p.0);
        let len = node - s;
        if len > 0.0 {
            let steps = step_count(len, opts.dt);
            let transport = TransportOperator::new(&flow, coeffs, grid, lambda, len / steps as f64)?;
            for _ in 0..steps {
                transport.apply_slice(&rhs, &mut next);
                std::mem::swap(&mut rhs, &mut next);
            }
            let mut step = StepMap::new(Method::Splitting, gain.clone(), transport);
            for _ in 0..steps {
                step.apply(&f, &mut next);
                std::mem::swap(&mut f, &mut next);
            }
        }
        s = node;
        if let Some(&(_, w)) = nodes.get(k) {
            gain.apply_slice(&f, &mut gf);
            rhs.iter_mut().zip(&gf).for_each(|(r, g)| *r += w * g);
        }
    }
    Ok(grid
        .centers()
        .iter()
        .zip(grid.widths())
        .zip(f.iter().zip(&rhs))
        .map(|((&x, dx), (a, b))| (a - b).abs() * weight(x, opts.alpha) * dx)
        .sum())
}

/// Σ_{k≤n} T_t^{(k)} f (unrescaled) on a time lattice of step ≤ 1e-3.
pub fn dyson_phillips_partial(coeffs: &CoefficientSet, grid: &Arc<Grid>, f_in: &DiscreteField, t: f64, n: usize) -> Result<DiscreteField> {
    let steps = if t > 0.0 { step_count(t, 1e-3) } else { 1 };
    dyson_phillips_partial_with(coeffs, grid, f_in, t, n, steps)
}

/// Dyson-Phillips partial sum with `steps` trapezoid intervals: with U₀(s) = S_s f,
/// U_{k+1}(t) = ∫₀^t S_{t−s}ℱ₊U_k(s) ds, and S_{mΔ} realized as S_Δ^m.
pub fn dyson_phillips_partial_with(
    coeffs: &CoefficientSet,
    grid: &Arc<Grid>,
    f_in: &DiscreteField,
    t: f64,
    n: usize,
    steps: usize,
) -> Result<DiscreteField> {
    if !same_grid(grid, f_in.grid()) {
        return Err(GfError::GridMismatch);
    }
    if !(t >= 0.0) || steps == 0 {
        return Err(GfError::DomainError(format!("Dyson-Phillips needs t ≥ 0 and steps ≥ 1 (t = {t})")));
    }
    if t == 0.0 {
        return Ok(f_in.clone());
    }
    let delta = t / steps as f64;
    let flow = Flow::for_coefficients(coeffs);
    let s = TransportOperator::new(&flow, coeffs, grid, 0.0, delta)?;
    let gain = assemble_gain(coeffs, grid)?;
    let len = grid.len();

    let mut u: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    u.push(f_in.values().to_vec());
    for m in 1..=steps {
        let mut next = vec![0.0; len];
        s.apply_slice(&u[m - 1], &mut next);
        u.push(next);
    }
    let mut total = u[steps].clone();
    let mut g = vec![0.0; len];
    let mut tmp = vec![0.0; len];
    for _ in 1..=n {
        // A(m) = S_Δ A(m−1) + g_m, B(m) = S_Δ B(m−1), U(m) = Δ(A − B/2 − g_m/2)
        let mut a = vec![0.0; len];
        let mut b = vec![0.0; len];
        let mut next_u = Vec::with_capacity(steps + 1);
        for m in 0..=steps {
            gain.apply_slice(&u[m], &mut g);
            if m == 0 {
                a.copy_from_slice(&g);
                b.copy_from_slice(&g);
                next_u.push(vec![0.0; len]);
                continue;
            }
            s.apply_slice(&a, &mut tmp);
            for i in 0..len {
                a[i] = tmp[i] + g[i];
            }
            s.apply_slice(&b, &mut tmp);
            b.copy_from_slice(&tmp);
            next_u.push((0..len).map(|i| delta * (a[i] - 0.5 * b[i] - 0.5 * g[i])).collect());
        }
        u = next_u;
        total.iter_mut().zip(&u[steps]).for_each(|(x, y)| *x += y);
    }
    DiscreteField::new(grid.clone(), total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{FragmentationKernel, FragmentationRate, GrowthRate};
    use crate::eigensolver::solve_perron;

    fn shift_setup(b: FragmentationRate) -> (CoefficientSet, Arc<Grid>, Flow) {
        let coeffs = CoefficientSet::new(GrowthRate::constant(1.0), b, FragmentationKernel::mitosis()).unwrap();
        let grid = Arc::new(Grid::uniform(0.025, 10.025, 400).unwrap());
        let flow = Flow::for_coefficients(&coeffs);
        (coeffs, grid, flow)
    }

    #[test]
    fn pure_shift_by_whole_cells_is_exact() {
        let (coeffs, grid, flow) = shift_setup(FragmentationRate::zero());
        let f = DiscreteField::from_fn(grid.clone(), |x| (-(x - 3.0) * (x - 3.0)).exp());
        let h = grid.widths()[0];
        let g = transport_step(&flow, &coeffs, 0.0, 40.0 * h, &f).unwrap();
        for i in 40..400 {
            assert!((g.values()[i] - f.values()[i - 40]).abs() < 1e-12);
        }
        assert!(g.values()[..40].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_shift_conserves_number_up_to_outflow() {
        let (coeffs, grid, flow) = shift_setup(FragmentationRate::zero());
        let f = DiscreteField::indicator(grid.clone(), 8.0, 9.5);
        let op = TransportOperator::new(&flow, &coeffs, &grid, 0.0, 1.137).unwrap();
        let mut out = vec![0.0; 400];
        let lost = op.apply_slice(f.values(), &mut out);
        let kept: f64 = out.iter().map(|v| v * grid.widths()[0]).sum();
        assert!((lost - 0.612).abs() < 1e-12, "{lost}");
        assert!((kept + lost - 1.5).abs() < 1e-12);
    }

    #[test]
    fn constant_rate_decays_number() {
        let (coeffs, grid, flow) = shift_setup(FragmentationRate::power(0.7, 0.0));
        let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
        let g = transport_step(&flow, &coeffs, 0.0, 1.3, &f).unwrap();
        assert!((g.integral() - (-0.91f64).exp()).abs() < 1e-14);
        let s = transport_step(&flow, &coeffs, 0.25, 1.3, &f).unwrap();
        assert!((s.integral() - (-0.91f64 - 0.325).exp()).abs() < 1e-14);
    }

    #[test]
    fn first_moment_follows_growth() {
        // B ≡ 0, τ = max(1, x): ∫xS_tf = ∫X(t,y)f(y)dy
        let coeffs = CoefficientSet::new(
            GrowthRate::affine_capped(1.0),
            FragmentationRate::zero(),
            FragmentationKernel::mitosis(),
        )
        .unwrap();
        let grid = Arc::new(Grid::geometric(1e-3, 100.0, 800).unwrap());
        let flow = Flow::for_coefficients(&coeffs);
        let f = DiscreteField::indicator(grid.clone(), 0.5, 1.5);
        let g = transport_step(&flow, &coeffs, 0.0, 0.4, &f).unwrap();
        assert!((g.integral() - f.integral()).abs() < 1e-13);
        assert!(g.min_value() >= 0.0);
        let rule = gauss_legendre(8);
        let mass: f64 = grid
            .edges()
            .windows(2)
            .zip(f.values())
            .map(|(e, v)| v * crate::quadrature::gauss_fixed(|y| flow.flow(0.4, y).unwrap(), e[0], e[1], &rule))
            .sum();
        assert!((g.first_moment() - mass).abs() < 1e-10, "{} vs {mass}", g.first_moment());
    }

    #[test]
    fn dyson_phillips_zeroth_order_is_transport() {
        let (coeffs, grid, flow) = shift_setup(FragmentationRate::power(0.7, 0.0));
        let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
        let h = grid.widths()[0];
        let d = dyson_phillips_partial_with(&coeffs, &grid, &f, 20.0 * h, 0, 20).unwrap();
        let s = transport_step(&flow, &coeffs, 0.0, 20.0 * h, &f).unwrap();
        let diff = d.combine(1.0, &s, -1.0).unwrap().weighted_norm(0.0);
        assert!(diff < 1e-13, "{diff}");
    }

    #[test]
    fn first_generation_support_after_one_split() {
        let (coeffs, grid, _) = shift_setup(FragmentationRate::power(1.0, 1.0));
        let f = DiscreteField::indicator(grid.clone(), 2.0, 4.0);
        let h = grid.widths()[0];
        let t = 20.0 * h;
        let d0 = dyson_phillips_partial_with(&coeffs, &grid, &f, t, 0, 20).unwrap();
        let d1 = dyson_phillips_partial_with(&coeffs, &grid, &f, t, 1, 20).unwrap();
        let first = d1.combine(1.0, &d0, -1.0).unwrap();
        for (x, v) in grid.centers().iter().zip(first.values()) {
            if *x < 1.0 - h || *x > 4.0 + t + h {
                assert!(v.abs() < 1e-14, "x = {x}: {v}");
            }
        }
        assert!(first.integral() > 0.0);
    }

    fn baseline(n: usize) -> (CoefficientSet, Arc<Grid>, PerronTriple) {
        let coeffs = CoefficientSet::new(
            GrowthRate::constant(1.0),
            FragmentationRate::power(1.0, 1.0),
            FragmentationKernel::mitosis(),
        )
        .unwrap();
        let grid = Arc::new(Grid::geometric_snapped(1e-3, 30.0, n, 0.5).unwrap());
        let triple = solve_perron(&coeffs, &grid, 1e-10, 20_000).unwrap();
        (coeffs, grid, triple)
    }

    #[test]
    fn stationary_profile_stays_put() {
        let (coeffs, grid, triple) = baseline(256);
        let cfg = EvolutionConfig { dt: 5e-3, t_end: 2.0, ..Default::default() };
        let st = step_consistent_triple(&coeffs, &triple, &cfg).unwrap();
        assert!((st.lambda - triple.lambda).abs() < 1e-2);
        let cfg = EvolutionConfig { step_consistent: false, ..cfg };
        let trace = evolve(&coeffs, &grid, &st, st.g(), &cfg).unwrap();
        let drift = trace.final_field().combine(1.0, st.g(), -1.0).unwrap().weighted_norm(1.0);
        assert!(drift < 1e-9, "{drift}");
        assert!(trace.conservation_drift() < 1e-10, "{}", trace.conservation_drift());
    }

    #[test]
    fn linear_and_positive() {
        let (coeffs, grid, triple) = baseline(128);
        let cfg = EvolutionConfig { dt: 1e-2, t_end: 1.0, step_consistent: false, ..Default::default() };
        let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
        let g = DiscreteField::from_fn(grid.clone(), |x| x * (-x).exp());
        let fg = f.combine(2.0, &g, 3.0).unwrap();
        let a = evolve(&coeffs, &grid, &triple, &f, &cfg).unwrap();
        let b = evolve(&coeffs, &grid, &triple, &g, &cfg).unwrap();
        let c = evolve(&coeffs, &grid, &triple, &fg, &cfg).unwrap();
        assert!(a.min_value >= 0.0 && b.min_value >= 0.0);
        let lin = a.final_field().combine(2.0, b.final_field(), 3.0).unwrap();
        let diff = lin.combine(1.0, c.final_field(), -1.0).unwrap().weighted_norm(1.0);
        assert!(diff < 1e-12 * c.final_field().weighted_norm(1.0));
    }

    #[test]
    fn methods_agree_to_second_order() {
        let (coeffs, grid, triple) = baseline(128);
        let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
        let run = |method| {
            let cfg = EvolutionConfig { dt: 2e-3, t_end: 0.5, method, step_consistent: false, ..Default::default() };
            evolve(&coeffs, &grid, &triple, &f, &cfg).unwrap().final_field().clone()
        };
        let s = run(Method::Splitting);
        for m in [Method::DuhamelPicard, Method::DysonPhillips(4)] {
            let d = run(m).combine(1.0, &s, -1.0).unwrap().weighted_norm(1.0);
            assert!(d < 1e-4, "{m:?}: {d}");
        }
    }

    #[test]
    fn snapshot_marks_are_bounded_and_sorted() {
        for (n, max) in [(20000, 512), (10, 512), (1000, 2), (0, 5)] {
            let m = snapshot_marks(n, max);
            assert!(m.len() <= max.max(2));
            assert_eq!(m[0], 0);
            assert_eq!(*m.last().unwrap(), n);
            assert!(m.windows(2).all(|w| w[0] < w[1]) || n == 0);
        }
    }

    #[test]
    fn rejects_large_gain_step() {
        let (coeffs, grid, triple) = baseline(128);
        let cfg = EvolutionConfig { dt: 0.1, ..Default::default() };
        let f = DiscreteField::indicator(grid.clone(), 1.0, 2.0);
        assert!(matches!(evolve(&coeffs, &grid, &triple, &f, &cfg), Err(GfError::Config(_))));
    }
}
