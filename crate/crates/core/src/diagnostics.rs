//! Long-time diagnostics: distance to the asynchronous profile, exponential
//! rate fits, periodicity detection, moment creation and the Osgood
//! non-uniformity experiment.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, Mode};
use crate::discretization::{bracket, same_grid, weight, DiscreteField, Grid};
use crate::eigensolver::PerronTriple;
use crate::error::{GfError, Result};
use crate::characteristics::Flow;
use crate::evolution::{evolve, transport_step, EvolutionConfig, SimulationTrace};

/// d(t) ≈ M e^{−σt} on `window`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    #[serde(rename = "M")]
    pub m: f64,
    pub sigma: f64,
    pub window: (f64, f64),
    /// R² of the log-linear fit.
    pub goodness: f64,
    pub samples: usize,
}

/// d(t) = ‖f(t) − ⟨f_in,φ⟩G‖_{L¹_α} at each stored snapshot.
///
/// Snapshots of unrescaled runs are divided by e^{λt} first.
pub fn aeg_distance(
    trace: &SimulationTrace,
    triple: &PerronTriple,
    f_in: &DiscreteField,
    alpha: f64,
) -> Result<Vec<(f64, f64)>> {
    let proj = bracket(f_in, triple.phi())?;
    let g = triple.g();
    let x = g.grid().centers();
    let w = g.grid().widths();
    trace
        .snapshots
        .iter()
        .map(|(t, f)| {
            if !same_grid(f.grid(), g.grid()) {
                return Err(GfError::GridMismatch);
            }
            let s = if trace.rescaled { 1.0 } else { (-triple.lambda * t).exp() };
            let d = f
                .values()
                .iter()
                .zip(g.values())
                .enumerate()
                .map(|(i, (a, b))| (s * a - proj * b).abs() * weight(x[i], alpha) * w[i])
                .sum();
            Ok((*t, d))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    /// Time window; `None` uses the last half of the series.
    pub window: Option<(f64, f64)>,
    /// Samples below this value are treated as numerical floor and skipped.
    pub floor: f64,
}

/// Least-squares line through (t, ln d) on the window.
pub fn fit_rate(times: &[f64], d: &[f64], window: Option<(f64, f64)>) -> Result<RateFit> {
    fit_rate_with(times, d, FitOptions { window, floor: 0.0 })
}

pub fn fit_rate_with(times: &[f64], d: &[f64], opts: FitOptions) -> Result<RateFit> {
    if times.len() != d.len() {
        return Err(GfError::DomainError("times and values differ in length".into()));
    }
    if times.is_empty() {
        return Err(GfError::DomainError("empty series".into()));
    }
    let (lo, hi) = opts.window.unwrap_or_else(|| {
        let end = times[times.len() - 1];
        (0.5 * (times[0] + end), end)
    });
    let mut pts = Vec::new();
    for (i, (&t, &v)) in times.iter().zip(d).enumerate() {
        if t < lo - 1e-12 || t > hi + 1e-12 {
            continue;
        }
        if opts.floor > 0.0 && v < opts.floor {
            continue;
        }
        if !(v > 0.0) {
            return Err(GfError::NonPositiveData { index: i, value: v });
        }
        pts.push((t, v.ln()));
    }
    if pts.len() < 3 {
        return Err(GfError::DomainError(format!(
            "only {} usable samples in window [{lo}, {hi}]",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let goodness = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RateFit {
        m: intercept.exp(),
        sigma: -slope,
        window: (pts[0].0, pts[pts.len() - 1].0),
        goodness,
        samples: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub periodic: bool,
    /// Lag of the first autocorrelation peak (NaN when there is none).
    pub period: f64,
    /// Half the peak-to-peak range of the detrended tail.
    pub amplitude: f64,
    /// Autocorrelation at the detected lag.
    pub peak: f64,
}

/// Autocorrelation test on the last half of a uniformly sampled, already
/// rescaled series. A peak ≥ 0.9 that recurs at twice its lag counts as periodic.
pub fn detect_oscillation(times: &[f64], series: &[f64]) -> Oscillation {
    let none = |amplitude| Oscillation { periodic: false, period: f64::NAN, amplitude, peak: 0.0 };
    let n = series.len().min(times.len());
    if n < 16 {
        return none(0.0);
    }
    let tail_t = &times[n / 2..n];
    let tail = &series[n / 2..n];
    let m = tail.len();
    let dt = (tail_t[m - 1] - tail_t[0]) / (m - 1) as f64;
    // remove the linear trend
    let mt = tail_t.iter().sum::<f64>() / m as f64;
    let my = tail.iter().sum::<f64>() / m as f64;
    let stt: f64 = tail_t.iter().map(|t| (t - mt).powi(2)).sum();
    let sty: f64 = tail_t.iter().zip(tail).map(|(t, y)| (t - mt) * (y - my)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let x: Vec<f64> = tail_t.iter().zip(tail).map(|(t, y)| y - my - slope * (t - mt)).collect();
    let amplitude = 0.5 * (x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min));
    let var = x.iter().map(|v| v * v).sum::<f64>() / m as f64;
    if !(var > 0.0) || !var.is_finite() {
        return none(amplitude);
    }
    let max_lag = m / 4;
    let acf: Vec<f64> = (0..=max_lag)
        .map(|k| x[..m - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>() / ((m - k) as f64 * var))
        .collect();
    let Some(first_neg) = acf.iter().position(|&r| r < 0.0) else {
        return none(amplitude);
    };
    let mut best = None;
    for k in first_neg.max(1)..max_lag {
        if acf[k] >= acf[k - 1] && acf[k] >= acf[k + 1] && acf[k] > 0.0 {
            best = Some(k);
            break;
        }
    }
    let Some(k) = best else {
        return none(amplitude);
    };
    // parabolic refinement of the peak position
    let (a, b, c) = (acf[k - 1], acf[k], acf[k + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom != 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    let period = (k as f64 + shift) * dt;
    // the peak has to recur at twice the lag
    let k2 = 2 * k;
    let recur = k2 + 1 < acf.len() && acf[k2 - 1..=k2 + 1].iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= 0.9;
    let recur = recur || k2 + 1 >= acf.len();
    Oscillation { periodic: b >= 0.9 && recur, period, amplitude, peak: b }
}

/// f_η = 1_{(0,η)}/(ηφ) restricted to the grid, normalized to ⟨f_η,φ⟩ = 1.
pub fn osgood_initial(triple: &PerronTriple, eta: f64) -> Result<DiscreteField> {
    let grid = triple.grid();
    let e = grid.edges();
    let cells = e.windows(2).filter(|w| w[0] < eta).count();
    if eta < 2.0 * grid.x_min() || cells < 8 {
        return Err(GfError::DomainError(format!(
            "η = {eta} is under-resolved: {cells} cells in (x_min, η) with x_min = {}",
            grid.x_min()
        )));
    }
    let values: Vec<f64> = e
        .windows(2)
        .zip(triple.phi().values())
        .map(|(w, &p)| {
            let frac = ((eta.min(w[1]) - w[0]) / (w[1] - w[0])).max(0.0);
            if frac > 0.0 {
                frac / (eta * p)
            } else {
                0.0
            }
        })
        .collect();
    let f = DiscreteField::new(grid.clone(), values)?;
    let b = bracket(&f, triple.phi())?;
    Ok(f.scaled(1.0 / b))
}

/// ‖T_t f_η − G‖_{L¹(φ)} for each η.
pub fn osgood_demo(
    coeffs: &CoefficientSet,
    grid: &Arc<Grid>,
    triple: &PerronTriple,
    eta_list: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let b_max = grid.centers().iter().map(|&x| coeffs.b.eval(x)).fold(0.0, f64::max);
    let cfg = EvolutionConfig {
        dt: 1e-3f64.min(0.5 / b_max),
        t_end: t,
        step_consistent: false,
        alphas: vec![],
        max_snapshots: 2,
        tail_limit: f64::INFINITY,
        ..Default::default()
    };
    osgood_demo_with(coeffs, grid, triple, eta_list, &cfg)
}

pub fn osgood_demo_with(
    coeffs: &CoefficientSet,
    grid: &Arc<Grid>,
    triple: &PerronTriple,
    eta_list: &[f64],
    cfg: &EvolutionConfig,
) -> Result<Vec<f64>> {
    if coeffs.mode() != Mode::Osgood {
        return Err(GfError::DomainError("the Osgood experiment needs 1/τ non-integrable at 0".into()));
    }
    let phi = triple.phi().values();
    let g = triple.g().values();
    let w = grid.widths();
    eta_list
        .iter()
        .map(|&eta| {
            let f = osgood_initial(triple, eta)?;
            let trace = evolve(coeffs, grid, triple, &f, cfg)?;
            let s = if trace.rescaled { 1.0 } else { (-triple.lambda * cfg.t_end).exp() };
            Ok(trace
                .final_field()
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| (s * v - g[i]).abs() * phi[i] * w[i])
                .sum())
        })
        .collect()
}

/// Scaled transport moments t^{(β−α)/γ₀}·e^{−βτ₁t}·‖S_t f‖_{L¹_β} at each t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCreation {
    pub times: Vec<f64>,
    pub scaled: Vec<f64>,
    pub sup: f64,
}

pub fn moment_creation(coeffs: &CoefficientSet, f: &DiscreteField, alpha: f64, beta: f64, times: &[f64]) -> Result<MomentCreation> {
    let gamma0 = coeffs.b.gamma0;
    if !(gamma0 > 0.0) || !(beta >= alpha) {
        return Err(GfError::DomainError(format!("moment creation needs γ₀ > 0 and β ≥ α (γ₀ = {gamma0}, α = {alpha}, β = {beta})")));
    }
    if let Some(&t) = times.iter().find(|&&t| !(t > 0.0)) {
        return Err(GfError::DomainError(format!("moment creation times must be positive, got {t}")));
    }
    let flow = Flow::for_coefficients(coeffs);
    let tau1 = coeffs.tau.tau1;
    let scaled = times
        .iter()
        .map(|&t| {
            let s = transport_step(&flow, coeffs, 0.0, t, f)?;
            Ok(t.powf((beta - alpha) / gamma0) * (-beta * tau1 * t).exp() * s.weighted_norm(beta))
        })
        .collect::<Result<Vec<f64>>>()?;
    let sup = scaled.iter().cloned().fold(0.0, f64::max);
    Ok(MomentCreation { times: times.to_vec(), scaled, sup })
}
