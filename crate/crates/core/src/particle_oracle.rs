//! Monte Carlo branching-particle oracle.
//!
//! Particles grow along the characteristics and split at rate B into the
//! fragments of an atomic kernel with integer multiplicities. Split sizes are
//! drawn by inverting the hazard ∫B/τ along the path; coefficients without a
//! closed-form hazard use thinning against the bound B₁(1+x)^{γ₁}. Replicas run
//! in parallel, each on its own ChaCha stream seeded with `seed + replica`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::Flow;
use crate::coefficients::CoefficientSet;
use crate::discretization::DiscreteField;
use crate::error::{GfError, Result};

/// Weighted particles at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    /// (size, weight)
    pub particles: Vec<(f64, f64)>,
    pub rng_seed: u64,
    pub time: f64,
}

/// Moment estimates with Monte Carlo standard errors over replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    pub number_mean: Vec<f64>,
    pub number_se: Vec<f64>,
    pub mass_mean: Vec<f64>,
    pub mass_se: Vec<f64>,
    /// e^{−λt}Σ weight·φ(size); empty when no φ was supplied.
    pub bracket_mean: Vec<f64>,
    pub bracket_se: Vec<f64>,
    pub replicas: usize,
}

impl MomentSeries {
    /// Writes `t,number_mean,number_se,mass_mean,mass_se,bracket_mean,bracket_se` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,number_mean,number_se,mass_mean,mass_se,bracket_mean,bracket_se")?;
        for k in 0..self.times.len() {
            let (bm, bs) = if self.bracket_mean.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (self.bracket_mean[k], self.bracket_se[k])
            };
            let row = [self.times[k], self.number_mean[k], self.number_se[k], self.mass_mean[k], self.mass_se[k], bm, bs];
            writeln!(out, "{}", crate::discretization::csv_row(&row))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Initial particles per replica.
    pub n0: usize,
    /// Observation times, increasing.
    pub times: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    /// Keep the final ensemble of every replica.
    pub keep_particles: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { n0: 10_000, times: vec![0.0, 0.5, 1.0, 2.0], replicas: 32, seed: 1, keep_particles: false }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub series: MomentSeries,
    pub ensembles: Vec<ParticleEnsemble>,
}

/// Fragment sizes and multiplicities of an atomic integer kernel.
fn integer_atoms(coeffs: &CoefficientSet) -> Result<Vec<(f64, usize)>> {
    let k = &coeffs.kernel;
    if k.density.is_some() {
        return Err(GfError::UnsupportedKernel("kernels with a density part have no particle law".into()));
    }
    k.atoms
        .iter()
        .map(|&(z, w)| {
            let r = w.round();
            if (w - r).abs() > 1e-12 || r < 1.0 {
                Err(GfError::UnsupportedKernel(format!("atom at z = {z} has non-integer multiplicity {w}")))
            } else {
                Ok((z, r as usize))
            }
        })
        .collect()
}

/// Draws sizes from the piecewise-constant density of `f` (normalized).
pub struct FieldSampler {
    edges: Vec<f64>,
    cdf: Vec<f64>,
    total: f64,
}

impl FieldSampler {
    pub fn new(f: &DiscreteField) -> Result<Self> {
        let g = f.grid();
        let mut cdf = Vec::with_capacity(f.len());
        let mut acc = 0.0;
        for (i, (&v, &w)) in f.values().iter().zip(g.widths()).enumerate() {
            if v < 0.0 {
                return Err(GfError::NonPositiveData { index: i, value: v });
            }
            acc += v * w;
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(GfError::DomainError("initial density has zero mass".into()));
        }
        Ok(FieldSampler { edges: g.edges().to_vec(), cdf, total: acc })
    }

    /// ∫f.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u = rng.gen::<f64>() * self.total;
        let i = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let lo = self.edges[i];
        lo + rng.gen::<f64>() * (self.edges[i + 1] - lo)
    }
}

/// Σ weight·φ(size) with φ linearly interpolated, and the standard error of
/// the sum treating particle contributions as independent.
pub fn empirical_bracket(ensemble: &ParticleEnsemble, phi: &DiscreteField) -> (f64, f64) {
    let vals: Vec<f64> = ensemble.particles.iter().map(|&(x, w)| w * phi.interpolate(x)).collect();
    let n = vals.len();
    let sum: f64 = vals.iter().sum();
    if n < 2 {
        return (sum, 0.0);
    }
    let mean = sum / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (sum, (var * n as f64).sqrt())
}

struct Simulator<'a> {
    coeffs: &'a CoefficientSet,
    flow: Flow,
    atoms: Vec<(f64, usize)>,
    analytic: bool,
}

impl Simulator<'_> {
    /// Size at which a particle born at size x splits, with the time it takes;
    /// `None` if it does not split within `horizon`.
    fn next_split<R: Rng>(&self, x: f64, horizon: f64, rng: &mut R) -> Result<Option<(f64, f64)>> {
        if self.analytic {
            let e = -(1.0 - rng.gen::<f64>()).ln();
            return Ok(match self.flow.hazard_advance(x, e) {
                Some(y) => {
                    let s = self.flow.travel_time(x, y);
                    (s <= horizon).then_some((s, y))
                }
                None => None,
            });
        }
        // thinning against B₁(1+X)^{γ₁} at the end of the horizon
        let b = &self.coeffs.b;
        let x_end = self.flow.flow(horizon, x)?;
        let bound = b.b1 * (1.0 + x_end).powf(b.gamma1);
        if !(bound > 0.0) {
            return Ok(None);
        }
        let mut s = 0.0;
        loop {
            s += -(1.0 - rng.gen::<f64>()).ln() / bound;
            if s > horizon {
                return Ok(None);
            }
            let y = self.flow.flow(s, x)?;
            if rng.gen::<f64>() * bound < b.eval(y) {
                return Ok(Some((s, y)));
            }
        }
    }

    fn replica(
        &self,
        sampler: &FieldSampler,
        cfg: &OracleConfig,
        replica: usize,
        phi: Option<&DiscreteField>,
    ) -> Result<(Vec<[f64; 3]>, Option<ParticleEnsemble>)> {
        let seed = cfg.seed.wrapping_add(replica as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_end = cfg.times.last().copied().unwrap_or(0.0);
        let w0 = sampler.total() / cfg.n0 as f64;
        let mut sums = vec![[0.0; 3]; cfg.times.len()];
        let mut survivors = Vec::new();
        // (size at birth, birth time)
        let mut stack: Vec<(f64, f64)> = (0..cfg.n0).map(|_| (sampler.sample(&mut rng), 0.0)).collect();
        stack.reverse();
        while let Some((x, t0)) = stack.pop() {
            let split = self.next_split(x, t_end - t0, &mut rng)?;
            let t_split = split.map_or(f64::INFINITY, |(s, _)| t0 + s);
            for (k, &t) in cfg.times.iter().enumerate() {
                if t >= t0 && t < t_split {
                    let y = self.flow.flow(t - t0, x)?;
                    let s = &mut sums[k];
                    s[0] += w0;
                    s[1] += w0 * y;
                    if let Some(p) = phi {
                        s[2] += w0 * p.interpolate(y);
                    }
                }
            }
            match split {
                Some((_, y)) => {
                    for &(z, m) in self.atoms.iter().rev() {
                        for _ in 0..m {
                            stack.push((z * y, t_split));
                        }
                    }
                }
                None if cfg.keep_particles => survivors.push((self.flow.flow(t_end - t0, x)?, w0)),
                None => {}
            }
        }
        let ensemble = cfg
            .keep_particles
            .then_some(ParticleEnsemble { particles: survivors, rng_seed: seed, time: t_end });
        Ok((sums, ensemble))
    }
}

/// Runs `cfg.replicas` independent replicas of the branching process started
/// from `n0` particles drawn from `f_in` (weights ∫f_in/n0).
pub fn simulate(
    coeffs: &CoefficientSet,
    f_in: &DiscreteField,
    cfg: &OracleConfig,
    phi: Option<(&DiscreteField, f64)>,
) -> Result<OracleResult> {
    let atoms = integer_atoms(coeffs)?;
    if cfg.n0 == 0 || cfg.replicas == 0 {
        return Err(GfError::Config("n0 and replicas must be positive".into()));
    }
    if cfg.times.windows(2).any(|w| w[1] < w[0]) || cfg.times.iter().any(|t| !(*t >= 0.0)) {
        return Err(GfError::Config("observation times must be nonnegative and sorted".into()));
    }
    let flow = Flow::for_coefficients(coeffs);
    let analytic = coeffs.b_over_tau().is_analytic() && coeffs.tau.segments().is_analytic();
    let sim = Simulator { coeffs, flow, atoms, analytic };
    let sampler = FieldSampler::new(f_in)?;
    let phi_field = phi.map(|p| p.0);
    let runs: Vec<(Vec<[f64; 3]>, Option<ParticleEnsemble>)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| sim.replica(&sampler, cfg, r, phi_field))
        .collect::<Result<_>>()?;

    let r = cfg.replicas as f64;
    let stat = |k: usize, c: usize, scale: f64| {
        let vals: Vec<f64> = runs.iter().map(|(s, _)| s[k][c] * scale).collect();
        let mean = vals.iter().sum::<f64>() / r;
        let se = if cfg.replicas > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0) / r).sqrt()
        } else {
            0.0
        };
        (mean, se)
    };
    let mut series = MomentSeries {
        times: cfg.times.clone(),
        number_mean: vec![],
        number_se: vec![],
        mass_mean: vec![],
        mass_se: vec![],
        bracket_mean: vec![],
        bracket_se: vec![],
        replicas: cfg.replicas,
    };
    for (k, &t) in cfg.times.iter().enumerate() {
        let (m, s) = stat(k, 0, 1.0);
        series.number_mean.push(m);
        series.number_se.push(s);
        let (m, s) = stat(k, 1, 1.0);
        series.mass_mean.push(m);
        series.mass_se.push(s);
        if let Some((_, lambda)) = phi {
            let (m, s) = stat(k, 2, (-lambda * t).exp());
            series.bracket_mean.push(m);
            series.bracket_se.push(s);
        }
    }
    let ensembles = runs.into_iter().filter_map(|(_, e)| e).collect();
    Ok(OracleResult { series, ensembles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{FragmentationKernel, FragmentationRate, GrowthRate};
    use crate::discretization::Grid;
    use std::sync::Arc;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::geometric(1e-3, 50.0, 256).unwrap())
    }

    #[test]
    fn no_fragmentation_follows_the_flow() {
        let coeffs = CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::zero(), FragmentationKernel::mitosis()).unwrap();
        let f = DiscreteField::indicator(grid(), 1.0, 2.0);
        let cfg = OracleConfig { n0: 50, times: vec![0.0, 1.5], replicas: 2, keep_particles: true, ..Default::default() };
        let out = simulate(&coeffs, &f, &cfg, None).unwrap();
        assert!((out.series.number_mean[1] - 1.0).abs() < 1e-12);
        let m0 = out.series.mass_mean[0];
        assert!((out.series.mass_mean[1] - m0 - 1.5).abs() < 1e-12);
        for e in &out.ensembles {
            assert_eq!(e.particles.len(), 50);
            assert!(e.particles.iter().all(|&(x, _)| (2.4..=3.6).contains(&x)));
        }
    }

    #[test]
    fn single_particle_bracket() {
        let phi = DiscreteField::sample(grid(), |x| 1.0 + x);
        let e = ParticleEnsemble { particles: vec![(1.7, 1.0)], rng_seed: 0, time: 0.0 };
        assert!((empirical_bracket(&e, &phi).0 - 2.7).abs() < 1e-3);
    }

    #[test]
    fn rejects_density_and_fractional_kernels() {
        let f = DiscreteField::indicator(grid(), 1.0, 2.0);
        let cfg = OracleConfig::default();
        let uniform = CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::uniform()).unwrap();
        assert!(matches!(simulate(&uniform, &f, &cfg, None), Err(GfError::UnsupportedKernel(_))));
        let frac = FragmentationKernel::new(vec![(2.0 / 3.0, 1.5)], None).unwrap();
        let c = CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::power(1.0, 1.0), frac).unwrap();
        assert!(matches!(simulate(&c, &f, &cfg, None), Err(GfError::UnsupportedKernel(_))));
    }

    #[test]
    fn deterministic_per_seed_and_mass_conserving() {
        let coeffs = CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::asymmetric(0.3)).unwrap();
        let f = DiscreteField::indicator(grid(), 1.0, 2.0);
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
        let cfg = OracleConfig { n0: 2000, times: times.clone(), replicas: 4, seed: 7, ..Default::default() };
        let a = simulate(&coeffs, &f, &cfg, None).unwrap();
        let b = simulate(&coeffs, &f, &cfg, None).unwrap();
        assert_eq!(a.series, b.series);
        // τ ≡ 1 and size-preserving splits: E[mass](t) = mass(0) + ∫₀^t E[number]
        let s = &a.series;
        let mut integral = 0.0;
        for k in 1..times.len() {
            integral += 0.5 * (s.number_mean[k] + s.number_mean[k - 1]) * 0.05;
            assert!((s.mass_mean[k] - s.mass_mean[0] - integral).abs() < 2e-3 * s.mass_mean[k]);
            assert!(s.number_mean[k] >= s.number_mean[k - 1]);
        }
    }

    #[test]
    fn thinning_agrees_with_inversion() {
        use crate::coefficients::FragmentationFamily;
        let tab = FragmentationRate::new(FragmentationFamily::Tabulated {
            xs: vec![1e-3, 1.0, 2.0, 4.0, 50.0],
            values: vec![1e-3, 1.0, 2.0, 4.0, 50.0],
        })
        .unwrap();
        let f = DiscreteField::indicator(grid(), 1.0, 2.0);
        let cfg = OracleConfig { n0: 5000, times: vec![0.0, 1.0], replicas: 8, ..Default::default() };
        let exact = CoefficientSet::new(GrowthRate::constant(1.0), FragmentationRate::power(1.0, 1.0), FragmentationKernel::mitosis()).unwrap();
        let thinned = CoefficientSet::new(GrowthRate::constant(1.0), tab, FragmentationKernel::mitosis()).unwrap();
        let a = simulate(&exact, &f, &cfg, None).unwrap().series;
        let b = simulate(&thinned, &f, &cfg, None).unwrap().series;
        let se = (a.number_se[1].powi(2) + b.number_se[1].powi(2)).sqrt();
        assert!((a.number_mean[1] - b.number_mean[1]).abs() < 4.0 * se, "{} vs {} ± {se}", a.number_mean[1], b.number_mean[1]);
    }
}
