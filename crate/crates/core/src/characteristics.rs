//! Characteristic flow of the transport part: X(t,x) = F⁻¹(F(x) + t) with
//! F a primitive of 1/τ, exit time, Jacobian and the damping integral.
//!
//! All primitives are closed form for the analytic families; tabulated
//! coefficients fall back to adaptive quadrature per query.

use crate::coefficients::{CoefficientSet, FragmentationRate, GrowthRate, Mode};
use crate::error::{GfError, Result};
use crate::piecewise::PiecewiseIntegrand;

#[derive(Debug, Clone)]
pub struct Flow {
    tau: GrowthRate,
    inv_tau: PiecewiseIntegrand,
    b_over_tau: Option<(FragmentationRate, PiecewiseIntegrand)>,
    osgood: bool,
}

impl Flow {
    pub fn new(tau: &GrowthRate) -> Self {
        Flow {
            tau: tau.clone(),
            inv_tau: tau.segments().reciprocal(),
            b_over_tau: None,
            osgood: tau.mode() == Mode::Osgood,
        }
    }

    /// Flow with B/τ cached for repeated damping queries.
    pub fn for_coefficients(coeffs: &CoefficientSet) -> Self {
        let mut flow = Self::new(&coeffs.tau);
        flow.b_over_tau = Some((coeffs.b.clone(), coeffs.b_over_tau()));
        flow
    }

    pub fn tau(&self) -> &GrowthRate {
        &self.tau
    }

    pub fn is_osgood(&self) -> bool {
        self.osgood
    }

    /// F(x) = ∫₀ˣ dy/τ, or ∫₁ˣ dy/τ in Osgood mode.
    pub fn primitive(&self, x: f64) -> f64 {
        if self.osgood {
            self.inv_tau.integral(1.0, x)
        } else {
            self.inv_tau.integral(0.0, x)
        }
    }

    /// X(t, x).
    pub fn flow(&self, t: f64, x: f64) -> Result<f64> {
        if !(x >= 0.0) || !t.is_finite() {
            return Err(GfError::DomainError(format!("flow needs x ≥ 0 and finite t (t = {t}, x = {x})")));
        }
        if t == 0.0 {
            return Ok(x);
        }
        if x == 0.0 && self.osgood {
            return Ok(0.0);
        }
        self.inv_tau.advance(x, t).ok_or_else(|| {
            GfError::DomainError(format!(
                "X({t}, {x}) undefined: t is beyond the exit time {}",
                self.exit_time(x)
            ))
        })
    }

    /// X(−t, x), or `None` when the backward characteristic leaves through 0.
    pub fn backward(&self, t: f64, x: f64) -> Option<f64> {
        if t == 0.0 {
            return Some(x);
        }
        if x == 0.0 {
            return if self.osgood { Some(0.0) } else { None };
        }
        self.inv_tau.advance(x, -t)
    }

    /// t_*(x) = −F(x) in standard mode, −∞ in Osgood mode.
    pub fn exit_time(&self, x: f64) -> f64 {
        if self.osgood {
            f64::NEG_INFINITY
        } else {
            -self.inv_tau.integral(0.0, x)
        }
    }

    /// Time for a characteristic to travel from x to y (y ≥ x gives t ≥ 0).
    pub fn travel_time(&self, x: f64, y: f64) -> f64 {
        self.inv_tau.integral(x, y)
    }

    /// J(t,x) = τ(X(−t,x))/τ(x).
    pub fn jacobian(&self, t: f64, x: f64) -> Result<f64> {
        let y = self.flow(-t, x)?;
        Ok(self.tau.eval(y) / self.tau.eval(x))
    }

    /// λt + ∫_{X(−t,x)}^x B/τ.
    pub fn damping_integral(&self, b: &FragmentationRate, lambda: f64, t: f64, x: f64) -> Result<f64> {
        let y = self.flow(-t, x)?;
        Ok(lambda * t + self.hazard_between(b, y, x))
    }

    /// ∫_a^b B/τ.
    pub fn hazard_between(&self, b: &FragmentationRate, a: f64, x: f64) -> f64 {
        match &self.b_over_tau {
            Some((cached, g)) if cached == b => g.integral(a, x),
            _ => b.segments().product(&self.inv_tau).integral(a, x),
        }
    }

    pub(crate) fn has_hazard_for(&self, b: &FragmentationRate) -> bool {
        matches!(&self.b_over_tau, Some((cached, _)) if cached == b)
    }

    /// Cached ∫_a^b B/τ (requires [`Flow::for_coefficients`]).
    pub(crate) fn hazard(&self, a: f64, b: f64) -> f64 {
        self.cached_hazard().integral(a, b)
    }

    /// Size y with ∫_x^y B/τ = amount, `None` if the hazard never reaches it.
    pub(crate) fn hazard_advance(&self, x: f64, amount: f64) -> Option<f64> {
        self.cached_hazard().advance(x, amount)
    }

    fn cached_hazard(&self) -> &PiecewiseIntegrand {
        &self.b_over_tau.as_ref().expect("flow built without fragmentation rate").1
    }
}

/// Upper envelope (1+x)e^{τ₁t} − 1 of X(t,x) for t ≥ 0.
pub fn flow_upper_bound(tau1: f64, t: f64, x: f64) -> f64 {
    (1.0 + x) * (tau1 * t).exp() - 1.0
}
