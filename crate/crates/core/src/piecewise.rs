//! Piecewise integrands on (0, ∞) made of power laws `a·x^q` and, for
//! tabulated families, numerically integrated segments.
//!
//! Every primitive used by the toolkit (∫1/τ, ∫B/τ, ∫B) is built from this
//! representation so that analytic families integrate and invert in closed form.

use std::fmt;
use std::sync::Arc;

use crate::quadrature::integrate;

pub(crate) type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub(crate) enum Piece {
    Power { a: f64, q: f64 },
    Numeric(ScalarFn),
}

impl fmt::Debug for Piece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Piece::Power { a, q } => write!(f, "{a}·x^{q}"),
            Piece::Numeric(_) => write!(f, "numeric"),
        }
    }
}

impl Piece {
    fn eval(&self, x: f64) -> f64 {
        match self {
            Piece::Power { a, q } => {
                if *a == 0.0 {
                    0.0
                } else if *q == 0.0 {
                    *a
                } else {
                    a * x.powf(*q)
                }
            }
            Piece::Numeric(g) => g(x),
        }
    }

    /// Antiderivative of a power piece (anchored so that it vanishes at 0 when
    /// q > -1, and uses the logarithm when q = -1).
    fn power_primitive(a: f64, q: f64, x: f64) -> f64 {
        if a == 0.0 {
            return 0.0;
        }
        let e = q + 1.0;
        if e == 0.0 {
            a * x.ln()
        } else if e == 1.0 {
            a * x
        } else {
            a * x.powf(e) / e
        }
    }

    fn integral(&self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return 0.0;
        }
        match self {
            Piece::Power { a, q } => {
                if *a == 0.0 {
                    return 0.0;
                }
                if lo == 0.0 {
                    if *q <= -1.0 {
                        return f64::INFINITY;
                    }
                    return Self::power_primitive(*a, *q, hi);
                }
                if hi.is_infinite() {
                    if *q >= -1.0 {
                        return f64::INFINITY;
                    }
                    return -Self::power_primitive(*a, *q, lo);
                }
                let e = q + 1.0;
                if e == 0.0 {
                    a * (hi / lo).ln()
                } else if e == 1.0 {
                    a * (hi - lo)
                } else {
                    // relative form keeps precision when hi ≈ lo
                    a * lo.powf(e) * ((hi / lo).ln() * e).exp_m1() / e
                }
            }
            Piece::Numeric(g) => {
                if hi.is_infinite() {
                    // numeric pieces are only used for positive, non-decaying tails
                    return f64::INFINITY;
                }
                let g = g.clone();
                integrate(move |x| g(x), lo, hi, 1e-13, 1e-300, 4000).value
            }
        }
    }

    /// Solves ∫_{start}^{y} piece = amount for y (amount may be negative).
    fn invert(&self, start: f64, amount: f64, bound_lo: f64, bound_hi: f64) -> f64 {
        match self {
            Piece::Power { a, q } => {
                let e = q + 1.0;
                if e == 0.0 {
                    start * (amount / a).exp()
                } else if e == 1.0 {
                    start + amount / a
                } else {
                    // start^e + e·amount/a, computed relative to start^e
                    let base = start.powf(e);
                    let ratio = 1.0 + e * amount / (a * base);
                    if start == 0.0 {
                        (e * amount / a).powf(1.0 / e)
                    } else {
                        start * (ratio.ln() / e).exp()
                    }
                }
            }
            Piece::Numeric(_) => {
                // the primitive is nondecreasing: bisection inside [bound_lo, bound_hi]
                let phi = |y: f64| self.integral(start, y) - amount;
                let (mut a, mut b) = if amount > 0.0 {
                    let mut b = bound_hi;
                    if !b.is_finite() {
                        b = start.max(1.0) * 2.0;
                        while phi(b) < 0.0 {
                            b *= 2.0;
                        }
                    }
                    (start, b)
                } else {
                    (bound_lo, start)
                };
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if phi(m) < 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                    if b - a <= 4.0 * f64::EPSILON * b.abs() {
                        break;
                    }
                }
                0.5 * (a + b)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub piece: Piece,
}

/// Contiguous list of segments covering (0, ∞).
#[derive(Clone, Debug)]
pub(crate) struct PiecewiseIntegrand {
    segs: Vec<Segment>,
}

impl PiecewiseIntegrand {
    pub fn new(segs: Vec<Segment>) -> Self {
        debug_assert!(!segs.is_empty());
        debug_assert_eq!(segs[0].lo, 0.0);
        debug_assert!(segs.last().unwrap().hi.is_infinite());
        PiecewiseIntegrand { segs }
    }

    pub fn power(a: f64, q: f64) -> Self {
        Self::new(vec![Segment {
            lo: 0.0,
            hi: f64::INFINITY,
            piece: Piece::Power { a, q },
        }])
    }

    fn locate(&self, x: f64) -> usize {
        // segments are few; linear scan is fine
        self.segs
            .iter()
            .position(|s| x < s.hi)
            .unwrap_or(self.segs.len() - 1)
    }

    #[cfg(test)]
    pub fn eval(&self, x: f64) -> f64 {
        self.segs[self.locate(x)].piece.eval(x)
    }

    pub fn is_analytic(&self) -> bool {
        self.segs.iter().all(|s| matches!(s.piece, Piece::Power { .. }))
    }

    /// ∫_a^b g (signed).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        if a > b {
            return -self.integral(b, a);
        }
        let mut total = 0.0;
        for s in &self.segs {
            let lo = a.max(s.lo);
            let hi = b.min(s.hi);
            if lo < hi {
                total += s.piece.integral(lo, hi);
            }
        }
        total
    }

    #[cfg(test)]
    pub fn integrable_at_zero(&self) -> bool {
        let s = &self.segs[0];
        let probe = s.hi.min(1.0);
        match &s.piece {
            Piece::Power { a, q } => *a == 0.0 || *q > -1.0,
            Piece::Numeric(_) => self.integral(0.0, probe).is_finite(),
        }
    }

    /// Walks from `start` until the accumulated integral equals `amount`.
    /// Returns `None` when the walk would cross 0 (amount too negative) or
    /// never accumulates enough mass going upward.
    pub fn advance(&self, start: f64, amount: f64) -> Option<f64> {
        if amount == 0.0 {
            return Some(start);
        }
        let mut idx = self.locate(start);
        let mut pos = start;
        let mut remaining = amount;
        if amount > 0.0 {
            loop {
                let s = &self.segs[idx];
                let avail = s.piece.integral(pos, s.hi);
                if remaining <= avail {
                    let y = s.piece.invert(pos, remaining, pos, s.hi);
                    return Some(y.clamp(pos, s.hi));
                }
                remaining -= avail;
                idx += 1;
                if idx >= self.segs.len() {
                    return None;
                }
                pos = self.segs[idx].lo;
            }
        } else {
            loop {
                let s = &self.segs[idx];
                let lo = s.lo;
                let avail = s.piece.integral(lo, pos);
                if -remaining <= avail {
                    let y = s.piece.invert(pos, remaining, lo, pos);
                    return Some(y.clamp(lo, pos));
                }
                remaining += avail;
                if idx == 0 {
                    return None;
                }
                idx -= 1;
                pos = self.segs[idx].hi;
            }
        }
    }

    fn merged_breaks(&self, other: &Self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .segs
            .iter()
            .map(|s| s.lo)
            .chain(other.segs.iter().map(|s| s.lo))
            .collect();
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.dedup();
        b
    }

    /// Pointwise product of two piecewise integrands.
    pub fn product(&self, other: &Self) -> Self {
        let breaks = self.merged_breaks(other);
        let mut segs = Vec::with_capacity(breaks.len());
        for (k, &lo) in breaks.iter().enumerate() {
            let hi = breaks.get(k + 1).copied().unwrap_or(f64::INFINITY);
            let probe = if hi.is_finite() { 0.5 * (lo + hi) } else { lo + 1.0 };
            let p1 = self.segs[self.locate(probe)].piece.clone();
            let p2 = other.segs[other.locate(probe)].piece.clone();
            let piece = match (&p1, &p2) {
                (Piece::Power { a: a1, q: q1 }, Piece::Power { a: a2, q: q2 }) => Piece::Power {
                    a: a1 * a2,
                    q: q1 + q2,
                },
                _ => Piece::Numeric(Arc::new(move |x| p1.eval(x) * p2.eval(x))),
            };
            segs.push(Segment { lo, hi, piece });
        }
        Self::new(segs)
    }

    /// Pointwise reciprocal (assumes the integrand is positive).
    pub fn reciprocal(&self) -> Self {
        let segs = self
            .segs
            .iter()
            .map(|s| Segment {
                lo: s.lo,
                hi: s.hi,
                piece: match &s.piece {
                    Piece::Power { a, q } => Piece::Power { a: 1.0 / a, q: -q },
                    Piece::Numeric(g) => {
                        let g = g.clone();
                        Piece::Numeric(Arc::new(move |x| 1.0 / g(x)))
                    }
                },
            })
            .collect();
        Self::new(segs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_integrals() {
        let g = PiecewiseIntegrand::power(2.0, 1.0);
        assert!((g.integral(1.0, 2.0) - 3.0).abs() < 1e-14);
        let h = PiecewiseIntegrand::power(1.0, -1.0);
        assert!((h.integral(1.0, std::f64::consts::E) - 1.0).abs() < 1e-14);
        assert!(!h.integrable_at_zero());
        assert!(g.integrable_at_zero());
    }

    #[test]
    fn advance_inverts_integral() {
        let g = PiecewiseIntegrand::new(vec![
            Segment { lo: 0.0, hi: 1.0, piece: Piece::Power { a: 1.0, q: 0.0 } },
            Segment { lo: 1.0, hi: f64::INFINITY, piece: Piece::Power { a: 1.0, q: -1.0 } },
        ]);
        for &(x, t) in &[(0.5, 0.3), (0.5, 2.0), (3.0, -1.5), (3.0, -2.0), (0.2, 0.1)] {
            let y = g.advance(x, t).unwrap();
            assert!((g.integral(x, y) - t).abs() < 1e-13, "x={x} t={t} y={y}");
        }
        // crossing zero
        assert!(g.advance(0.5, -0.6).is_none());
    }

    #[test]
    fn numeric_piece_matches_power() {
        let f: ScalarFn = Arc::new(|x: f64| 1.0 + x);
        let g = PiecewiseIntegrand::new(vec![Segment {
            lo: 0.0,
            hi: f64::INFINITY,
            piece: Piece::Numeric(f),
        }]);
        assert!((g.integral(0.0, 2.0) - 4.0).abs() < 1e-12);
        let y = g.advance(0.0, 4.0).unwrap();
        assert!((y - 2.0).abs() < 1e-10);
        let y = g.advance(2.0, -4.0).unwrap();
        assert!(y.abs() < 1e-10);
    }

    #[test]
    fn products_merge_breaks() {
        let a = PiecewiseIntegrand::new(vec![
            Segment { lo: 0.0, hi: 1.0, piece: Piece::Power { a: 1.0, q: 0.0 } },
            Segment { lo: 1.0, hi: f64::INFINITY, piece: Piece::Power { a: 1.0, q: 1.0 } },
        ]);
        let b = PiecewiseIntegrand::power(2.0, 1.0).reciprocal();
        let p = a.product(&b);
        assert!((p.eval(0.5) - 1.0).abs() < 1e-15);
        assert!((p.eval(4.0) - 0.5).abs() < 1e-15);
    }
}
