//! SCAD and MC+ penalties with their proximal maps.
//!
//! Both are folded-concave: linear with slope `lambda` at the origin, bending down until
//! `|t| = nu * lambda`, flat afterwards. The proximal maps solve
//! `argmin_b  weight/2 (u - b)^2 + p(|b|)` exactly by comparing the candidate minimizers of
//! each quadratic piece, which stays correct even when `weight` is too small for the
//! one-dimensional problem to be convex.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyFamily {
    Scad,
    Mcp,
}

impl PenaltyFamily {
    pub fn default_nu(self) -> f64 {
        match self {
            PenaltyFamily::Scad => 3.7,
            PenaltyFamily::Mcp => 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    family: PenaltyFamily,
    lambda: f64,
    nu: f64,
}

impl PenaltySpec {
    pub fn new(family: PenaltyFamily, lambda: f64, nu: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidPenalty(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        let ok = match family {
            PenaltyFamily::Scad => nu > 2.0,
            PenaltyFamily::Mcp => nu > 1.0,
        };
        if !ok || !nu.is_finite() {
            return Err(Error::InvalidPenalty(format!(
                "concavity {nu} not allowed for {family:?}"
            )));
        }
        Ok(Self { family, lambda, nu })
    }

    pub fn scad(lambda: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Scad, lambda, PenaltyFamily::Scad.default_nu())
    }

    pub fn mcp(lambda: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Mcp, lambda, PenaltyFamily::Mcp.default_nu())
    }

    pub fn family(&self) -> PenaltyFamily {
        self.family
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.family, lambda, self.nu)
    }

    /// `p_lambda(|t|)`.
    pub fn value(&self, t: f64) -> f64 {
        let (l, nu) = (self.lambda, self.nu);
        let t = t.abs();
        match self.family {
            PenaltyFamily::Scad => {
                if t <= l {
                    l * t
                } else if t <= nu * l {
                    (2.0 * nu * l * t - t * t - l * l) / (2.0 * (nu - 1.0))
                } else {
                    0.5 * l * l * (nu + 1.0)
                }
            }
            PenaltyFamily::Mcp => {
                if t <= nu * l {
                    l * t - t * t / (2.0 * nu)
                } else {
                    0.5 * nu * l * l
                }
            }
        }
    }

    /// Derivative of `p_lambda` at `t`, odd in `t`; at `t = 0` the right limit `lambda`.
    pub fn derivative(&self, t: f64) -> f64 {
        let (l, nu) = (self.lambda, self.nu);
        let a = t.abs();
        let sign = if t < 0.0 { -1.0 } else { 1.0 };
        let d = match self.family {
            PenaltyFamily::Scad => {
                if a <= l {
                    l
                } else if a < nu * l {
                    (nu * l - a) / (nu - 1.0)
                } else {
                    0.0
                }
            }
            PenaltyFamily::Mcp => {
                if a < nu * l {
                    l - a / nu
                } else {
                    0.0
                }
            }
        };
        sign * d
    }

    /// Second derivative of `p_lambda(|t|)` for `t != 0` (zero at the kinks by convention).
    pub fn second_derivative(&self, t: f64) -> f64 {
        let (l, nu) = (self.lambda, self.nu);
        let a = t.abs();
        match self.family {
            PenaltyFamily::Scad if a > l && a < nu * l => -1.0 / (nu - 1.0),
            PenaltyFamily::Mcp if a > 0.0 && a < nu * l => -1.0 / nu,
            _ => 0.0,
        }
    }

    /// Quadratic pieces `c1 t + c2 t^2` on `[lo, hi]` for `t >= 0` (constants dropped).
    fn pieces(&self) -> [(f64, f64, f64, f64); 3] {
        let (l, nu) = (self.lambda, self.nu);
        match self.family {
            PenaltyFamily::Scad => [
                (0.0, l, l, 0.0),
                (l, nu * l, nu * l / (nu - 1.0), -0.5 / (nu - 1.0)),
                (nu * l, f64::INFINITY, 0.0, 0.0),
            ],
            PenaltyFamily::Mcp => [
                (0.0, nu * l, l, -0.5 / nu),
                (nu * l, f64::INFINITY, 0.0, 0.0),
                (f64::INFINITY, f64::INFINITY, 0.0, 0.0),
            ],
        }
    }

    /// `argmin_b weight/2 (u - b)^2 + p_lambda(|b|)`.
    pub fn prox(&self, u: f64, weight: f64) -> f64 {
        debug_assert!(weight > 0.0);
        if self.lambda == 0.0 || u == 0.0 {
            return u;
        }
        let v = u.abs();
        let objective = |b: f64| 0.5 * weight * (b - v) * (b - v) + self.value(b);
        let mut best_b = 0.0;
        let mut best = objective(0.0);
        let mut consider = |b: f64| {
            let f = objective(b);
            if f < best {
                best = f;
                best_b = b;
            }
        };
        for (lo, hi, c1, c2) in self.pieces() {
            if !lo.is_finite() {
                continue;
            }
            let curvature = weight + 2.0 * c2;
            if curvature > 0.0 {
                let stationary = v - (c1 + 2.0 * c2 * v) / curvature;
                consider(stationary.clamp(lo, hi));
            } else {
                consider(lo);
                if hi.is_finite() {
                    consider(hi);
                }
            }
        }
        if u < 0.0 {
            -best_b
        } else {
            best_b
        }
    }

    /// `argmin_b weight/2 ||u - b||^2 + p_lambda(||b||)`: the scalar map applied to `||u||`
    /// along the direction of `u`.
    pub fn group_prox(&self, u: &[f64], weight: f64) -> Vec<f64> {
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return u.iter().map(|_| 0.0).collect();
        }
        let b = self.prox(norm, weight);
        if b == 0.0 {
            return u.iter().map(|_| 0.0).collect();
        }
        if b == norm {
            return u.to_vec();
        }
        let f = b / norm;
        u.iter().map(|v| v * f).collect()
    }

    /// Smallest `weight` for which the scalar proximal problem is strictly convex.
    pub fn convexity_weight(&self) -> f64 {
        match self.family {
            PenaltyFamily::Scad => 1.0 / (self.nu - 1.0),
            PenaltyFamily::Mcp => 1.0 / self.nu,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec;

    fn specs() -> [PenaltySpec; 2] {
        [PenaltySpec::scad(0.7).unwrap(), PenaltySpec::mcp(0.7).unwrap()]
    }

    #[test]
    fn rejects_bad_concavity() {
        assert!(PenaltySpec::new(PenaltyFamily::Scad, 1.0, 2.0).is_err());
        assert!(PenaltySpec::new(PenaltyFamily::Mcp, 1.0, 1.0).is_err());
        assert!(PenaltySpec::new(PenaltyFamily::Mcp, -1.0, 3.0).is_err());
        assert!(PenaltySpec::new(PenaltyFamily::Mcp, 1.0, 1.01).is_ok());
    }

    #[test]
    fn value_at_zero_and_flat_tail() {
        for s in specs() {
            assert_eq!(s.value(0.0), 0.0);
            let knot = s.nu() * s.lambda();
            assert!((s.value(knot) - s.value(2.0 * knot)).abs() < 1e-15);
            assert!((s.value(-knot) - s.value(knot)).abs() < 1e-15);
        }
    }

    #[test]
    fn slope_at_origin_is_lambda() {
        for s in specs() {
            let t = 1e-9;
            assert!((s.value(t) / t - s.lambda()).abs() < 1e-8);
            assert_eq!(s.derivative(0.0), s.lambda());
        }
    }

    #[test]
    fn derivative_zero_in_flat_region() {
        for s in specs() {
            let knot = s.nu() * s.lambda();
            assert_eq!(s.derivative(knot), 0.0);
            assert_eq!(s.derivative(-3.0 * knot), 0.0);
        }
    }

    #[test]
    fn derivative_matches_finite_difference_mid_transition() {
        for s in specs() {
            let l = s.lambda();
            let mid = match s.family() {
                PenaltyFamily::Scad => 0.5 * (l + s.nu() * l),
                PenaltyFamily::Mcp => 0.5 * s.nu() * l,
            };
            let h = 1e-6;
            let fd = (s.value(mid + h) - s.value(mid - h)) / (2.0 * h);
            assert!((fd - s.derivative(mid)).abs() < 1e-6, "{fd} vs {}", s.derivative(mid));
        }
    }

    #[test]
    fn prox_identities() {
        for s in specs() {
            let zero = s.with_lambda(0.0).unwrap();
            assert_eq!(zero.prox(-1.234, 1.0), -1.234);
            let knot = s.nu() * s.lambda();
            assert_eq!(s.prox(knot, 1.0), knot);
            assert_eq!(s.prox(-3.0 * knot, 1.0), -3.0 * knot);
            assert_eq!(s.prox(0.5 * s.lambda(), 1.0), 0.0);
        }
    }

    #[test]
    fn group_prox_identities() {
        for s in specs() {
            assert_eq!(s.group_prox(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
            let knot = s.nu() * s.lambda();
            let u = [knot * 0.6, knot * 0.8];
            assert_eq!(s.group_prox(&u, 1.0), u.to_vec());
            assert_eq!(s.group_prox(&[0.1, 0.1], 1.0), vec![0.0, 0.0]);
        }
    }
}
