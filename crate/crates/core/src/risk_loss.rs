//! Loss functions `L(xi, z)` whose minimal expectation over `xi` recovers a
//! risk measure, together with their partial derivatives and the outer
//! function `g` linking `min_xi E[L]` to the risk `r`.
//!
//! Two families are covered:
//!
//! * Expected Shortfall at level `alpha` (Rockafellar-Uryasev loss
//!   `xi + (z - xi)+ / (1 - alpha)`, with `g = Id`);
//! * the deviation family `(a (z - xi)+ + b (z - xi)-)^p` with `g(x) = x^p`,
//!   which contains volatility, MAD and square-rooted variantiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which risk measure is being budgeted, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    #[serde(rename = "es")]
    ExpectedShortfall { alpha: f64 },
    Deviation { a: f64, b: f64, p: u32 },
}

/// Outer function `g` with `g(r(y)) = min_xi E[L(xi, -<y, X>)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OuterFn {
    Identity,
    Power(u32),
}

impl OuterFn {
    pub fn value(self, r: f64) -> f64 {
        match self {
            OuterFn::Identity => r,
            OuterFn::Power(p) => r.powi(p as i32),
        }
    }

    pub fn derivative(self, r: f64) -> f64 {
        match self {
            OuterFn::Identity => 1.0,
            OuterFn::Power(1) => 1.0,
            OuterFn::Power(p) => p as f64 * r.powi(p as i32 - 1),
        }
    }

    /// Inverse of `g` on the nonnegative half-line.
    pub fn inverse(self, v: f64) -> f64 {
        match self {
            OuterFn::Identity | OuterFn::Power(1) => v,
            OuterFn::Power(2) => v.sqrt(),
            OuterFn::Power(p) => v.powf(1.0 / p as f64),
        }
    }
}

impl MeasureSpec {
    pub fn expected_shortfall(alpha: f64) -> Self {
        MeasureSpec::ExpectedShortfall { alpha }
    }

    pub fn deviation(a: f64, b: f64, p: u32) -> Self {
        MeasureSpec::Deviation { a, b, p }
    }

    /// Standard deviation.
    pub fn volatility() -> Self {
        Self::deviation(1.0, 1.0, 2)
    }

    /// Mean absolute deviation around the median.
    pub fn mad() -> Self {
        Self::deviation(1.0, 1.0, 1)
    }

    /// Square root of the variantile at level `alpha`.
    pub fn variantile(alpha: f64) -> Self {
        Self::deviation(alpha.sqrt(), (1.0 - alpha).sqrt(), 2)
    }

    pub fn is_volatility(&self) -> bool {
        matches!(*self, MeasureSpec::Deviation { a, b, p: 2 } if a == 1.0 && b == 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MeasureSpec::ExpectedShortfall { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::Domain(format!(
                        "ES confidence level must lie in (0, 1), got {alpha}"
                    )));
                }
            }
            MeasureSpec::Deviation { a, b, p } => {
                if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
                    return Err(Error::Domain(format!(
                        "deviation weights must be positive, got a = {a}, b = {b}"
                    )));
                }
                // general real p >= 1 would need fractional partial moments of the loss law
                if !(p == 1 || p == 2) {
                    return Err(Error::Domain(format!(
                        "deviation exponent must be 1 or 2, got {p}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn outer(&self) -> OuterFn {
        match *self {
            MeasureSpec::ExpectedShortfall { .. } => OuterFn::Identity,
            MeasureSpec::Deviation { p, .. } => OuterFn::Power(p),
        }
    }

    /// `L(xi, z)`. No input checking; see [`loss_value`] for the checked form.
    #[inline]
    pub fn loss(&self, xi: f64, z: f64) -> f64 {
        match *self {
            MeasureSpec::ExpectedShortfall { alpha } => xi + (z - xi).max(0.0) / (1.0 - alpha),
            MeasureSpec::Deviation { a, b, p } => {
                let d = z - xi;
                if d > 0.0 {
                    (a * d).powi(p as i32)
                } else {
                    (-b * d).powi(p as i32)
                }
            }
        }
    }

    /// `dL/dxi`. The ES indicator is strict at the kink; the deviation family
    /// uses `(z - xi)+^0 = 1{z >= xi}` and `(z - xi)-^0 = 1{z <= xi}`.
    #[inline]
    pub fn loss_grad_xi(&self, xi: f64, z: f64) -> f64 {
        match *self {
            MeasureSpec::ExpectedShortfall { alpha } => {
                if z > xi {
                    1.0 - 1.0 / (1.0 - alpha)
                } else {
                    1.0
                }
            }
            MeasureSpec::Deviation { a, b, p } => {
                let d = z - xi;
                match p {
                    1 => {
                        let up = if d >= 0.0 { a } else { 0.0 };
                        let down = if d <= 0.0 { b } else { 0.0 };
                        down - up
                    }
                    _ => {
                        let pf = p as f64;
                        let e = p as i32 - 1;
                        let up = if d > 0.0 { a.powi(p as i32) * d.powi(e) } else { 0.0 };
                        let down = if d < 0.0 { b.powi(p as i32) * (-d).powi(e) } else { 0.0 };
                        pf * (down - up)
                    }
                }
            }
        }
    }

    /// `dL/dz`; equals `-dL/dxi` for the deviation family.
    #[inline]
    pub fn loss_grad_z(&self, xi: f64, z: f64) -> f64 {
        match *self {
            MeasureSpec::ExpectedShortfall { alpha } => {
                if z > xi {
                    1.0 / (1.0 - alpha)
                } else {
                    0.0
                }
            }
            MeasureSpec::Deviation { .. } => -self.loss_grad_xi(xi, z),
        }
    }
}

fn check_finite(xi: f64, z: f64) -> Result<()> {
    if xi.is_finite() && z.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite loss arguments xi = {xi}, z = {z}")))
    }
}

pub fn loss_value(spec: &MeasureSpec, xi: f64, z: f64) -> Result<f64> {
    spec.validate()?;
    check_finite(xi, z)?;
    Ok(spec.loss(xi, z))
}

pub fn loss_grad_xi(spec: &MeasureSpec, xi: f64, z: f64) -> Result<f64> {
    spec.validate()?;
    check_finite(xi, z)?;
    Ok(spec.loss_grad_xi(xi, z))
}

pub fn loss_grad_z(spec: &MeasureSpec, xi: f64, z: f64) -> Result<f64> {
    spec.validate()?;
    check_finite(xi, z)?;
    Ok(spec.loss_grad_z(xi, z))
}

/// Recovers the risk from a minimal expected loss `v = min_xi E[L]`.
pub fn rho_from_expected_loss(spec: &MeasureSpec, v: f64) -> Result<f64> {
    spec.validate()?;
    match *spec {
        MeasureSpec::ExpectedShortfall { .. } => Ok(v),
        MeasureSpec::Deviation { .. } => {
            if !(v >= 0.0) {
                return Err(Error::Domain(format!(
                    "expected deviation loss must be nonnegative, got {v}"
                )));
            }
            Ok(spec.outer().inverse(v))
        }
    }
}
