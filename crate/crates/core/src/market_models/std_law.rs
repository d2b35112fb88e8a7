use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Standardized (location 0, scale 1) univariate law of an elliptical
/// component projected on a direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StdLaw {
    StudentT { nu: f64 },
    Gaussian,
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl StdLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StdLaw::StudentT { nu } if !(nu > 1.0 && nu.is_finite()) => Err(Error::Model(format!(
                "degrees of freedom must exceed 1, got {nu}"
            ))),
            _ => Ok(()),
        }
    }

    /// Degrees of freedom, `+inf` for the Gaussian law.
    pub fn nu(&self) -> f64 {
        match *self {
            StdLaw::StudentT { nu } => nu,
            StdLaw::Gaussian => f64::INFINITY,
        }
    }

    /// `Var[T]`, or `None` when infinite.
    pub fn variance(&self) -> Option<f64> {
        match *self {
            StdLaw::StudentT { nu } if nu > 2.0 => Some(nu / (nu - 2.0)),
            StdLaw::StudentT { .. } => None,
            StdLaw::Gaussian => Some(1.0),
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match *self {
            StdLaw::StudentT { nu } => t_pdf(nu, t),
            StdLaw::Gaussian => FRAC_1_SQRT_2PI * (-0.5 * t * t).exp(),
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match *self {
            StdLaw::StudentT { nu } => {
                let tail = t_lower_tail(nu, -t.abs());
                if t <= 0.0 {
                    tail
                } else {
                    1.0 - tail
                }
            }
            StdLaw::Gaussian => 0.5 * erfc(-t / std::f64::consts::SQRT_2),
        }
    }

    /// Survival function `P(T > t)`, accurate in the upper tail.
    pub fn sf(&self, t: f64) -> f64 {
        self.cdf(-t)
    }

    /// `E[T 1{T >= k}]`.
    pub fn upper_first_moment(&self, k: f64) -> f64 {
        match *self {
            StdLaw::StudentT { nu } => t_pdf(nu, k) * (nu + k * k) / (nu - 1.0),
            StdLaw::Gaussian => self.pdf(k),
        }
    }

    /// `E[T^2 1{T >= k}]`; infinite when the variance is.
    pub fn upper_second_moment(&self, k: f64) -> f64 {
        match *self {
            StdLaw::StudentT { nu } if nu > 2.0 => {
                let shifted = StdLaw::StudentT { nu: nu - 2.0 };
                k * t_pdf(nu, k) * (nu + k * k) / (nu - 1.0)
                    + nu / (nu - 2.0) * shifted.sf(k * ((nu - 2.0) / nu).sqrt())
            }
            StdLaw::StudentT { .. } => f64::INFINITY,
            StdLaw::Gaussian => k * self.pdf(k) + self.sf(k),
        }
    }
}

fn t_pdf(nu: f64, t: f64) -> f64 {
    let log_norm = ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln();
    (log_norm - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p()).exp()
}

/// `P(T <= t)` for `t <= 0`.
fn t_lower_tail(nu: f64, t: f64) -> f64 {
    let x = t * t / (nu + t * t);
    if x < 0.5 {
        0.5 - 0.5 * beta_reg(0.5, 0.5 * nu, x)
    } else {
        0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + t * t))
    }
}
