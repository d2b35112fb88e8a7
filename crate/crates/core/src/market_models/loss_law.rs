//! Univariate law of the portfolio loss `Z = -<w, X>`.
//!
//! A linear image of an elliptical mixture is a location-scale mixture of the
//! standardized radial laws, so VaR, ES and the partial moments used by the
//! deviation family all reduce to one-dimensional closed forms.

use super::{MixtureModel, StdLaw};
use crate::error::{Error, Result};
use crate::risk_loss::MeasureSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponent {
    pub loc: f64,
    pub scale: f64,
    pub law: StdLaw,
}

impl LossComponent {
    #[inline]
    fn standardize(&self, x: f64) -> f64 {
        (x - self.loc) / self.scale
    }

    /// `E[(Z - xi)+^order]` for order 0, 1 or 2 (order 0 is `P(Z > xi)`).
    fn upper_partial(&self, xi: f64, order: u32) -> f64 {
        let t = self.standardize(xi);
        let law = self.law;
        match order {
            0 => law.sf(t),
            1 => self.scale * (law.upper_first_moment(t) - t * law.sf(t)),
            _ => {
                self.scale
                    * self.scale
                    * (law.upper_second_moment(t) - 2.0 * t * law.upper_first_moment(t)
                        + t * t * law.sf(t))
            }
        }
    }

    /// `E[(Z - xi)-^order]`, through the reflection `T -> -T`.
    fn lower_partial(&self, xi: f64, order: u32) -> f64 {
        let reflected = LossComponent {
            loc: -self.loc,
            ..*self
        };
        reflected.upper_partial(-xi, order)
    }
}

/// `Z ~ weight * (loc1 + scale1 T1) + (1 - weight) * (loc2 + scale2 T2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossLawParams {
    pub weight: f64,
    pub first: LossComponent,
    pub second: LossComponent,
}

impl LossLawParams {
    pub fn single(loc: f64, scale: f64, law: StdLaw) -> Self {
        let c = LossComponent { loc, scale, law };
        LossLawParams {
            weight: 1.0,
            first: c,
            second: c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(Error::Domain(format!("mixture weight {} outside (0, 1]", self.weight)));
        }
        for (_, c) in self.parts() {
            if !(c.scale > 0.0 && c.scale.is_finite() && c.loc.is_finite()) {
                return Err(Error::DegenerateLaw);
            }
            c.law.validate()?;
        }
        Ok(())
    }

    /// Components with positive probability.
    pub fn parts(&self) -> impl Iterator<Item = (f64, &LossComponent)> {
        let second = (self.weight < 1.0).then_some((1.0 - self.weight, &self.second));
        std::iter::once((self.weight, &self.first)).chain(second)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.parts().map(|(p, c)| p * c.law.cdf(c.standardize(x))).sum()
    }

    pub fn sf(&self, x: f64) -> f64 {
        self.parts().map(|(p, c)| p * c.law.sf(c.standardize(x))).sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.parts()
            .map(|(p, c)| p * c.law.pdf(c.standardize(x)) / c.scale)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.parts().map(|(p, c)| p * c.loc).sum()
    }

    pub fn max_scale(&self) -> f64 {
        self.parts().map(|(_, c)| c.scale).fold(0.0, f64::max)
    }

    /// Smallest `x` with `cdf(x) >= level`: geometric bracket expansion around
    /// the mean followed by bisection.
    pub fn quantile(&self, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {level}")));
        }
        let center = self.mean();
        let mut width = 10.0 * self.max_scale();
        let mut lo = center - width;
        let mut expansions = 0;
        while self.cdf(lo) >= level {
            expansions += 1;
            if expansions > 200 {
                return Err(Error::Numeric(format!("no lower bracket for level {level}")));
            }
            width *= 2.0;
            lo = center - width;
        }
        let mut width = 10.0 * self.max_scale();
        let mut hi = center + width;
        expansions = 0;
        while self.cdf(hi) < level {
            expansions += 1;
            if expansions > 200 {
                return Err(Error::Numeric(format!("no upper bracket for level {level}")));
            }
            width *= 2.0;
            hi = center + width;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    /// `E[Z 1{Z >= q}]`.
    fn upper_tail_mean(&self, q: f64) -> f64 {
        self.parts()
            .map(|(p, c)| {
                let t = c.standardize(q);
                p * (c.loc * c.law.sf(t) + c.scale * c.law.upper_first_moment(t))
            })
            .sum()
    }

    /// Tail expectation `E[Z | Z >= q]` at `q = VaR_alpha`, written as the
    /// average over the upper `1 - alpha` probability mass.
    pub fn expected_shortfall(&self, alpha: f64) -> Result<f64> {
        for (_, c) in self.parts() {
            if c.law.nu() <= 1.0 {
                return Err(Error::Undefined {
                    what: "expected shortfall",
                    nu: c.law.nu(),
                    floor: 1.0,
                });
            }
        }
        let q = self.quantile(alpha)?;
        Ok(self.upper_tail_mean(q) / (1.0 - alpha))
    }

    /// `E[L(xi, Z)]` for a deviation-family loss.
    pub fn expected_deviation_loss(&self, a: f64, b: f64, p: u32, xi: f64) -> f64 {
        let ap = a.powi(p as i32);
        let bp = b.powi(p as i32);
        self.parts()
            .map(|(w, c)| w * (ap * c.upper_partial(xi, p) + bp * c.lower_partial(xi, p)))
            .sum()
    }

    /// `d/dxi E[L(xi, Z)]` for a deviation-family loss; nondecreasing in `xi`.
    pub fn deviation_loss_slope(&self, a: f64, b: f64, p: u32, xi: f64) -> f64 {
        let spec = MeasureSpec::Deviation { a, b, p };
        let m = self.loss_gradient_moments(&spec, xi);
        let mut expected_h = self.weight * m[0].0;
        if self.weight < 1.0 {
            expected_h += (1.0 - self.weight) * m[1].0;
        }
        -expected_h
    }

    /// Minimizes the convex map `xi -> E[L(xi, Z)]` of the deviation family by
    /// bisection on its closed-form slope, starting from `[q_0.001, q_0.999]`.
    /// Returns `(xi*, min E[L])`.
    pub fn minimize_deviation_loss(&self, a: f64, b: f64, p: u32) -> Result<(f64, f64)> {
        let slope = |xi: f64| self.deviation_loss_slope(a, b, p, xi);
        let mut lo = self.quantile(0.001)?;
        let mut hi = self.quantile(0.999)?;
        let mut width = hi - lo;
        let mut expansions = 0;
        while slope(lo) > 0.0 || slope(hi) < 0.0 {
            expansions += 1;
            if expansions > 200 {
                return Err(Error::Numeric("no bracket for the deviation minimizer".into()));
            }
            width *= 2.0;
            if slope(lo) > 0.0 {
                lo -= width;
            }
            if slope(hi) < 0.0 {
                hi += width;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let xi = 0.5 * (lo + hi);
        Ok((xi, self.expected_deviation_loss(a, b, p, xi)))
    }

    /// Per-component `(E_c[h(Z)], E_c[(Z - loc_c) h(Z)])` with
    /// `h = dL/dz (xi, .)`. These feed the envelope-theorem gradient of
    /// `y -> E[L(xi, -<y, X>)]` for elliptical components.
    pub fn loss_gradient_moments(&self, spec: &MeasureSpec, xi: f64) -> [(f64, f64); 2] {
        let moments = |c: &LossComponent| -> (f64, f64) {
            let t = c.standardize(xi);
            let law = c.law;
            let s = c.scale;
            match *spec {
                MeasureSpec::ExpectedShortfall { alpha } => {
                    let k = 1.0 / (1.0 - alpha);
                    (k * law.sf(t), k * s * law.upper_first_moment(t))
                }
                MeasureSpec::Deviation { a, b, p: 1 } => (
                    a * law.sf(t) - b * law.cdf(t),
                    s * (a + b) * law.upper_first_moment(t),
                ),
                MeasureSpec::Deviation { a, b, .. } => {
                    let up = c.upper_partial(xi, 1);
                    let down = c.lower_partial(xi, 1);
                    let u1 = law.upper_first_moment(t);
                    let u2 = law.upper_second_moment(t);
                    let v = law.variance().unwrap_or(f64::INFINITY);
                    let above = u2 - t * u1;
                    (
                        2.0 * (a * a * up - b * b * down),
                        2.0 * s * s * (a * a * above - b * b * (above - v)),
                    )
                }
            }
        };
        [moments(&self.first), moments(&self.second)]
    }
}

/// Loss law of the portfolio `w`: `loc_i = -<w, mu_i>`, `scale_i = sqrt(w^T Lambda_i w)`.
pub fn portfolio_loss_params(model: &MixtureModel, w: &[f64]) -> Result<LossLawParams> {
    crate::error::check_dim(model.dim(), w.len())?;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite portfolio weights".into()));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateLaw);
    }
    let comp = |c: &super::Component| -> Result<LossComponent> {
        let loc = -c.mu.iter().zip(w).map(|(m, x)| m * x).sum::<f64>();
        let mut quad = 0.0;
        for (i, wi) in w.iter().enumerate() {
            let mut row = 0.0;
            for (j, wj) in w.iter().enumerate() {
                row += c.lambda[(i, j)] * wj;
            }
            quad += wi * row;
        }
        if !(quad > 0.0) {
            return Err(Error::DegenerateLaw);
        }
        Ok(LossComponent {
            loc,
            scale: quad.sqrt(),
            law: c.law,
        })
    };
    Ok(LossLawParams {
        weight: model.weight,
        first: comp(&model.first)?,
        second: comp(&model.second)?,
    })
}

pub fn mixture_cdf(params: &LossLawParams, x: f64) -> f64 {
    params.cdf(x)
}

pub fn var_exact(params: &LossLawParams, alpha: f64) -> Result<f64> {
    params.validate()?;
    params.quantile(alpha)
}

pub fn es_exact(params: &LossLawParams, alpha: f64) -> Result<f64> {
    params.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("ES level must lie in (0, 1), got {alpha}")));
    }
    params.expected_shortfall(alpha)
}
