use nalgebra::{DMatrix, DVector};

use super::RiskBudget;
use crate::error::{check_dim, Error, Result};
use crate::market_models::{covariance, portfolio_loss_params, LossLawParams, MixtureModel};
use crate::risk_loss::{MeasureSpec, OuterFn};

/// How `grad (g o r)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMethod {
    /// Closed forms: `2 Sigma y` for volatility, envelope-theorem tail and
    /// partial moments of the elliptical components otherwise.
    #[default]
    Analytic,
    /// Central differences of the semi-analytic `g(r(y))` with step
    /// `1e-6 * max(1, y_i)`.
    FiniteDifference,
}

/// Everything needed to evaluate `Gamma_g(y) = g(r(y)) - sum_i b_i log y_i`.
#[derive(Debug, Clone)]
pub struct ObjectiveContext {
    pub budget: RiskBudget,
    pub measure: MeasureSpec,
    pub model: MixtureModel,
    pub outer: OuterFn,
    pub gradient: GradientMethod,
    cov: Option<DMatrix<f64>>,
}

/// `g(r(y))` together with the inner minimizer `xi*(y)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct OuterEval {
    pub value: f64,
    pub xi: f64,
    pub law: Option<LossLawParams>,
}

impl ObjectiveContext {
    pub fn new(budget: RiskBudget, measure: MeasureSpec, model: MixtureModel) -> Result<Self> {
        measure.validate()?;
        check_dim(model.dim(), budget.dim())?;
        let mut cov = None;
        match measure {
            MeasureSpec::Deviation { p: 2, .. } => {
                for (_, c) in model.components() {
                    if c.law.variance().is_none() {
                        return Err(Error::Undefined {
                            what: "quadratic deviation",
                            nu: c.law.nu(),
                            floor: 2.0,
                        });
                    }
                }
                if measure.is_volatility() {
                    cov = Some(covariance(&model)?);
                }
            }
            _ => {}
        }
        Ok(ObjectiveContext {
            budget,
            measure,
            model,
            outer: measure.outer(),
            gradient: GradientMethod::Analytic,
            cov,
        })
    }

    pub fn with_gradient(mut self, method: GradientMethod) -> Self {
        self.gradient = method;
        self
    }

    pub fn dim(&self) -> usize {
        self.budget.dim()
    }

    fn check_point(&self, y: &[f64]) -> Result<()> {
        check_dim(self.dim(), y.len())?;
        if y.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("objective requires a strictly positive finite point".into()));
        }
        Ok(())
    }

    pub(crate) fn outer_eval(&self, y: &[f64]) -> Result<OuterEval> {
        if let Some(cov) = &self.cov {
            let v = DVector::from_column_slice(y);
            let quad = v.dot(&(cov * &v));
            return Ok(OuterEval {
                value: quad,
                xi: -v.dot(&self.model.mean()),
                law: None,
            });
        }
        let law = portfolio_loss_params(&self.model, y)?;
        match self.measure {
            MeasureSpec::ExpectedShortfall { alpha } => {
                let q = law.quantile(alpha)?;
                let es = law.expected_shortfall(alpha)?;
                Ok(OuterEval {
                    value: es,
                    xi: q,
                    law: Some(law),
                })
            }
            MeasureSpec::Deviation { a, b, p } => {
                let (xi, v) = law.minimize_deviation_loss(a, b, p)?;
                Ok(OuterEval {
                    value: v,
                    xi,
                    law: Some(law),
                })
            }
        }
    }

    /// `g(r(y)) = min_xi E[L(xi, -<y, X>)]`.
    pub fn outer_value(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), y.len())?;
        Ok(self.outer_eval(y)?.value)
    }

    /// `r(y)`.
    pub fn risk(&self, y: &[f64]) -> Result<f64> {
        Ok(self.outer.inverse(self.outer_value(y)?))
    }

    /// Inner minimizer `xi*(y)`: VaR for ES, the optimal shift for deviations.
    pub fn inner_minimizer(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), y.len())?;
        Ok(self.outer_eval(y)?.xi)
    }

    /// `grad (g o r)(y)` by the configured method.
    pub fn outer_gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(y)?;
        match self.gradient {
            GradientMethod::Analytic => self.outer_gradient_analytic(y),
            GradientMethod::FiniteDifference => self.outer_gradient_fd(y),
        }
    }

    fn outer_gradient_analytic(&self, y: &[f64]) -> Result<Vec<f64>> {
        if let Some(cov) = &self.cov {
            let v = DVector::from_column_slice(y);
            return Ok((cov * v * 2.0).iter().copied().collect());
        }
        let eval = self.outer_eval(y)?;
        let law = eval.law.expect("loss law present outside the covariance path");
        let moments = law.loss_gradient_moments(&self.measure, eval.xi);
        let v = DVector::from_column_slice(y);
        let mut grad = vec![0.0; y.len()];
        // E[X_i h(Z)] = mu_i E[h] - (Lambda y)_i / s^2 E[(Z - loc) h] per component
        let parts = [
            (law.weight, &self.model.first, &law.first, moments[0]),
            (1.0 - law.weight, &self.model.second, &law.second, moments[1]),
        ];
        for (p, comp, lc, (eh, ezh)) in parts {
            if p <= 0.0 {
                continue;
            }
            let ly = &comp.lambda * &v;
            let s2 = lc.scale * lc.scale;
            for (i, g) in grad.iter_mut().enumerate() {
                *g -= p * (comp.mu[i] * eh - ly[i] / s2 * ezh);
            }
        }
        Ok(grad)
    }

    fn outer_gradient_fd(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut probe = y.to_vec();
        let mut grad = vec![0.0; y.len()];
        for i in 0..y.len() {
            let h = 1e-6 * y[i].max(1.0);
            probe[i] = y[i] + h;
            let up = self.outer_value(&probe)?;
            probe[i] = y[i] - h;
            let down = self.outer_value(&probe)?;
            probe[i] = y[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        Ok(grad)
    }

    /// `grad r(y) = grad (g o r)(y) / g'(r(y))`.
    pub fn risk_gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        let r = self.risk(y)?;
        let gp = self.outer.derivative(r);
        Ok(self.outer_gradient(y)?.into_iter().map(|g| g / gp).collect())
    }

    pub fn gamma_value(&self, y: &[f64]) -> Result<f64> {
        self.check_point(y)?;
        let log_term: f64 = self.budget.iter().zip(y).map(|(b, v)| b * v.ln()).sum();
        Ok(self.outer_value(y)? - log_term)
    }

    pub fn gamma_gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.outer_gradient(y)?;
        for ((gi, b), v) in g.iter_mut().zip(self.budget.iter()).zip(y) {
            *gi -= b / v;
        }
        Ok(g)
    }

    /// Tamed gradient `kappa(y) grad Gamma_g(y)`, extended to the boundary.
    pub fn tamed_gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), y.len())?;
        if y.iter().any(|&v| v <= 0.0) {
            return Ok(super::tamed_gradient(&self.budget, &vec![0.0; y.len()], y));
        }
        let outer = self.outer_gradient(y)?;
        Ok(super::tamed_gradient(&self.budget, &outer, y))
    }
}
