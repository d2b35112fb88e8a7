//! The risk-budgeting objective `Gamma_g`, its tamed gradient, and the
//! diagnostics used to judge solutions (risk contributions, MDE, KL
//! divergence, divergence flags).

mod objective;

pub use objective::{GradientMethod, ObjectiveContext};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mirror_descent::{dmd_run, initial_point, OptimizerConfig, StepSchedule};
use crate::risk_loss::{MeasureSpec, OuterFn};

/// Strictly positive risk budgets summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskBudget(Vec<f64>);

impl RiskBudget {
    /// Normalizes `b` to the simplex; every entry must be positive and finite.
    pub fn new(b: Vec<f64>) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::Domain("budget must have at least one entry".into()));
        }
        if b.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("budget entries must be positive and finite".into()));
        }
        let total: f64 = b.iter().sum();
        Ok(RiskBudget(b.into_iter().map(|v| v / total).collect()))
    }

    pub fn uniform(d: usize) -> Self {
        RiskBudget(vec![1.0 / d as f64; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::MIN, f64::max)
    }
}

/// A normalized portfolio with its risk decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioReport {
    pub weights: Vec<f64>,
    pub y_raw: Vec<f64>,
    pub contributions: Vec<f64>,
    pub risk: f64,
    /// VaR of the normalized portfolio (Expected Shortfall only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var: Option<f64>,
    /// `Gamma_g(y_raw)`, the minimal objective value.
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

pub fn gamma_value(ctx: &ObjectiveContext, y: &[f64]) -> Result<f64> {
    ctx.gamma_value(y)
}

pub fn gamma_gradient(ctx: &ObjectiveContext, y: &[f64]) -> Result<Vec<f64>> {
    ctx.gamma_gradient(y)
}

/// `kappa(y) * (grad_outer - b / y)` with `kappa(y) = min(min_i y_i, 1)`.
///
/// On the boundary of the orthant the continuous extension is used:
/// `-b_j` where `y_j = 0` and `0` elsewhere (`grad_outer` is ignored there).
pub fn tamed_gradient(budget: &RiskBudget, grad_outer: &[f64], y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(budget.dim(), y.len());
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return budget
            .iter()
            .zip(y)
            .map(|(b, &v)| if v <= 0.0 { -b } else { 0.0 })
            .collect();
    }
    let kappa = min.min(1.0);
    budget
        .iter()
        .zip(grad_outer)
        .zip(y)
        .map(|((b, g), v)| kappa * (g - b / v))
        .collect()
}

pub fn normalize(y: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = y.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Domain(format!("cannot normalize a vector with sum {total}")));
    }
    Ok(y.iter().map(|v| v / total).collect())
}

/// Risk contributions `u_i d_i r(u)` and the total risk `r(u)`.
pub fn risk_contributions(ctx: &ObjectiveContext, u: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_dim(ctx.dim(), u.len())?;
    if u.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("risk contributions need an interior portfolio".into()));
    }
    let r = ctx.risk(u)?;
    let grad = ctx.risk_gradient(u)?;
    Ok((u.iter().zip(&grad).map(|(w, g)| w * g).collect(), r))
}

/// Mean deviation error `(1/d) sum_i |u_i - u_ref_i|`.
pub fn mde(u: &[f64], u_ref: &[f64]) -> Result<f64> {
    check_dim(u_ref.len(), u.len())?;
    if u.is_empty() {
        return Err(Error::Domain("empty portfolio".into()));
    }
    Ok(u.iter().zip(u_ref).map(|(a, b)| (a - b).abs()).sum::<f64>() / u.len() as f64)
}

/// Bregman divergence of the negative entropy,
/// `sum_i y_i log(y_i / y'_i) - sum_i y_i + sum_i y'_i`, with `0 log 0 = 0`.
pub fn kl_divergence(y: &[f64], y_prime: &[f64]) -> Result<f64> {
    check_dim(y.len(), y_prime.len())?;
    if y_prime.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("second KL argument must be strictly positive".into()));
    }
    if y.iter().any(|v| *v < 0.0) {
        return Err(Error::Domain("first KL argument must be nonnegative".into()));
    }
    Ok(y.iter()
        .zip(y_prime)
        .map(|(&a, &b)| {
            let entropy = if a == 0.0 { 0.0 } else { a * (a / b).ln() };
            entropy - a + b
        })
        .sum())
}

/// Rescales the positive `direction` by `c > 0` so that
/// `g'(r(c d)) r(c d) = sum_i b_i = 1`, an identity satisfied by `y*`.
/// The result has the order of magnitude of `y*`.
pub fn risk_scaled_point(ctx: &ObjectiveContext, direction: &[f64]) -> Result<Vec<f64>> {
    check_dim(ctx.dim(), direction.len())?;
    let r = ctx.risk(direction)?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("risk of the direction must be positive, got {r}")));
    }
    let c = match ctx.outer {
        OuterFn::Identity => 1.0 / r,
        OuterFn::Power(p) => (1.0 / p as f64).powf(1.0 / p as f64) / r,
    };
    Ok(direction.iter().map(|v| c * v).collect())
}

/// A run is flagged diverged when its objective gap exceeds `epsilon` or is
/// not finite.
pub fn divergence_flag(gap: f64, epsilon: f64) -> bool {
    !gap.is_finite() || gap > epsilon
}

/// Reference solution by deterministic mirror descent with `gamma = 1` and
/// `m = 100 d`, falling back to `gamma_n = n^-0.55` from the last iterate if
/// the constant step stalls.
pub fn reference_portfolio(ctx: &ObjectiveContext, tol: f64) -> Result<PortfolioReport> {
    const MAX_ITER: usize = 100_000;
    let d = ctx.dim();
    let m = 100.0 * d as f64;
    let mut cfg = OptimizerConfig::new(m, StepSchedule::constant(1.0), MAX_ITER, initial_point(&ctx.model, m))?;
    cfg.tolerance = Some(tol);
    cfg.record_every = MAX_ITER;
    let mut run = dmd_run(ctx, &cfg)?;
    let mut iterations = run.iterations;
    if !run.converged {
        cfg.schedule = StepSchedule::power_law(1.0, 0.55);
        cfg.y0 = run.y_final.clone();
        run = dmd_run(ctx, &cfg)?;
        iterations += run.iterations;
    }
    if !run.converged {
        return Err(Error::NoConvergence {
            iterations,
            grad_norm: run.final_grad_norm,
        });
    }
    report_at(ctx, &run.y_final, run.final_grad_norm, iterations)
}

/// Builds the report for an unnormalized solution `y`.
pub fn report_at(
    ctx: &ObjectiveContext,
    y: &[f64],
    gradient_norm: f64,
    iterations: usize,
) -> Result<PortfolioReport> {
    let weights = normalize(y)?;
    let (contributions, risk) = risk_contributions(ctx, &weights)?;
    let var = match ctx.measure {
        MeasureSpec::ExpectedShortfall { .. } => Some(ctx.inner_minimizer(&weights)?),
        MeasureSpec::Deviation { .. } => None,
    };
    Ok(PortfolioReport {
        weights,
        y_raw: y.to_vec(),
        contributions,
        risk,
        var,
        objective: ctx.gamma_value(y)?,
        gradient_norm,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_models::{Component, MixtureModel, StdLaw};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn vol_ctx(cov: DMatrix<f64>) -> ObjectiveContext {
        let d = cov.nrows();
        let model = MixtureModel::single(Component::new(vec![0.0; d], cov, StdLaw::Gaussian).unwrap());
        ObjectiveContext::new(RiskBudget::uniform(d), MeasureSpec::volatility(), model).unwrap()
    }

    #[test]
    fn budget_is_normalized() {
        let b = RiskBudget::new(vec![1.0, 1.0, 2.0]).unwrap();
        assert_eq!(b.as_slice(), &[0.25, 0.25, 0.5]);
        assert!(RiskBudget::new(vec![1.0, -0.1]).is_err());
        assert!(RiskBudget::new(vec![]).is_err());
    }

    #[test]
    fn volatility_gamma_examples() {
        let ctx = vol_ctx(DMatrix::identity(3, 3));
        // g = x^2 so g(r) = y^T y = 3; the log term vanishes at y = 1
        assert!((ctx.gamma_value(&[1.0; 3]).unwrap() - 3.0).abs() < 1e-15);
        assert!((ctx.risk(&[1.0; 3]).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        let g = ctx.gamma_gradient(&[1.0; 3]).unwrap();
        for gi in g {
            assert!((gi - (2.0 - 1.0 / 3.0)).abs() < 1e-15);
        }
        let halved = ctx.gamma_value(&[0.5, 1.0, 1.0]).unwrap() - ctx.outer_value(&[0.5, 1.0, 1.0]).unwrap();
        let base = ctx.gamma_value(&[1.0; 3]).unwrap() - ctx.outer_value(&[1.0; 3]).unwrap();
        assert!((halved - base - 2f64.ln() / 3.0).abs() < 1e-15);
        assert!(ctx.gamma_value(&[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn tamed_gradient_examples() {
        let b = RiskBudget::uniform(3);
        let t = tamed_gradient(&b, &[5.0, 5.0, 5.0], &[0.0, 1.0, 2.0]);
        assert_eq!(t, vec![-1.0 / 3.0, 0.0, 0.0]);
        let b2 = RiskBudget::uniform(2);
        let g = [0.7, -0.2];
        let raw: Vec<f64> = [(0.7, 0.5), (-0.2, 2.0)].iter().map(|(g, y)| g - 0.5 / y).collect();
        let t = tamed_gradient(&b2, &g, &[0.5, 2.0]);
        assert!((t[0] - 0.5 * raw[0]).abs() < 1e-15 && (t[1] - 0.5 * raw[1]).abs() < 1e-15);
        let raw: Vec<f64> = [(0.7, 3.0), (-0.2, 4.0)].iter().map(|(g, y)| g - 0.5 / y).collect();
        assert_eq!(tamed_gradient(&b2, &g, &[3.0, 4.0]), raw);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 3.0, 5.0]).unwrap(), vec![0.2, 0.3, 0.5]);
        let u = [0.25, 0.25, 0.5];
        assert_eq!(normalize(&u).unwrap(), u.to_vec());
        assert_eq!(normalize(&[20.0, 30.0, 50.0]).unwrap(), vec![0.2, 0.3, 0.5]);
        assert!(normalize(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn mde_examples() {
        assert_eq!(mde(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(mde(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        let e = mde(&[0.2537, 0.3877, 0.3586], &[0.2535, 0.3866, 0.3599]).unwrap();
        assert!((e - 0.0026 / 3.0).abs() < 1e-12);
        assert!(mde(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(kl_divergence(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(kl_divergence(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn divergence_flag_examples() {
        assert!(!divergence_flag(0.04, 5e-2));
        assert!(divergence_flag(f64::INFINITY, 50.0));
        assert!(divergence_flag(f64::NAN, 50.0));
        let gaps = [0.01, 0.1, 1.0, 10.0, 100.0];
        let counts: Vec<usize> = [5e-2, 5e-1, 5.0, 50.0]
            .iter()
            .map(|&eps| gaps.iter().filter(|&&g| divergence_flag(g, eps)).count())
            .collect();
        assert_eq!(counts, vec![4, 3, 2, 1]);
    }

    #[test]
    fn volatility_contributions_are_symmetric() {
        let ctx = vol_ctx(DMatrix::identity(3, 3));
        let (c, r) = risk_contributions(&ctx, &[1.0 / 3.0; 3]).unwrap();
        assert!((c[0] - c[1]).abs() < 1e-15 && (c[1] - c[2]).abs() < 1e-15);
        assert!((c.iter().sum::<f64>() - r).abs() < 1e-15);
        assert!(risk_contributions(&ctx, &[0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn two_asset_volatility_reference() {
        // first-order conditions give u_i proportional to 1 / sigma_i for any correlation
        for rho in [-0.6, 0.0, 0.3, 0.9] {
            let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0 * rho, 2.0 * rho, 4.0]);
            let rep = reference_portfolio(&vol_ctx(cov), 1e-12).unwrap();
            assert!((rep.weights[0] - 2.0 / 3.0).abs() < 1e-9, "{rho} {:?}", rep.weights);
        }
    }

    #[test]
    fn exchangeable_reference_is_uniform() {
        let mut cov = DMatrix::from_element(4, 4, 0.3);
        cov.fill_diagonal(1.0);
        let rep = reference_portfolio(&vol_ctx(cov), 1e-12).unwrap();
        for w in rep.weights {
            assert!((w - 0.25).abs() < 1e-10);
        }
    }

    #[test]
    fn risk_scaled_point_satisfies_identity() {
        let model = crate::market_models::MixtureModel::three_asset_example();
        for measure in [MeasureSpec::expected_shortfall(0.95), MeasureSpec::volatility(), MeasureSpec::mad()] {
            let ctx = ObjectiveContext::new(RiskBudget::uniform(3), measure, model.clone()).unwrap();
            let y = risk_scaled_point(&ctx, &[1.0, 2.0, 3.0]).unwrap();
            let r = ctx.risk(&y).unwrap();
            assert!((ctx.outer.derivative(r) * r - 1.0).abs() < 1e-12);
            let star = reference_portfolio(&ctx, 1e-12).unwrap();
            let r = ctx.risk(&star.y_raw).unwrap();
            assert!((ctx.outer.derivative(r) * r - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn kl_is_nonnegative(y in proptest::collection::vec(0.0f64..10.0, 4),
                             yp in proptest::collection::vec(0.01f64..10.0, 4)) {
            prop_assert!(kl_divergence(&y, &yp).unwrap() >= -1e-12);
        }
    }
}
