//! Two-component multivariate Student-t mixture for asset returns, its
//! degenerations (single component, Gaussian components), exact sampling and
//! the univariate law of a portfolio loss `Z = -<w, X>`.

mod loss_law;
mod sampling;
mod std_law;

pub use loss_law::{
    es_exact, mixture_cdf, portfolio_loss_params, var_exact, LossComponent, LossLawParams,
};
pub use sampling::{sample_returns, sample_returns_with, SampleMatrix};
pub use std_law::StdLaw;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One elliptical component: location `mu`, scale matrix `lambda` and a
/// standardized radial law (Student-t with `nu` degrees of freedom or Gaussian).
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub mu: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub law: StdLaw,
    chol: DMatrix<f64>,
}

impl Component {
    pub fn new(mu: Vec<f64>, lambda: DMatrix<f64>, law: StdLaw) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::Model("empty location vector".into()));
        }
        if lambda.nrows() != d || lambda.ncols() != d {
            return Err(Error::Model(format!(
                "scale matrix is {}x{}, expected {d}x{d}",
                lambda.nrows(),
                lambda.ncols()
            )));
        }
        if mu.iter().chain(lambda.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite model parameter".into()));
        }
        let max_abs = lambda.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if (&lambda - lambda.transpose()).iter().any(|v| v.abs() > 1e-12 * max_abs) {
            return Err(Error::Model("scale matrix is not symmetric".into()));
        }
        law.validate()?;
        let chol = lambda
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Model("scale matrix is not positive definite".into()))?
            .l();
        Ok(Component {
            mu: DVector::from_vec(mu),
            lambda,
            law,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Marginal variances `v lambda_ii`; `None` when the law has no variance.
    pub fn variances(&self) -> Option<Vec<f64>> {
        let v = self.law.variance()?;
        Some(self.lambda.diagonal().iter().map(|l| v * l).collect())
    }

    /// Lower Cholesky factor of the scale matrix.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }
}

/// `X ~ weight * t(mu1, lambda1, nu1) + (1 - weight) * t(mu2, lambda2, nu2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub weight: f64,
    pub first: Component,
    pub second: Component,
}

impl MixtureModel {
    pub fn new(weight: f64, first: Component, second: Component) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::Model(format!("mixture weight must lie in (0, 1], got {weight}")));
        }
        if first.dim() != second.dim() {
            return Err(Error::Model(format!(
                "component dimensions differ: {} vs {}",
                first.dim(),
                second.dim()
            )));
        }
        Ok(MixtureModel {
            weight,
            first,
            second,
        })
    }

    /// A single elliptical law.
    pub fn single(component: Component) -> Self {
        MixtureModel {
            weight: 1.0,
            second: component.clone(),
            first: component,
        }
    }

    /// Three-asset mixture (daily returns of a bank, a pharmaceutical and an
    /// oil major) used throughout the examples and acceptance tests.
    pub fn three_asset_example() -> Self {
        let first = Component::new(
            vec![0.0001, 0.0002, -0.0003],
            DMatrix::from_row_slice(
                3,
                3,
                &[9e-5, 3e-5, 5e-5, 3e-5, 9e-5, 3e-5, 5e-5, 3e-5, 1e-4],
            ),
            StdLaw::StudentT { nu: 3.4 },
        )
        .expect("valid built-in component");
        let second = Component::new(
            vec![0.001, 0.0005, 0.0002],
            DMatrix::from_row_slice(
                3,
                3,
                &[4e-4, 1e-4, 1e-4, 1e-4, 1e-4, 6e-5, 1e-4, 6e-5, 1e-4],
            ),
            StdLaw::StudentT { nu: 2.6 },
        )
        .expect("valid built-in component");
        MixtureModel::new(0.7, first, second).expect("valid built-in model")
    }

    pub fn dim(&self) -> usize {
        self.first.dim()
    }

    /// Components paired with their mixture probabilities; a zero-probability
    /// second component is omitted.
    pub fn components(&self) -> impl Iterator<Item = (f64, &Component)> {
        let second = (self.weight < 1.0).then_some((1.0 - self.weight, &self.second));
        std::iter::once((self.weight, &self.first)).chain(second)
    }

    pub fn mean(&self) -> DVector<f64> {
        self.components()
            .fold(DVector::zeros(self.dim()), |acc, (p, c)| acc + &c.mu * p)
    }

    /// Per-asset standard deviations of the model.
    pub fn volatilities(&self) -> Result<Vec<f64>> {
        let cov = covariance(self)?;
        Ok(cov.diagonal().iter().map(|v| v.sqrt()).collect())
    }

    /// Same model with returns multiplied by `lambda > 0`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        let scale = |c: &Component| {
            Component::new(
                (&c.mu * lambda).iter().copied().collect(),
                &c.lambda * (lambda * lambda),
                c.law,
            )
        };
        MixtureModel::new(self.weight, scale(&self.first)?, scale(&self.second)?)
    }

    pub fn from_file_repr(file: &ModelFile) -> Result<Self> {
        let first = component_from_parts(&file.mu1, &file.lambda1, file.nu1, file.gaussian1, "1")?;
        let second = match (&file.mu2, &file.lambda2) {
            (Some(mu), Some(lambda)) => {
                component_from_parts(mu, lambda, file.nu2, file.gaussian2, "2")?
            }
            (None, None) if file.weight == 1.0 => first.clone(),
            _ => {
                return Err(Error::Model(
                    "mu2 and lambda2 are required unless weight = 1".into(),
                ))
            }
        };
        MixtureModel::new(file.weight, first, second)
    }

    pub fn to_file_repr(&self) -> ModelFile {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        let nu = |c: &Component| match c.law {
            StdLaw::StudentT { nu } => Some(nu),
            StdLaw::Gaussian => None,
        };
        ModelFile {
            weight: self.weight,
            mu1: self.first.mu.iter().copied().collect(),
            lambda1: rows(&self.first.lambda),
            nu1: nu(&self.first),
            gaussian1: self.first.law == StdLaw::Gaussian,
            mu2: Some(self.second.mu.iter().copied().collect()),
            lambda2: Some(rows(&self.second.lambda)),
            nu2: nu(&self.second),
            gaussian2: self.second.law == StdLaw::Gaussian,
        }
    }
}

fn component_from_parts(
    mu: &[f64],
    lambda: &[Vec<f64>],
    nu: Option<f64>,
    gaussian: bool,
    tag: &str,
) -> Result<Component> {
    let d = mu.len();
    if lambda.len() != d || lambda.iter().any(|r| r.len() != d) {
        return Err(Error::Model(format!("lambda{tag} must be a {d}x{d} matrix")));
    }
    let flat: Vec<f64> = lambda.iter().flatten().copied().collect();
    let law = if gaussian {
        StdLaw::Gaussian
    } else {
        let nu = nu.ok_or_else(|| Error::Model(format!("nu{tag} is required")))?;
        StdLaw::StudentT { nu }
    };
    Component::new(mu.to_vec(), DMatrix::from_row_slice(d, d, &flat), law)
}

/// On-disk model description. Matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub weight: f64,
    pub mu1: Vec<f64>,
    pub lambda1: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu1: Option<f64>,
    #[serde(default)]
    pub gaussian1: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu2: Option<f64>,
    #[serde(default)]
    pub gaussian2: bool,
}

/// Exact covariance `sum_i p_i (v_i Lambda_i + mu_i mu_i^T) - mean mean^T`,
/// with `v_i = nu_i / (nu_i - 2)` (or 1 for Gaussian components).
pub fn covariance(model: &MixtureModel) -> Result<DMatrix<f64>> {
    let d = model.dim();
    let mean = model.mean();
    let mut second = DMatrix::zeros(d, d);
    for (p, c) in model.components() {
        let v = c.law.variance().ok_or(Error::Undefined {
            what: "covariance",
            nu: c.law.nu(),
            floor: 2.0,
        })?;
        second += (&c.lambda * v + &c.mu * c.mu.transpose()) * p;
    }
    Ok(second - &mean * mean.transpose())
}
