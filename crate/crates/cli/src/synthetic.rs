//! Random two-regime Student-t mixtures standing in for fitted equity data.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rbmd_core::market_models::{Component, StdLaw};
use rbmd_core::{MixtureModel, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    /// Probability of the calm regime.
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default = "default_nu_calm")]
    pub nu_calm: f64,
    #[serde(default = "default_nu_stress")]
    pub nu_stress: f64,
}

fn default_weight() -> f64 {
    0.7
}

fn default_nu_calm() -> f64 {
    4.0
}

fn default_nu_stress() -> f64 {
    3.0
}

impl SyntheticSpec {
    pub fn new(d: usize, seed: u64) -> Self {
        SyntheticSpec {
            d,
            seed,
            weight: default_weight(),
            nu_calm: default_nu_calm(),
            nu_stress: default_nu_stress(),
        }
    }
}

/// Random correlation matrix: the normalized Gram matrix of rows made of a
/// market loading `beta_i sqrt(d)` and `d` independent normals.
pub fn random_correlation(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(d, d + 1);
    let scale = (d as f64).sqrt();
    for i in 0..d {
        a[(i, 0)] = rng.random_range(0.5..1.5) * scale;
        for j in 1..=d {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let gram = &a * a.transpose();
    let inv_sd = DVector::from_iterator(d, (0..d).map(|i| 1.0 / gram[(i, i)].sqrt()));
    let mut corr = DMatrix::from_fn(d, d, |i, j| {
        let (a, b) = (i.min(j), i.max(j));
        gram[(a, b)] * inv_sd[a] * inv_sd[b]
    });
    corr.fill_diagonal(1.0);
    corr
}

/// Calm regime: daily volatilities log-uniform on `[0.005, 0.05]`; stress
/// regime: doubled volatilities, correlations halfway to one, negative drift.
/// Scale matrices are set so each regime's covariance matches its target.
pub fn synthetic_model(spec: &SyntheticSpec) -> Result<MixtureModel> {
    if spec.d == 0 {
        return Err(rbmd_core::Error::Model("synthetic model needs d >= 1".into()));
    }
    for nu in [spec.nu_calm, spec.nu_stress] {
        if !(nu > 2.0) {
            return Err(rbmd_core::Error::Model(format!(
                "synthetic degrees of freedom must exceed 2, got {nu}"
            )));
        }
    }
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let corr = random_correlation(d, &mut rng);
    let (lo, hi) = (0.005f64.ln(), 0.05f64.ln());
    let vols: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi).exp()).collect();
    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();

    let cov_calm = DMatrix::from_fn(d, d, |i, j| corr[(i, j)] * vols[i] * vols[j]);
    let cov_stress = DMatrix::from_fn(d, d, |i, j| {
        let c = if i == j { 1.0 } else { 0.5 * corr[(i, j)] + 0.5 };
        4.0 * c * vols[i] * vols[j]
    });
    let mu_calm: Vec<f64> = (0..d).map(|i| vols[i] * (0.05 + 0.02 * z[i])).collect();
    let mu_stress: Vec<f64> = (0..d).map(|i| -vols[i] * (0.1 + 0.02 * z[i].abs())).collect();

    let calm = Component::new(
        mu_calm,
        cov_calm * ((spec.nu_calm - 2.0) / spec.nu_calm),
        StdLaw::StudentT { nu: spec.nu_calm },
    )?;
    let stress = Component::new(
        mu_stress,
        cov_stress * ((spec.nu_stress - 2.0) / spec.nu_stress),
        StdLaw::StudentT { nu: spec.nu_stress },
    )?;
    MixtureModel::new(spec.weight, calm, stress)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rbmd_core::market_models::covariance;

    #[test]
    fn correlation_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_correlation(25, &mut rng);
        assert!(c.clone().cholesky().is_some());
        for i in 0..25 {
            assert_eq!(c[(i, i)], 1.0);
            for j in 0..25 {
                assert!(c[(i, j)].abs() <= 1.0);
                assert_eq!(c[(i, j)], c[(j, i)]);
            }
        }
    }

    #[test]
    fn volatilities_in_range_and_seeded() {
        let spec = SyntheticSpec::new(50, 9);
        let a = synthetic_model(&spec).unwrap();
        let b = synthetic_model(&spec).unwrap();
        assert_eq!(a, b);
        let calm = &a.first;
        let cov = &calm.lambda * (spec.nu_calm / (spec.nu_calm - 2.0));
        for i in 0..50 {
            let s = cov[(i, i)].sqrt();
            assert!((0.005..=0.05).contains(&s), "{s}");
        }
        assert!(covariance(&a).is_ok());
        assert_ne!(a, synthetic_model(&SyntheticSpec::new(50, 10)).unwrap());
    }
}
