use nalgebra::DMatrix;
use rbmd_core::market_models::{covariance, sample_returns, sample_returns_with, Component, StdLaw};
use rbmd_core::{MixtureModel, Parallelism};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn sequential_and_parallel_draws_agree() {
    let model = MixtureModel::three_asset_example();
    let a = sample_returns_with(&model, 30_000, 42, Parallelism::Sequential).unwrap();
    let b = sample_returns_with(&model, 30_000, 42, Parallelism::Parallel).unwrap();
    assert_eq!(a, b);
    let c = sample_returns(&model, 30_000, 43).unwrap();
    assert_ne!(a, c);
}

#[test]
fn mixture_marginals_pass_ks() {
    let model = MixtureModel::three_asset_example();
    let n = 100_000;
    let x = sample_returns(&model, n, 3).unwrap();
    let comps: Vec<(f64, &Component)> = model.components().collect();
    for i in 0..3 {
        let laws: Vec<(f64, StudentsT)> = comps
            .iter()
            .map(|(p, c)| {
                let nu = c.law.nu();
                (*p, StudentsT::new(c.mu[i], c.lambda[(i, i)].sqrt(), nu).unwrap())
            })
            .collect();
        let col: Vec<f64> = (0..n).map(|r| x.row(r)[i]).collect();
        let d = ks_statistic(col, |t| laws.iter().map(|(p, l)| p * l.cdf(t)).sum());
        // 0.1% critical value of the one-sample KS statistic
        assert!(d < 1.95 / (n as f64).sqrt(), "asset {i}: D = {d}");
    }
}

#[test]
fn gaussian_marginal_passes_ks() {
    let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 1.0]);
    let model = MixtureModel::single(Component::new(vec![1.0, -1.0], cov, StdLaw::Gaussian).unwrap());
    let n = 100_000;
    let x = sample_returns(&model, n, 8).unwrap();
    let col: Vec<f64> = (0..n).map(|r| x.row(r)[0]).collect();
    let normal = Normal::new(1.0, 2.0).unwrap();
    let d = ks_statistic(col, |t| normal.cdf(t));
    assert!(d < 1.95 / (n as f64).sqrt(), "D = {d}");
}

#[test]
fn sample_moments_match_exact() {
    let lambda = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -0.3, 0.5, 1.0, 0.2, -0.3, 0.2, 0.5]);
    let first = Component::new(vec![0.1, 0.0, -0.2], lambda.clone(), StdLaw::StudentT { nu: 7.0 }).unwrap();
    let second = Component::new(vec![-0.3, 0.4, 0.0], lambda * 2.0, StdLaw::StudentT { nu: 6.0 }).unwrap();
    let model = MixtureModel::new(0.6, first, second).unwrap();
    let n = 1_000_000;
    let x = sample_returns(&model, n, 21).unwrap();
    let exact = covariance(&model).unwrap();
    let mean = model.mean();
    let mc_mean = x.column_means();
    for i in 0..3 {
        let se = (exact[(i, i)] / n as f64).sqrt();
        assert!((mc_mean[i] - mean[i]).abs() < 5.0 * se, "mean {i}");
    }
    let mut mc_cov = DMatrix::zeros(3, 3);
    for r in 0..n {
        let row = x.row(r);
        for i in 0..3 {
            for j in 0..3 {
                mc_cov[(i, j)] += (row[i] - mc_mean[i]) * (row[j] - mc_mean[j]);
            }
        }
    }
    mc_cov /= (n - 1) as f64;
    for i in 0..3 {
        for j in 0..3 {
            let scale = (exact[(i, i)] * exact[(j, j)]).sqrt();
            assert!((mc_cov[(i, j)] - exact[(i, j)]).abs() < 0.02 * scale, "cov ({i},{j})");
        }
    }
}
