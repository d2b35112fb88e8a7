use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{Component, MixtureModel, StdLaw};
use crate::error::{Error, Result};
use crate::parallel::{for_each_chunk_mut, Parallelism};

/// Rows drawn by one ChaCha stream; chunk `k` of a matrix seeded with `s`
/// uses stream `k` of the generator keyed by `s`.
const CHUNK_ROWS: usize = 4096;

/// Dense row-major `rows x cols` matrix of return draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(SampleMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, x) in m.iter_mut().zip(self.row(i)) {
                *acc += x;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.rows as f64);
        m
    }

    /// Headerless CSV, one draw per line, 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(input: R) -> Result<Self> {
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for line in input.lines() {
            let line = line.map_err(|e| Error::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for field in line.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad sample value {field:?}")))?;
                data.push(v);
            }
            let n = data.len() - before;
            match cols {
                None => cols = Some(n),
                Some(c) if c != n => return Err(Error::Dimension { expected: c, got: n }),
                _ => {}
            }
            rows += 1;
        }
        SampleMatrix::from_vec(rows, cols.unwrap_or(0), data)
    }
}

struct ComponentSampler<'a> {
    component: &'a Component,
    chi2: Option<Gamma<f64>>,
}

impl<'a> ComponentSampler<'a> {
    fn new(component: &'a Component) -> Result<Self> {
        let chi2 = match component.law {
            StdLaw::StudentT { nu } => Some(
                Gamma::new(0.5 * nu, 2.0).map_err(|e| Error::Model(format!("chi-square law: {e}")))?,
            ),
            StdLaw::Gaussian => None,
        };
        Ok(ComponentSampler { component, chi2 })
    }

    /// `mu + L g * sqrt(nu / chi2_nu)` with `g` standard normal.
    fn draw<R: Rng>(&self, rng: &mut R, normals: &mut [f64], out: &mut [f64]) {
        for g in normals.iter_mut() {
            *g = StandardNormal.sample(rng);
        }
        let radial = match (&self.chi2, self.component.law) {
            (Some(chi2), StdLaw::StudentT { nu }) => (nu / chi2.sample(rng)).sqrt(),
            _ => 1.0,
        };
        let l = self.component.cholesky_factor();
        for (i, x) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, g) in normals.iter().enumerate().take(i + 1) {
                acc += l[(i, j)] * g;
            }
            *x = self.component.mu[i] + acc * radial;
        }
    }
}

/// `n` i.i.d. draws of `X`, reproducible from `seed` regardless of threading.
pub fn sample_returns(model: &MixtureModel, n: usize, seed: u64) -> Result<SampleMatrix> {
    sample_returns_with(model, n, seed, Parallelism::default())
}

pub fn sample_returns_with(
    model: &MixtureModel,
    n: usize,
    seed: u64,
    par: Parallelism,
) -> Result<SampleMatrix> {
    if n == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    let d = model.dim();
    let first = ComponentSampler::new(&model.first)?;
    let second = ComponentSampler::new(&model.second)?;
    let mut data = vec![0.0; n * d];
    for_each_chunk_mut(&mut data, CHUNK_ROWS * d, par, |chunk, block| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk as u64);
        let mut normals = vec![0.0; d];
        for row in block.chunks_mut(d) {
            let u: f64 = rng.random();
            let sampler = if u < model.weight { &first } else { &second };
            sampler.draw(&mut rng, &mut normals, row);
        }
    });
    SampleMatrix::from_vec(n, d, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn gaussian3() -> MixtureModel {
        MixtureModel::single(Component::new(vec![0.0; 3], DMatrix::identity(3, 3), StdLaw::Gaussian).unwrap())
    }

    #[test]
    fn same_seed_same_matrix() {
        let m = MixtureModel::three_asset_example();
        let a = sample_returns(&m, 1000, 7).unwrap();
        let b = sample_returns(&m, 1000, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_returns(&m, 1000, 8).unwrap());
    }

    #[test]
    fn threading_does_not_change_draws() {
        let m = MixtureModel::three_asset_example();
        let a = sample_returns_with(&m, 20_000, 3, Parallelism::Sequential).unwrap();
        let b = sample_returns_with(&m, 20_000, 3, Parallelism::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_means_within_clt_bound() {
        let n = 1_000_000;
        let s = sample_returns(&gaussian3(), n, 11).unwrap();
        for m in s.column_means() {
            assert!(m.abs() <= 4.0 / (n as f64).sqrt(), "{m}");
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let s = sample_returns(&MixtureModel::three_asset_example(), 50, 1).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = SampleMatrix::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn zero_rows_rejected() {
        assert!(sample_returns(&gaussian3(), 0, 1).is_err());
    }
}
