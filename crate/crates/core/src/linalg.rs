//! Dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{BanditError, Result};

const JITTER_ATTEMPTS: usize = 3;
const JITTER_GROWTH: f64 = 10.0;
const JITTER_BASE: f64 = 1e-10;

/// Cholesky factor of a symmetric positive-definite matrix.
///
/// On failure a diagonal jitter of `1e-10 * trace / d` is added and the
/// factorization retried, growing the jitter tenfold for up to three attempts.
pub fn spd_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let d = m.nrows().max(1) as f64;
    let scale = (m.trace().abs() / d).max(f64::MIN_POSITIVE);
    let mut jitter = JITTER_BASE * scale;
    for _ in 0..JITTER_ATTEMPTS {
        let mut jittered = m.clone();
        for i in 0..m.nrows() {
            jittered[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Ok(c);
        }
        jitter *= JITTER_GROWTH;
    }
    Err(BanditError::Numerical(format!("matrix of order {} is not positive definite after jitter", m.nrows())))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `x' m x`.
pub fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for j in 0..n {
        let col = m.column(j);
        let mut s = 0.0;
        for i in 0..n {
            s += x[i] * col[i];
        }
        acc += s * x[j];
    }
    acc
}

pub fn dot(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// A Gaussian with a precomputed lower-triangular factor, so repeated draws
/// cost one triangular product each.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: Option<DMatrix<f64>>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, covariance: &DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(BanditError::Shape { expected: mean.len(), got: covariance.nrows() });
        }
        // A PSD matrix with zero trace is the zero matrix.
        let factor = if covariance.trace() <= 0.0 { None } else { Some(spd_cholesky(covariance)?.l()) };
        Ok(Self { mean, factor })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + scale * L z` with `z` standard normal.
    pub fn draw<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> DVector<f64> {
        let mut out = self.mean.clone();
        let Some(l) = &self.factor else {
            return out;
        };
        if scale == 0.0 {
            return out;
        }
        let d = self.mean.len();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            let mut s = 0.0;
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                s += l[(i, j)] * zj;
            }
            out[i] += scale * s;
        }
        out
    }
}

/// One draw from `N(mean, covariance)`.
pub fn draw_multivariate_normal<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(GaussianSampler::new(mean.clone(), covariance)?.draw(1.0, rng))
}
