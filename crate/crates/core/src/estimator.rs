//! Closed-form weighted ridge regression for per-arm linear reward models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, BanditError, Result};
use crate::linalg::{quad_form, spd_cholesky, symmetrize};

/// Residual scale used for the covariance of an arm with no observations.
pub const EMPTY_HISTORY_SCALE: f64 = 1.0;

/// Contexts, rewards and balancing weights observed for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmHistory {
    arm: usize,
    dim: usize,
    /// Row-major `len x dim`.
    contexts: Vec<f64>,
    rewards: Vec<f64>,
    weights: Vec<f64>,
    norm_bound: Option<f64>,
}

impl ArmHistory {
    pub fn new(arm: usize, dim: usize) -> Self {
        Self { arm, dim, contexts: Vec::new(), rewards: Vec::new(), weights: Vec::new(), norm_bound: None }
    }

    /// Rejects contexts whose Euclidean norm exceeds `bound`.
    pub fn with_norm_bound(mut self, bound: f64) -> Self {
        self.norm_bound = Some(bound);
        self
    }

    pub fn from_rows(arm: usize, dim: usize, rows: &[Vec<f64>], rewards: &[f64]) -> Result<Self> {
        check_dim(rows.len(), rewards.len())?;
        let mut h = Self::new(arm, dim);
        for (x, r) in rows.iter().zip(rewards) {
            h.push(x, *r)?;
        }
        Ok(h)
    }

    pub fn arm(&self) -> usize {
        self.arm
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, x: &[f64], reward: f64) -> Result<()> {
        self.push_weighted(x, reward, 1.0)
    }

    pub fn push_weighted(&mut self, x: &[f64], reward: f64, weight: f64) -> Result<()> {
        check_dim(self.dim, x.len())?;
        check_weight(weight)?;
        if let Some(bound) = self.norm_bound {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > bound {
                return Err(BanditError::Parameter(format!("context norm {norm} exceeds bound {bound}")));
            }
        }
        self.contexts.extend_from_slice(x);
        self.rewards.push(reward);
        self.weights.push(weight);
        Ok(())
    }

    pub fn context(&self, i: usize) -> &[f64] {
        &self.contexts[i * self.dim..(i + 1) * self.dim]
    }

    pub fn contexts(&self) -> impl Iterator<Item = &[f64]> {
        self.contexts.chunks_exact(self.dim.max(1)).take(self.len())
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        check_dim(self.len(), weights.len())?;
        for w in &weights {
            check_weight(*w)?;
        }
        self.weights = weights;
        Ok(())
    }

    pub fn set_weight(&mut self, i: usize, weight: f64) -> Result<()> {
        check_weight(weight)?;
        self.weights[i] = weight;
        Ok(())
    }

    /// `len x dim` design matrix.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.contexts)
    }

    /// Weighted sufficient statistics, with each row's weight further
    /// multiplied by `multiplicity[i]` when given.
    pub fn stats(&self, multiplicity: Option<&[f64]>) -> SufficientStats {
        let d = self.dim;
        let rows: Vec<(usize, f64)> = (0..self.len())
            .map(|i| (i, self.weights[i] * multiplicity.map_or(1.0, |m| m[i])))
            .filter(|(_, w)| *w != 0.0)
            .collect();
        let mut scaled = DMatrix::<f64>::zeros(rows.len(), d);
        let mut xtwr = DVector::<f64>::zeros(d);
        let mut rtwr = 0.0;
        let mut total = 0.0;
        for (k, &(i, w)) in rows.iter().enumerate() {
            let sw = w.sqrt();
            let r = self.rewards[i];
            let x = self.context(i);
            for j in 0..d {
                scaled[(k, j)] = sw * x[j];
                xtwr[j] += w * x[j] * r;
            }
            rtwr += w * r * r;
            total += w;
        }
        let xtwx = scaled.transpose() * &scaled;
        SufficientStats { xtwx, xtwr, rtwr, total_weight: total }
    }
}

fn check_weight(w: f64) -> Result<()> {
    if w.is_finite() && w > 0.0 {
        Ok(())
    } else {
        Err(BanditError::Parameter(format!("weight must be positive, got {w}")))
    }
}

/// `X'WX`, `X'Wr`, `r'Wr` of a weighted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub xtwx: DMatrix<f64>,
    pub xtwr: DVector<f64>,
    pub rtwr: f64,
    pub total_weight: f64,
}

impl SufficientStats {
    pub fn zeros(d: usize) -> Self {
        Self { xtwx: DMatrix::zeros(d, d), xtwr: DVector::zeros(d), rtwr: 0.0, total_weight: 0.0 }
    }

    pub fn add_row(&mut self, x: &[f64], r: f64, w: f64) {
        let d = x.len();
        for j in 0..d {
            let wx = w * x[j];
            self.xtwr[j] += wx * r;
            for k in 0..d {
                self.xtwx[(k, j)] += wx * x[k];
            }
        }
        self.rtwr += w * r * r;
        self.total_weight += w;
    }

    pub fn minus(&self, other: &Self) -> Self {
        Self {
            xtwx: &self.xtwx - &other.xtwx,
            xtwr: &self.xtwr - &other.xtwr,
            rtwr: self.rtwr - other.rtwr,
            total_weight: self.total_weight - other.total_weight,
        }
    }

    /// Weighted squared error `(r - X theta)' W (r - X theta)` from the statistics alone.
    pub fn squared_error(&self, theta: &DVector<f64>) -> f64 {
        let quad = (theta.transpose() * &self.xtwx * theta)[(0, 0)];
        (self.rtwr - 2.0 * theta.dot(&self.xtwr) + quad).max(0.0)
    }

    /// Ridge point estimate with penalty `lambda * diag(penalty)` (identity when `None`).
    pub fn ridge_solve(&self, lambda: f64, penalty: Option<&[f64]>) -> Result<DVector<f64>> {
        let mut b = self.xtwx.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += lambda * penalty.map_or(1.0, |p| p[i]);
        }
        Ok(spd_cholesky(&b)?.solve(&self.xtwr))
    }
}

/// Ridge fit of one arm: point estimate, precision and coefficient covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedArmModel {
    pub theta: DVector<f64>,
    /// `X'WX + lambda I`.
    pub precision: DMatrix<f64>,
    /// `precision^-1 * s`, `s` the weighted residual sum of squares.
    pub covariance: DMatrix<f64>,
    pub lambda: f64,
    /// The unnormalized residual scale `s`.
    pub residual_scale: f64,
}

impl FittedArmModel {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// Weighted ridge: `theta = B^-1 X'W r` with `B = X'WX + lambda I`, and
/// covariance `B^-1 (r - X theta)' W (r - X theta)`.
///
/// The residual scale is deliberately not divided by degrees of freedom. An
/// empty history yields `theta = 0`, `B = lambda I` and residual scale
/// [`EMPTY_HISTORY_SCALE`].
pub fn fit_weighted_ridge(history: &ArmHistory, lambda: f64) -> Result<FittedArmModel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(BanditError::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    let d = history.dim();
    let stats = history.stats(None);
    let mut precision = stats.xtwx.clone();
    for i in 0..d {
        precision[(i, i)] += lambda;
    }
    symmetrize(&mut precision);
    let chol = spd_cholesky(&precision)?;
    let theta = chol.solve(&stats.xtwr);
    let residual_scale = if history.is_empty() {
        EMPTY_HISTORY_SCALE
    } else {
        history
            .contexts()
            .zip(history.rewards())
            .zip(history.weights())
            .map(|((x, r), w)| {
                let e = r - crate::linalg::dot(x, &theta);
                w * e * e
            })
            .sum()
    };
    let mut covariance = chol.inverse() * residual_scale;
    symmetrize(&mut covariance);
    Ok(FittedArmModel { theta, precision, covariance, lambda, residual_scale })
}

/// Predicted mean `x' theta` and its variance `x' V x` (clamped at zero).
pub fn predict_mean_var(model: &FittedArmModel, x: &[f64]) -> Result<(f64, f64)> {
    check_dim(model.dim(), x.len())?;
    let mu = crate::linalg::dot(x, &model.theta);
    let s2 = quad_form(&model.covariance, x).max(0.0);
    Ok((mu, s2))
}

/// Minimum number of observations before cross-validation is attempted.
pub const CV_MIN_OBSERVATIONS: usize = 10;

/// Middle element of the sorted grid (lower middle for even lengths).
pub fn median_grid_value(grid: &[f64]) -> f64 {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[(sorted.len() - 1) / 2]
}

/// Picks the ridge penalty from `grid` by `folds`-fold cross-validation on
/// weighted squared error. Observation `i` belongs to fold `i % folds`.
/// Histories shorter than [`CV_MIN_OBSERVATIONS`] get the grid median.
pub fn select_lambda_cv(history: &ArmHistory, grid: &[f64], folds: usize) -> Result<f64> {
    validate_grid(grid)?;
    if folds < 2 {
        return Err(BanditError::Parameter("cross-validation needs at least 2 folds".into()));
    }
    if history.len() < CV_MIN_OBSERVATIONS.max(folds) || grid.len() == 1 {
        return Ok(median_grid_value(grid));
    }
    let d = history.dim();
    let mut per_fold = vec![SufficientStats::zeros(d); folds];
    for i in 0..history.len() {
        per_fold[i % folds].add_row(history.context(i), history.rewards()[i], history.weights()[i]);
    }
    let mut total = SufficientStats::zeros(d);
    for f in &per_fold {
        total.xtwx += &f.xtwx;
        total.xtwr += &f.xtwr;
        total.rtwr += f.rtwr;
        total.total_weight += f.total_weight;
    }
    let mut best = (f64::INFINITY, grid[0]);
    for &lambda in grid {
        let mut err = 0.0;
        for fold in &per_fold {
            let train = total.minus(fold);
            let theta = train.ridge_solve(lambda, None)?;
            err += fold.squared_error(&theta);
        }
        if err < best.0 {
            best = (err, lambda);
        }
    }
    Ok(best.1)
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(BanditError::Parameter("lambda grid must be non-empty with positive entries".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    /// Dense LU solve of the weighted normal equations, independent of the
    /// Cholesky path used by the estimator.
    fn oracle(rows: &[Vec<f64>], r: &[f64], w: &[f64], lambda: f64) -> DVector<f64> {
        let d = rows[0].len();
        let mut a = DMatrix::<f64>::identity(d, d) * lambda;
        let mut b = DVector::<f64>::zeros(d);
        for ((x, ri), wi) in rows.iter().zip(r).zip(w) {
            for j in 0..d {
                b[j] += wi * x[j] * ri;
                for k in 0..d {
                    a[(j, k)] += wi * x[j] * x[k];
                }
            }
        }
        a.lu().solve(&b).unwrap()
    }

    fn random_history(seed: u64, n: usize, d: usize, unit: bool) -> (ArmHistory, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let mut rng = stream(seed, 0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| if unit { 1.0 } else { rng.random_range(1.0..10.0) }).collect();
        let mut h = ArmHistory::new(0, d);
        for i in 0..n {
            h.push_weighted(&rows[i], r[i], w[i]).unwrap();
        }
        (h, rows, r, w)
    }

    #[test]
    fn empty_history_is_prior() {
        let h = ArmHistory::new(0, 2);
        let m = fit_weighted_ridge(&h, 1.0).unwrap();
        assert_eq!(m.theta, DVector::zeros(2));
        assert_eq!(m.precision, DMatrix::identity(2, 2));
        assert_eq!(m.covariance, DMatrix::identity(2, 2));
    }

    #[test]
    fn scalar_closed_form() {
        let mut h = ArmHistory::new(0, 1);
        h.push(&[1.0], 1.0).unwrap();
        let m = fit_weighted_ridge(&h, 1.0).unwrap();
        assert_eq!(m.precision[(0, 0)], 2.0);
        assert!((m.theta[0] - 0.5).abs() < 1e-15);
        // residual (1 - 0.5)^2 = 0.25, covariance 0.25 / 2
        assert!((m.covariance[(0, 0)] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn random_instance_matches_dense_solve() {
        let (h, rows, r, w) = random_history(42, 20, 5, false);
        let m = fit_weighted_ridge(&h, 0.7).unwrap();
        let o = oracle(&rows, &r, &w, 0.7);
        assert!((m.theta - o).amax() < 1e-10);
    }

    #[test]
    fn parameter_and_shape_errors() {
        let h = ArmHistory::new(0, 2);
        assert!(matches!(fit_weighted_ridge(&h, 0.0), Err(BanditError::Parameter(_))));
        assert!(matches!(fit_weighted_ridge(&h, -1.0), Err(BanditError::Parameter(_))));
        let mut h = ArmHistory::new(0, 2);
        assert!(matches!(h.push(&[1.0], 0.0), Err(BanditError::Shape { .. })));
        let m = fit_weighted_ridge(&ArmHistory::new(0, 2), 1.0).unwrap();
        assert!(matches!(predict_mean_var(&m, &[1.0, 2.0, 3.0]), Err(BanditError::Shape { .. })));
    }

    #[test]
    fn norm_bound_enforced() {
        let mut h = ArmHistory::new(0, 2).with_norm_bound(1.0);
        assert!(h.push(&[0.6, 0.8], 0.0).is_ok());
        assert!(h.push(&[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn prediction_examples() {
        let h = ArmHistory::new(0, 2);
        let m = fit_weighted_ridge(&h, 1.0).unwrap();
        assert_eq!(predict_mean_var(&m, &[3.0, 4.0]).unwrap(), (0.0, 25.0));
    }

    #[test]
    fn prediction_matches_double_loop() {
        let (h, ..) = random_history(5, 30, 4, false);
        let m = fit_weighted_ridge(&h, 1.0).unwrap();
        let x = [0.3, -1.2, 0.8, 2.0];
        let (mu, s2) = predict_mean_var(&m, &x).unwrap();
        let mut q = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                q += x[i] * m.covariance[(i, j)] * x[j];
            }
        }
        let mean: f64 = (0..4).map(|i| x[i] * m.theta[i]).sum();
        assert!((s2 - q).abs() < 1e-12);
        assert!((mu - mean).abs() < 1e-12);
    }

    #[test]
    fn covariance_is_symmetric() {
        let (h, ..) = random_history(9, 50, 6, false);
        let m = fit_weighted_ridge(&h, 0.1).unwrap();
        assert!((m.covariance.clone() - m.covariance.transpose()).amax() < 1e-9);
    }

    #[test]
    fn cv_uses_median_on_short_history() {
        let (h, ..) = random_history(1, 5, 2, true);
        assert_eq!(select_lambda_cv(&h, &[10.0, 0.1, 1.0, 100.0], 5).unwrap(), 1.0);
    }

    #[test]
    fn cv_prefers_small_penalty_on_clean_signal() {
        let mut rng = stream(2, 0);
        let mut h = ArmHistory::new(0, 2);
        for _ in 0..200 {
            let x = [1.0, rng.random_range(-1.0..1.0)];
            h.push(&x, 3.0 + 5.0 * x[1] + 0.01 * rng.random_range(-1.0..1.0)).unwrap();
        }
        assert_eq!(select_lambda_cv(&h, &[0.01, 1.0, 100.0, 1000.0], 5).unwrap(), 0.01);
    }

    #[test]
    fn cv_matches_explicit_refits() {
        let (h, ..) = random_history(77, 40, 3, false);
        let grid = [0.1, 1.0, 10.0];
        let chosen = select_lambda_cv(&h, &grid, 5).unwrap();
        // recompute by building each training fold explicitly
        let mut errs = Vec::new();
        for &l in &grid {
            let mut err = 0.0;
            for f in 0..5 {
                let mut train = ArmHistory::new(0, 3);
                for i in (0..h.len()).filter(|i| i % 5 != f) {
                    train.push_weighted(h.context(i), h.rewards()[i], h.weights()[i]).unwrap();
                }
                let m = fit_weighted_ridge(&train, l).unwrap();
                for i in (0..h.len()).filter(|i| i % 5 == f) {
                    let e = h.rewards()[i] - crate::linalg::dot(h.context(i), &m.theta);
                    err += h.weights()[i] * e * e;
                }
            }
            errs.push(err);
        }
        let best = errs.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(chosen, grid[best]);
    }

    fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
        m.clone().symmetric_eigen().eigenvalues.min()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn unit_weights_reduce_to_plain_ridge(seed in 0u64..10_000, n in 1usize..100, d in 1usize..10, li in 0usize..3) {
            let lambda = [0.1, 1.0, 10.0][li];
            let (h, rows, r, w) = random_history(seed, n, d, true);
            let m = fit_weighted_ridge(&h, lambda).unwrap();
            prop_assert!((m.theta - oracle(&rows, &r, &w, lambda)).amax() < 1e-10);
        }

        #[test]
        fn common_scaling_leaves_estimate(seed in 0u64..10_000, c in 0.1f64..20.0) {
            let (h, rows, r, w) = random_history(seed, 25, 4, false);
            let m = fit_weighted_ridge(&h, 1.0).unwrap();
            let mut scaled = ArmHistory::new(0, 4);
            for i in 0..rows.len() {
                scaled.push_weighted(&rows[i], r[i], c * w[i]).unwrap();
            }
            let ms = fit_weighted_ridge(&scaled, c).unwrap();
            prop_assert!((m.theta - ms.theta).amax() < 1e-10);
        }

        #[test]
        fn integer_weight_equals_duplicates(seed in 0u64..10_000, k in 1usize..6) {
            let (mut h, rows, r, _) = random_history(seed, 10, 3, true);
            let mut dup = h.clone();
            h.push_weighted(&[0.5, -1.0, 2.0], 1.5, k as f64).unwrap();
            for _ in 0..k {
                dup.push(&[0.5, -1.0, 2.0], 1.5).unwrap();
            }
            let _ = (rows, r);
            let a = fit_weighted_ridge(&h, 1.0).unwrap();
            let b = fit_weighted_ridge(&dup, 1.0).unwrap();
            prop_assert!((a.theta - b.theta).amax() < 1e-10);
        }

        #[test]
        fn adding_observation_never_shrinks_precision(seed in 0u64..10_000, n in 0usize..30) {
            let (mut h, ..) = random_history(seed, n.max(1), 3, false);
            let before = min_eigenvalue(&fit_weighted_ridge(&h, 0.5).unwrap().precision);
            h.push_weighted(&[1.0, -0.5, 0.25], 0.0, 3.0).unwrap();
            let after = min_eigenvalue(&fit_weighted_ridge(&h, 0.5).unwrap().precision);
            prop_assert!(after >= before - 1e-9);
            prop_assert!(before >= 0.5 - 1e-9);
        }
    }
}
