//! Bayesian LASSO Gibbs sampler and the Thompson sampling policy on top of it.
//!
//! Each step draws the local scales from
//! `InverseGaussian(mu' = sqrt(lambda^2 sigma^2 / theta_j^2), lambda' = lambda^2)`,
//! forms `A = X'X + D` and draws `theta ~ N(A^-1 X'r, sigma^2 A^-1)`.
//!
//! [`PrecisionForm::Direct`] stores the inverse-Gaussian draw itself as
//! `tau_sq` and uses `D = diag(tau_sq)`. [`PrecisionForm::Inverse`] follows the
//! usual Bayesian LASSO reading, where the draw is `1 / tau_sq` and
//! `D = diag(1 / tau_sq)`. The two give the same `A` for a given draw; they
//! differ in what `tau_sq` means, and hence in the prior the chain starts from.
//!
//! `sigma_sq` is a fixed hyperparameter, not sampled.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, InverseGaussian, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, BanditError, Result};
use crate::estimator::SufficientStats;
use crate::linalg::{dot, spd_cholesky};
use crate::policy::{Policy, WarmStartRecord};
use crate::rng::{argmax_random_tie, mix, stream, StreamRng};

/// `|theta_j|` is floored here before entering the inverse-Gaussian mean.
pub const THETA_FLOOR: f64 = 1e-8;
/// Cap on the inverse-Gaussian mean parameter.
pub const IG_MEAN_CAP: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionForm {
    /// `A = X'X + diag(tau_sq)`, the draw used as is.
    #[default]
    #[serde(alias = "as_paper")]
    Direct,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsState {
    pub theta: DVector<f64>,
    pub tau_sq: DVector<f64>,
    pub sigma_sq: f64,
    pub lambda: f64,
}

impl GibbsState {
    /// `tau_sq_j ~ Exp(rate lambda^2 / 2)` i.i.d. and `theta ~ N(0, sigma^2 diag(tau_sq))`.
    pub fn from_prior<R: Rng + ?Sized>(dim: usize, sigma_sq: f64, lambda: f64, rng: &mut R) -> Result<Self> {
        if !(sigma_sq > 0.0 && lambda > 0.0 && sigma_sq.is_finite() && lambda.is_finite()) {
            return Err(BanditError::Parameter("sigma_sq and lambda must be positive".into()));
        }
        let exp = Exp::new(lambda * lambda / 2.0).map_err(|e| BanditError::Parameter(e.to_string()))?;
        let tau_sq = DVector::from_fn(dim, |_, _| exp.sample(rng).max(f64::MIN_POSITIVE));
        let theta = DVector::from_fn(dim, |j, _| (sigma_sq * tau_sq[j]).sqrt() * rng.sample::<f64, _>(StandardNormal));
        Ok(Self { theta, tau_sq, sigma_sq, lambda })
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != self.tau_sq.len() {
            return Err(BanditError::Shape { expected: self.theta.len(), got: self.tau_sq.len() });
        }
        if self.tau_sq.iter().any(|t| !(*t > 0.0)) || !(self.sigma_sq > 0.0) || !(self.lambda > 0.0) {
            return Err(BanditError::State("tau_sq, sigma_sq and lambda must be positive".into()));
        }
        Ok(())
    }

    /// Diagonal added to `X'X`.
    pub fn penalty_diagonal(&self, form: PrecisionForm) -> DVector<f64> {
        match form {
            PrecisionForm::Direct => self.tau_sq.clone(),
            PrecisionForm::Inverse => self.tau_sq.map(|t| 1.0 / t),
        }
    }
}

/// Mean `A^-1 X'r` and Cholesky factor of `A = X'X + diag(penalty)`.
pub fn theta_conditional(
    xtx: &DMatrix<f64>,
    xtr: &DVector<f64>,
    penalty: &DVector<f64>,
) -> Result<(DVector<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let mut a = xtx.clone();
    for j in 0..a.nrows() {
        a[(j, j)] += penalty[j];
    }
    let chol = spd_cholesky(&a)?;
    Ok((chol.solve(xtr), chol))
}

/// One Gibbs sweep. The flag reports whether any inverse-Gaussian mean was clamped.
pub fn bayesian_lasso_gibbs_step<R: Rng + ?Sized>(
    state: &GibbsState,
    stats: &SufficientStats,
    form: PrecisionForm,
    rng: &mut R,
) -> Result<(GibbsState, bool)> {
    state.validate()?;
    let p = state.theta.len();
    check_dim(p, stats.xtwr.len())?;
    let lambda_sq = state.lambda * state.lambda;
    let mut clamped = false;
    let mut tau_sq = DVector::zeros(p);
    for j in 0..p {
        let theta_j = state.theta[j].abs().max(THETA_FLOOR);
        let mut mean = state.lambda * state.sigma_sq.sqrt() / theta_j;
        if !(mean <= IG_MEAN_CAP) {
            mean = IG_MEAN_CAP;
            clamped = true;
        }
        let ig = InverseGaussian::new(mean, lambda_sq).map_err(|e| BanditError::Numerical(e.to_string()))?;
        let draw = ig.sample(rng).max(f64::MIN_POSITIVE);
        tau_sq[j] = match form {
            PrecisionForm::Direct => draw,
            PrecisionForm::Inverse => 1.0 / draw,
        };
    }
    let mut next = GibbsState { theta: state.theta.clone(), tau_sq, sigma_sq: state.sigma_sq, lambda: state.lambda };
    let (mean, chol) = theta_conditional(&stats.xtwx, &stats.xtwr, &next.penalty_diagonal(form))?;
    // theta = mean + sigma L^-T z has covariance sigma^2 A^-1
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let lt = chol.l().transpose();
    let offset = lt.solve_upper_triangular(&z).ok_or_else(|| BanditError::Numerical("singular factor".into()))?;
    next.theta = mean + offset * state.sigma_sq.sqrt();
    Ok((next, clamped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub lambda: f64,
    /// Gibbs iterations per update.
    pub iterations: usize,
    pub form: PrecisionForm,
    /// Fixed noise variance; `None` estimates it from a ridge pre-fit.
    pub sigma_sq: Option<f64>,
    /// Used while an arm has too little data for the pre-fit.
    pub initial_sigma_sq: f64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self { lambda: 1.0, iterations: 20, form: PrecisionForm::Direct, sigma_sq: None, initial_sigma_sq: 1.0 }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || self.iterations == 0 || !(self.initial_sigma_sq > 0.0) {
            return Err(BanditError::Parameter("need lambda > 0, iterations >= 1, initial_sigma_sq > 0".into()));
        }
        if self.sigma_sq.is_some_and(|s| !(s > 0.0)) {
            return Err(BanditError::Parameter("sigma_sq must be positive".into()));
        }
        Ok(())
    }
}

/// Residual variance `RSS / (n - p)` of a ridge fit with unit penalty, once the
/// arm has at least `max(10, 2p)` observations.
pub fn ridge_residual_variance(stats: &SufficientStats, n: usize) -> Option<f64> {
    let p = stats.xtwr.len();
    if n < (2 * p).max(10) {
        return None;
    }
    let theta = stats.ridge_solve(1.0, None).ok()?;
    Some((stats.squared_error(&theta) / (n - p) as f64).max(1e-12))
}

/// Bayesian LASSO Thompson sampling: every arm keeps a chain; an update runs
/// `iterations` Gibbs steps on the chosen arm only, warm-started from its
/// current state, and keeps one of the retained draws chosen uniformly.
#[derive(Debug, Clone)]
pub struct BayesianLassoPolicy {
    config: GibbsConfig,
    dim: usize,
    chains: Vec<GibbsState>,
    stats: Vec<SufficientStats>,
    counts: Vec<usize>,
    /// Observation count at the last noise-variance estimate.
    sigma_at: Vec<usize>,
    clamp_events: usize,
    select_rng: StreamRng,
    chain_rng: StreamRng,
}

impl BayesianLassoPolicy {
    pub fn new(config: GibbsConfig, n_arms: usize, dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_arms == 0 || dim == 0 {
            return Err(BanditError::Parameter("need at least one arm and one feature".into()));
        }
        let mut chain_rng = stream(mix(seed, 4), 0);
        let sigma_sq = config.sigma_sq.unwrap_or(config.initial_sigma_sq);
        let chains = (0..n_arms)
            .map(|_| GibbsState::from_prior(dim, sigma_sq, config.lambda, &mut chain_rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            dim,
            chains,
            stats: vec![SufficientStats::zeros(dim); n_arms],
            counts: vec![0; n_arms],
            sigma_at: vec![0; n_arms],
            clamp_events: 0,
            select_rng: stream(mix(seed, 1), 0),
            chain_rng,
        })
    }

    pub fn chain(&self, arm: usize) -> &GibbsState {
        &self.chains[arm]
    }

    /// Gibbs steps in which an inverse-Gaussian mean hit [`IG_MEAN_CAP`].
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    fn refresh_sigma(&mut self, arm: usize) {
        if self.config.sigma_sq.is_some() {
            return;
        }
        let n = self.counts[arm];
        if n < 2 * self.sigma_at[arm].max(1) {
            return;
        }
        if let Some(s) = ridge_residual_variance(&self.stats[arm], n) {
            self.chains[arm].sigma_sq = s;
            self.sigma_at[arm] = n;
        }
    }

    fn advance(&mut self, arm: usize) -> Result<()> {
        self.refresh_sigma(arm);
        let keep = self.chain_rng.random_range(0..self.config.iterations);
        let mut state = self.chains[arm].clone();
        let mut kept = None;
        for k in 0..self.config.iterations {
            let (next, clamped) =
                bayesian_lasso_gibbs_step(&state, &self.stats[arm], self.config.form, &mut self.chain_rng)?;
            self.clamp_events += usize::from(clamped);
            if k == keep {
                kept = Some(next.clone());
            }
            state = next;
        }
        self.chains[arm] = kept.expect("keep index is in range");
        Ok(())
    }

    fn record(&mut self, x: &[f64], arm: usize, reward: f64) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if arm >= self.chains.len() {
            return Err(BanditError::Parameter(format!("arm {arm} out of range")));
        }
        self.stats[arm].add_row(x, reward, 1.0);
        self.counts[arm] += 1;
        Ok(())
    }
}

impl Policy for BayesianLassoPolicy {
    fn n_arms(&self) -> usize {
        self.chains.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn select(&mut self, x: &[f64]) -> Result<usize> {
        check_dim(self.dim, x.len())?;
        let scores: Vec<f64> = self.chains.iter().map(|c| dot(x, &c.theta)).collect();
        Ok(argmax_random_tie(&scores, &mut self.select_rng))
    }

    fn update(&mut self, x: &[f64], arm: usize, reward: f64) -> Result<()> {
        self.record(x, arm, reward)?;
        self.advance(arm)
    }

    fn warm_start(&mut self, batch: &[WarmStartRecord]) -> Result<()> {
        let mut touched = vec![false; self.chains.len()];
        for rec in batch {
            self.record(&rec.context, rec.arm, rec.reward)?;
            touched[rec.arm] = true;
        }
        for (arm, t) in touched.into_iter().enumerate() {
            if t {
                self.advance(arm)?;
            }
        }
        Ok(())
    }

    fn predict_means(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.chains.iter().map(|c| dot(x, &c.theta)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats_of(rows: &[Vec<f64>], r: &[f64]) -> SufficientStats {
        let mut s = SufficientStats::zeros(rows[0].len());
        for (x, y) in rows.iter().zip(r) {
            s.add_row(x, *y, 1.0);
        }
        s
    }

    fn sparse_problem(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = stream(seed, 0);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let r = rows.iter().map(|x| 2.0 * x[0] + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        (rows, r)
    }

    #[test]
    fn inverse_gaussian_mean() {
        let ig = InverseGaussian::new(2.0, 3.0).unwrap();
        let mut rng = stream(1, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| ig.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.04, "{mean}");
    }

    #[test]
    fn prior_only_chain_is_centred() {
        let mut rng = stream(2, 0);
        let stats = SufficientStats::zeros(3);
        let mut state = GibbsState::from_prior(3, 1.0, 1.0, &mut rng).unwrap();
        let n = 10_000;
        let mut sum = DVector::zeros(3);
        let mut sq = DVector::zeros(3);
        for _ in 0..n {
            state = bayesian_lasso_gibbs_step(&state, &stats, PrecisionForm::Direct, &mut rng).unwrap().0;
            sum += &state.theta;
            sq += state.theta.map(|t| t * t);
        }
        for j in 0..3 {
            let m = sum[j] / n as f64;
            let sd = (sq[j] / n as f64 - m * m).sqrt();
            // chain draws are correlated; allow for it generously
            assert!(m.abs() < 3.0 * sd / (n as f64).sqrt() * 5.0, "{m} {sd}");
        }
    }

    #[test]
    fn precision_form_names() {
        let f: PrecisionForm = serde_json::from_str("\"as_paper\"").unwrap();
        assert_eq!(f, PrecisionForm::Direct);
        assert_eq!(serde_json::to_string(&PrecisionForm::Inverse).unwrap(), "\"inverse\"");
    }

    #[test]
    fn large_scales_reduce_to_gaussian_posterior() {
        let (rows, r) = sparse_problem(3);
        let stats = stats_of(&rows, &r);
        let penalty = DVector::from_element(5, 1e-9);
        let (mean, _) = theta_conditional(&stats.xtwx, &stats.xtwr, &penalty).unwrap();
        let x = DMatrix::from_fn(200, 5, |i, j| rows[i][j]);
        let mut a = x.transpose() * &x;
        for j in 0..5 {
            a[(j, j)] += 1e-9;
        }
        let oracle = a.lu().solve(&(x.transpose() * DVector::from_vec(r))).unwrap();
        assert!((mean - oracle).amax() < 1e-10);
    }

    #[test]
    fn step_rejects_bad_state() {
        let state = GibbsState {
            theta: DVector::zeros(2),
            tau_sq: DVector::from_vec(vec![1.0, 0.0]),
            sigma_sq: 1.0,
            lambda: 1.0,
        };
        assert!(bayesian_lasso_gibbs_step(
            &state,
            &SufficientStats::zeros(2),
            PrecisionForm::Direct,
            &mut stream(0, 0)
        )
        .is_err());
    }

    #[test]
    fn tiny_coefficients_are_clamped_and_flagged() {
        let state = GibbsState {
            theta: DVector::from_vec(vec![0.0]),
            tau_sq: DVector::from_vec(vec![1.0]),
            sigma_sq: 1e4,
            lambda: 10.0,
        };
        let (next, clamped) =
            bayesian_lasso_gibbs_step(&state, &SufficientStats::zeros(1), PrecisionForm::Direct, &mut stream(0, 0))
                .unwrap();
        assert!(clamped);
        next.validate().unwrap();
    }

    /// Posterior means of `theta` after burn-in.
    fn chain_means(stats: &SufficientStats, form: PrecisionForm, seed: u64) -> DVector<f64> {
        let mut rng = stream(seed, 0);
        let mut state = GibbsState::from_prior(5, 0.01, 1.0, &mut rng).unwrap();
        let mut sum = DVector::zeros(5);
        for k in 0..1000 {
            state = bayesian_lasso_gibbs_step(&state, stats, form, &mut rng).unwrap().0;
            if k >= 500 {
                sum += &state.theta;
            }
        }
        sum / 500.0
    }

    /// Slow reference chain: explicit inverse, Box-Muller normals and the
    /// Michael-Schucany-Haas inverse-Gaussian transform, all written out here.
    fn reference_chain_means(rows: &[Vec<f64>], r: &[f64], seed: u64) -> DVector<f64> {
        let mut rng = stream(seed, 7);
        let mut normal = || {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let mut uniforms = stream(seed, 8);
        let sigma_sq: f64 = 0.01;
        let lambda: f64 = 1.0;
        let x = DMatrix::from_fn(rows.len(), 5, |i, j| rows[i][j]);
        let xtx = x.transpose() * &x;
        let xtr = x.transpose() * DVector::from_column_slice(r);
        let mut theta = DVector::<f64>::from_element(5, 0.1);
        let mut sum = DVector::zeros(5);
        for k in 0..1000 {
            let mut a = xtx.clone();
            for j in 0..5 {
                let mu = (lambda * lambda * sigma_sq / theta[j].abs().max(1e-8).powi(2)).sqrt();
                let shape = lambda * lambda;
                let nu = normal();
                let y = nu * nu;
                let xv = mu + mu * mu * y / (2.0 * shape)
                    - mu / (2.0 * shape) * (4.0 * mu * shape * y + mu * mu * y * y).sqrt();
                let draw = if uniforms.random::<f64>() <= mu / (mu + xv) { xv } else { mu * mu / xv };
                a[(j, j)] += draw;
            }
            let a_inv = a.try_inverse().unwrap();
            let mean = &a_inv * &xtr;
            let cov = (&a_inv + a_inv.transpose()) * (0.5 * sigma_sq);
            let l = cov.cholesky().unwrap().l();
            let z = DVector::from_fn(5, |_, _| normal());
            theta = mean + l * z;
            if k >= 500 {
                sum += &theta;
            }
        }
        sum / 500.0
    }

    #[test]
    fn sparse_chain_recovers_active_coefficient() {
        let (rows, r) = sparse_problem(4);
        let stats = stats_of(&rows, &r);
        for form in [PrecisionForm::Direct, PrecisionForm::Inverse] {
            let m = chain_means(&stats, form, 5);
            assert!((1.5..=2.5).contains(&m[0]), "{m}");
            for j in 1..5 {
                assert!(m[j].abs() <= 0.3, "{m}");
            }
            let reference = reference_chain_means(&rows, &r, 5);
            assert!((m - reference).amax() < 0.01);
        }
    }

    #[test]
    fn single_arm_always_chosen() {
        let mut p = BayesianLassoPolicy::new(GibbsConfig::default(), 1, 2, 0).unwrap();
        for t in 0..50 {
            let x = [1.0, t as f64 / 10.0];
            assert_eq!(p.select(&x).unwrap(), 0);
            p.update(&x, 0, 1.0).unwrap();
        }
    }

    #[test]
    fn two_arm_sign_problem() {
        let config = GibbsConfig { sigma_sq: Some(0.01), ..Default::default() };
        let mut p = BayesianLassoPolicy::new(config, 2, 1, 3).unwrap();
        let mut rng = stream(9, 0);
        let mut correct = 0;
        for t in 0..1000 {
            let x: f64 = rng.sample(StandardNormal);
            let a = p.select(&[x]).unwrap();
            let r = if a == 0 { x } else { -x } + 0.1 * rng.sample::<f64, _>(StandardNormal);
            p.update(&[x], a, r).unwrap();
            if t >= 500 && (a == 0) == (x > 0.0) {
                correct += 1;
            }
        }
        assert!(correct as f64 / 500.0 >= 0.9, "{correct}");
    }

    #[test]
    fn noise_variance_is_estimated_from_data() {
        let mut p = BayesianLassoPolicy::new(GibbsConfig::default(), 1, 2, 0).unwrap();
        let mut rng = stream(1, 0);
        for _ in 0..200 {
            let x = [1.0, rng.sample::<f64, _>(StandardNormal)];
            p.update(&x, 0, x[1] + 0.5 * rng.sample::<f64, _>(StandardNormal)).unwrap();
        }
        let s = p.chain(0).sigma_sq;
        assert!((s - 0.25).abs() < 0.08, "{s}");
    }
}
