//! Bootstrap posteriors over ridge and LASSO fits, and the Thompson sampling
//! policy built on them.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, BanditError, Result};
use crate::estimator::{median_grid_value, validate_grid, ArmHistory, SufficientStats, CV_MIN_OBSERVATIONS};
use crate::lasso::{lambda_max, lambda_path, lasso_from_stats, LassoOptions};
use crate::linalg::dot;
use crate::par::{map_range, Execution};
use crate::policy::{Policy, WarmStartRecord};
use crate::rng::{argmax_random_tie, fork_seed, mix, stream, StreamRng};

/// How many times a degenerate resample is redrawn before it is accepted and flagged.
pub const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Ridge,
    Lasso,
}

/// Regularized fit on weighted statistics with per-coordinate penalty factors.
pub fn fit_regularized(
    solver: Solver,
    stats: &SufficientStats,
    lambda: f64,
    penalty: Option<&[f64]>,
    lasso: LassoOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    match solver {
        Solver::Ridge => stats.ridge_solve(lambda, penalty),
        Solver::Lasso => Ok(lasso_from_stats(stats, lambda, penalty, lasso, warm_start)?.theta),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    pub coefficient_samples: Vec<DVector<f64>>,
    pub solver: Solver,
    pub lambda: f64,
    /// Resamples still degenerate after [`MAX_REDRAWS`] redraws.
    pub degenerate: usize,
}

impl BootstrapEnsemble {
    pub fn len(&self) -> usize {
        self.coefficient_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficient_samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.coefficient_samples[0].len()
    }

    pub fn mean_coefficients(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for s in &self.coefficient_samples {
            m += s;
        }
        m / self.len() as f64
    }

    /// Mean and sample variance of `x' theta` across the ensemble.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.dim(), x.len())?;
        let preds: Vec<f64> = self.coefficient_samples.iter().map(|t| dot(x, t)).collect();
        let b = preds.len() as f64;
        let mu = preds.iter().sum::<f64>() / b;
        let s2 = preds.iter().map(|p| (p - mu).powi(2)).sum::<f64>() / (b - 1.0);
        Ok((mu, s2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub penalty: Option<Vec<f64>>,
    pub lasso: LassoOptions,
    pub execution: Execution,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { penalty: None, lasso: LassoOptions::default(), execution: Execution::default() }
    }
}

/// `b_boot` refits on resamples (with replacement, weights kept) of the history.
pub fn bootstrap_posterior<R: Rng + ?Sized>(
    history: &ArmHistory,
    solver: Solver,
    lambda: f64,
    b_boot: usize,
    rng: &mut R,
) -> Result<BootstrapEnsemble> {
    bootstrap_posterior_with(history, solver, lambda, b_boot, &BootstrapOptions::default(), fork_seed(rng))
}

/// As [`bootstrap_posterior`]; resample `b` uses stream `b` of `seed`, so the
/// ensemble does not depend on the execution mode.
pub fn bootstrap_posterior_with(
    history: &ArmHistory,
    solver: Solver,
    lambda: f64,
    b_boot: usize,
    options: &BootstrapOptions,
    seed: u64,
) -> Result<BootstrapEnsemble> {
    if history.is_empty() {
        return Err(BanditError::State("cannot bootstrap an empty history".into()));
    }
    if b_boot < 2 {
        return Err(BanditError::Parameter(format!("need at least 2 bootstrap samples, got {b_boot}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(BanditError::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    if let Some(p) = &options.penalty {
        check_dim(history.dim(), p.len())?;
    }
    let n = history.len();
    let penalty = options.penalty.as_deref();
    let fits = map_range(options.execution, b_boot, |b| -> Result<(DVector<f64>, bool)> {
        let mut rng = stream(seed, b as u64);
        let mut counts = vec![0.0; n];
        for attempt in 0..=MAX_REDRAWS {
            counts.iter_mut().for_each(|c| *c = 0.0);
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1.0;
            }
            let distinct = counts.iter().filter(|c| **c > 0.0).count();
            let degenerate = n > 1 && distinct == 1;
            if degenerate && attempt < MAX_REDRAWS {
                continue;
            }
            let stats = history.stats(Some(&counts));
            match fit_regularized(solver, &stats, lambda, penalty, options.lasso, None) {
                Ok(theta) => return Ok((theta, degenerate)),
                Err(e) if attempt == MAX_REDRAWS => return Err(e),
                Err(_) => continue,
            }
        }
        unreachable!("the final attempt always returns")
    });
    let mut samples = Vec::with_capacity(b_boot);
    let mut degenerate = 0;
    for fit in fits {
        let (theta, flagged) = fit?;
        degenerate += usize::from(flagged);
        samples.push(theta);
    }
    if degenerate > 0 {
        log::warn!("{degenerate} degenerate bootstrap resamples kept after {MAX_REDRAWS} redraws");
    }
    Ok(BootstrapEnsemble { coefficient_samples: samples, solver, lambda, degenerate })
}

/// Cross-validated penalty on weighted squared error, observation `i` in fold
/// `i % folds`. For LASSO the candidates are `grid` scaled by the full-data
/// `lambda_max`, fitted along the path with warm starts. Short histories get
/// the grid median.
pub fn select_lambda(
    history: &ArmHistory,
    solver: Solver,
    grid: &[f64],
    folds: usize,
    penalty: Option<&[f64]>,
    lasso: LassoOptions,
) -> Result<f64> {
    validate_grid(grid)?;
    if folds < 2 {
        return Err(BanditError::Parameter("cross-validation needs at least 2 folds".into()));
    }
    let scale = match solver {
        Solver::Ridge => 1.0,
        Solver::Lasso => {
            let lmax = lambda_max(&history.stats(None), penalty)?;
            if lmax > 0.0 {
                lmax
            } else {
                1.0
            }
        }
    };
    let mut candidates: Vec<f64> = grid.iter().map(|g| g * scale).collect();
    if history.len() < CV_MIN_OBSERVATIONS.max(folds) || candidates.len() == 1 {
        return Ok(median_grid_value(&candidates));
    }
    // descending, so LASSO warm starts move from sparse to dense
    candidates.sort_by(|a, b| b.total_cmp(a));
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
    let mut errors = vec![0.0; candidates.len()];
    for fold in &per_fold {
        let train = total.minus(fold);
        let mut warm: Option<DVector<f64>> = None;
        for (k, &lambda) in candidates.iter().enumerate() {
            let theta = fit_regularized(solver, &train, lambda, penalty, lasso, warm.as_ref())?;
            errors[k] += fold.squared_error(&theta);
            warm = Some(theta);
        }
    }
    let mut best = 0;
    for k in 1..candidates.len() {
        if errors[k] < errors[best] {
            best = k;
        }
    }
    Ok(candidates[best])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    /// Score each arm with one ensemble member chosen uniformly at random.
    Member,
    /// Score each arm with a draw from `N(mean, alpha^2 var)` of the ensemble predictions.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub solver: Solver,
    pub b_boot: usize,
    /// Ridge: absolute penalties. LASSO: multiples of `lambda_max`.
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    pub draw: DrawMode,
    /// Variance inflation in [`DrawMode::Gaussian`]; unused otherwise.
    pub alpha: f64,
    /// Leave coordinate 0 (the intercept of an intercept feature map) unpenalized.
    pub free_intercept: bool,
    /// Observations an arm needs before its first ensemble is built.
    pub min_observations: usize,
    /// An arm is refit once its history has grown by
    /// `max(refit_cadence, refit_growth * n)` since its last fit.
    pub refit_cadence: usize,
    pub refit_growth: f64,
    pub lasso: LassoOptions,
    pub execution: Execution,
}

impl BootstrapConfig {
    pub fn new(solver: Solver) -> Self {
        let lambda_grid = match solver {
            Solver::Ridge => vec![0.01, 0.1, 1.0, 10.0, 100.0],
            Solver::Lasso => lambda_path(1.0, 10, 1e-3),
        };
        Self {
            solver,
            b_boot: 100,
            lambda_grid,
            cv_folds: 5,
            draw: DrawMode::Member,
            alpha: 1.0,
            free_intercept: true,
            min_observations: 3,
            refit_cadence: 10,
            refit_growth: 0.1,
            lasso: LassoOptions::default(),
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.lambda_grid)?;
        if self.b_boot < 2 || self.cv_folds < 2 || self.refit_cadence == 0 || self.min_observations == 0 {
            return Err(BanditError::Parameter(
                "need b_boot >= 2, cv_folds >= 2, refit_cadence >= 1, min_observations >= 1".into(),
            ));
        }
        if !(self.alpha >= 0.0) || !(self.refit_growth >= 0.0) {
            return Err(BanditError::Parameter("alpha and refit_growth must be non-negative".into()));
        }
        Ok(())
    }
}

/// Thompson sampling over per-arm bootstrap ensembles.
#[derive(Debug, Clone)]
pub struct BootstrapPolicy {
    config: BootstrapConfig,
    n_arms: usize,
    dim: usize,
    histories: Vec<ArmHistory>,
    ensembles: Vec<Option<BootstrapEnsemble>>,
    fitted_len: Vec<usize>,
    select_rng: StreamRng,
    fit_rng: StreamRng,
}

impl BootstrapPolicy {
    pub fn new(config: BootstrapConfig, n_arms: usize, dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_arms == 0 || dim == 0 {
            return Err(BanditError::Parameter("need at least one arm and one feature".into()));
        }
        Ok(Self {
            config,
            n_arms,
            dim,
            histories: (0..n_arms).map(|a| ArmHistory::new(a, dim)).collect(),
            ensembles: vec![None; n_arms],
            fitted_len: vec![0; n_arms],
            select_rng: stream(mix(seed, 1), 0),
            fit_rng: stream(mix(seed, 3), 0),
        })
    }

    pub fn config(&self) -> &BootstrapConfig {
        &self.config
    }

    pub fn ensemble(&self, arm: usize) -> Option<&BootstrapEnsemble> {
        self.ensembles[arm].as_ref()
    }

    pub fn history(&self, arm: usize) -> &ArmHistory {
        &self.histories[arm]
    }

    fn penalty(&self) -> Option<Vec<f64>> {
        self.config.free_intercept.then(|| {
            let mut p = vec![1.0; self.dim];
            p[0] = 0.0;
            p
        })
    }

    fn due(&self, arm: usize) -> bool {
        let n = self.histories[arm].len();
        if n < self.config.min_observations {
            return false;
        }
        if self.ensembles[arm].is_none() {
            return true;
        }
        let last = self.fitted_len[arm];
        let step = (self.config.refit_growth * last as f64).ceil() as usize;
        n - last >= step.max(self.config.refit_cadence)
    }

    pub fn refit(&mut self, arm: usize) -> Result<()> {
        let penalty = self.penalty();
        let history = &self.histories[arm];
        let lambda = select_lambda(
            history,
            self.config.solver,
            &self.config.lambda_grid,
            self.config.cv_folds,
            penalty.as_deref(),
            self.config.lasso,
        )?;
        let options = BootstrapOptions { penalty, lasso: self.config.lasso, execution: self.config.execution };
        let seed = fork_seed(&mut self.fit_rng);
        let ensemble =
            bootstrap_posterior_with(history, self.config.solver, lambda, self.config.b_boot, &options, seed)?;
        self.fitted_len[arm] = history.len();
        self.ensembles[arm] = Some(ensemble);
        Ok(())
    }
}

impl Policy for BootstrapPolicy {
    fn n_arms(&self) -> usize {
        self.n_arms
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn select(&mut self, x: &[f64]) -> Result<usize> {
        check_dim(self.dim, x.len())?;
        if self.ensembles.iter().any(Option::is_none) {
            return Ok(self.select_rng.random_range(0..self.n_arms));
        }
        let mut scores = Vec::with_capacity(self.n_arms);
        for e in self.ensembles.iter().flatten() {
            let score = match self.config.draw {
                DrawMode::Member => {
                    let b = self.select_rng.random_range(0..e.len());
                    dot(x, &e.coefficient_samples[b])
                }
                DrawMode::Gaussian => {
                    let (mu, s2) = e.predict(x)?;
                    let z: f64 = self.select_rng.sample(rand_distr::StandardNormal);
                    mu + self.config.alpha * s2.sqrt() * z
                }
            };
            scores.push(score);
        }
        Ok(argmax_random_tie(&scores, &mut self.select_rng))
    }

    fn update(&mut self, x: &[f64], arm: usize, reward: f64) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if arm >= self.n_arms {
            return Err(BanditError::Parameter(format!("arm {arm} out of range")));
        }
        self.histories[arm].push(x, reward)?;
        if self.due(arm) {
            self.refit(arm)?;
        }
        Ok(())
    }

    fn warm_start(&mut self, batch: &[WarmStartRecord]) -> Result<()> {
        for rec in batch {
            check_dim(self.dim, rec.context.len())?;
            self.histories[rec.arm].push(&rec.context, rec.reward)?;
        }
        for a in 0..self.n_arms {
            if self.due(a) {
                self.refit(a)?;
            }
        }
        Ok(())
    }

    fn predict_means(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.ensembles.iter().map(|e| e.as_ref().map(|e| dot(x, &e.mean_coefficients()))).collect()
    }
}
