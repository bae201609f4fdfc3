//! LASSO-versus-ridge predictive MSE on uniformly randomized data: the
//! baseline against which the adaptive comparison on the sparse design is read.
//!
//! Observations arrive one at a time with uniformly random arms. Every
//! `refit_every` steps each arm's ridge and LASSO fits (penalty chosen by
//! cross-validation) are recomputed; before each step, every arm's prediction
//! for the incoming context is scored against its noiseless mean. The
//! cumulative MSE averages these errors over the stream; the final MSE scores
//! the last fits on fresh contexts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use bandit_core::bootstrap::{fit_regularized, select_lambda, BootstrapConfig, Solver};
use bandit_core::estimator::ArmHistory;
use bandit_core::features::FeatureMap;
use bandit_core::lasso::LassoOptions;
use bandit_core::rng::{mix, stream};

use crate::config::EnvSpec;
use crate::error::{HarnessError, Result};
use crate::runner::make_env;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsePrecheck {
    pub observations: usize,
    /// Per arm, averaged over the stream.
    pub cumulative_ridge: Vec<f64>,
    pub cumulative_lasso: Vec<f64>,
    /// Per arm, of the final fits on held-out contexts.
    pub final_ridge: Vec<f64>,
    pub final_lasso: Vec<f64>,
}

fn gaps(ridge: &[f64], lasso: &[f64]) -> Vec<f64> {
    ridge.iter().zip(lasso).map(|(r, l)| (l - r).abs() / r).collect()
}

impl MsePrecheck {
    /// Per arm `|lasso - ridge| / ridge` of the cumulative MSE.
    pub fn relative_gaps(&self) -> Vec<f64> {
        gaps(&self.cumulative_ridge, &self.cumulative_lasso)
    }

    pub fn max_relative_gap(&self) -> f64 {
        self.relative_gaps().into_iter().fold(0.0, f64::max)
    }

    pub fn final_relative_gaps(&self) -> Vec<f64> {
        gaps(&self.final_ridge, &self.final_lasso)
    }
}

struct ArmFits {
    ridge: Vec<f64>,
    lasso: Vec<f64>,
}

fn fit_arm(h: &ArmHistory, penalty: Option<&[f64]>) -> Result<ArmFits> {
    let lasso = LassoOptions::default();
    let mut out = Vec::with_capacity(2);
    for solver in [Solver::Ridge, Solver::Lasso] {
        if h.is_empty() {
            out.push(vec![0.0; h.dim()]);
            continue;
        }
        let grid = BootstrapConfig::new(solver).lambda_grid;
        let lambda = select_lambda(h, solver, &grid, 5, penalty, lasso)?;
        let theta = fit_regularized(solver, &h.stats(None), lambda, penalty, lasso, None)?;
        out.push(theta.as_slice().to_vec());
    }
    let lasso = out.pop().expect("two fits");
    let ridge = out.pop().expect("two fits");
    Ok(ArmFits { ridge, lasso })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

pub fn lasso_ridge_precheck(
    spec: &EnvSpec,
    features: FeatureMap,
    n: usize,
    refit_every: usize,
    test_points: usize,
    seed: u64,
) -> Result<MsePrecheck> {
    if matches!(spec, EnvSpec::Classification { .. }) {
        return Err(HarnessError::Config("the MSE pre-check needs a synthetic environment".into()));
    }
    if n == 0 || refit_every == 0 || test_points == 0 {
        return Err(HarnessError::Config("pre-check needs n, refit_every and test_points >= 1".into()));
    }
    let mut env = make_env(spec, None, seed)?;
    let k = env.n_arms();
    let d = features.dim(env.context_dim());
    let mut rng = stream(mix(seed, 1), 0);
    let penalty: Option<Vec<f64>> =
        features.has_intercept().then(|| (0..d).map(|j| if j == 0 { 0.0 } else { 1.0 }).collect());
    let mut histories: Vec<ArmHistory> = (0..k).map(|a| ArmHistory::new(a, d)).collect();
    let mut fits: Vec<ArmFits> = (0..k).map(|_| ArmFits { ridge: vec![0.0; d], lasso: vec![0.0; d] }).collect();
    let mut cum_r = vec![0.0; k];
    let mut cum_l = vec![0.0; k];
    for t in 0..n {
        if t > 0 && t % refit_every == 0 {
            for a in 0..k {
                fits[a] = fit_arm(&histories[a], penalty.as_deref())?;
            }
        }
        let draw = env.next_draw().ok_or_else(|| HarnessError::Runtime("environment exhausted".into()))?;
        let phi = features.apply(&draw.context);
        for a in 0..k {
            cum_r[a] += (dot(&fits[a].ridge, &phi) - draw.expected[a]).powi(2);
            cum_l[a] += (dot(&fits[a].lasso, &phi) - draw.expected[a]).powi(2);
        }
        let arm = rng.random_range(0..k);
        histories[arm].push(&phi, draw.realized[arm])?;
    }
    for a in 0..k {
        fits[a] = fit_arm(&histories[a], penalty.as_deref())?;
    }
    let test = env.population_sample(test_points, mix(seed, 2));
    let mut final_ridge = vec![0.0; k];
    let mut final_lasso = vec![0.0; k];
    for t in &test {
        let phi = features.apply(&t.context);
        for a in 0..k {
            final_ridge[a] += (dot(&fits[a].ridge, &phi) - t.expected[a]).powi(2) / test.len() as f64;
            final_lasso[a] += (dot(&fits[a].lasso, &phi) - t.expected[a]).powi(2) / test.len() as f64;
        }
    }
    Ok(MsePrecheck {
        observations: n,
        cumulative_ridge: cum_r.iter().map(|v| v / n as f64).collect(),
        cumulative_lasso: cum_l.iter().map(|v| v / n as f64).collect(),
        final_ridge,
        final_lasso,
    })
}
