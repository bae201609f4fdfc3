//! Best assignment within a policy's feature class.
//!
//! For a policy that models each arm as linear in `phi(x)`, the assignment it
//! can at best converge to is the argmax of each arm's population
//! least-squares projection `phi(x)' beta_a`, with
//! `beta_a = E[phi phi']^{-1} E[phi mu_a(x)]` under the online context
//! distribution.

use bandit_core::env::{first_argmax, Environment};
use bandit_core::estimator::SufficientStats;
use bandit_core::features::FeatureMap;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTarget {
    pub features: FeatureMap,
    /// One projection per arm, in feature coordinates.
    pub coefficients: Vec<Vec<f64>>,
}

impl ClassTarget {
    /// Monte-Carlo projection from `n` noiseless population draws.
    pub fn fit(env: &dyn Environment, features: FeatureMap, n: usize, seed: u64) -> Result<Self> {
        let raw = env.context_dim();
        let d = features.dim(raw);
        if n < d {
            return Err(HarnessError::Config(format!("best_in_class target needs at least {d} samples")));
        }
        let draws = env.population_sample(n, seed);
        let mut per_arm = vec![SufficientStats::zeros(d); env.n_arms()];
        for draw in &draws {
            let phi = features.apply(&draw.context);
            for (a, s) in per_arm.iter_mut().enumerate() {
                s.add_row(&phi, draw.expected[a], 1.0);
            }
        }
        let coefficients = per_arm
            .iter()
            .map(|s| s.ridge_solve(0.0, None).map(|b| b.as_slice().to_vec()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { features, coefficients })
    }

    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        let phi = self.features.apply(x);
        self.coefficients.iter().map(|b| b.iter().zip(&phi).map(|(u, v)| u * v).sum()).collect()
    }

    pub fn arm(&self, x: &[f64]) -> usize {
        first_argmax(&self.values(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bandit_core::env::{SparseLinearEnv, SyntheticQuadraticEnv};

    #[test]
    fn linear_truth_is_recovered() {
        // the sparse design is linear with intercept, so the projection is exact
        let env = SparseLinearEnv::new(6, 2, 0.5, 1).unwrap();
        let t = ClassTarget::fit(&env, FeatureMap::Linear, 5000, 2).unwrap();
        let b = &t.coefficients[1];
        assert!((b[0] - 1.0).abs() < 1e-9 && (b[1] + 1.0).abs() < 1e-9);
        assert!((b[3] - 1.0).abs() < 1e-9 && (b[4] - 1.0).abs() < 1e-9 && b[5].abs() < 1e-9);
    }

    #[test]
    fn quadratic_projection_matches_moments() {
        // E[mu_0 | linear] for mu_0 = 0.5(x0+1)^2 + 0.5(x1+1)^2, x ~ N(0, I):
        // intercept 0.5*2 + 0.5*2 = 2, slopes 1 and 1.
        let env = SyntheticQuadraticEnv::new(0);
        let t = ClassTarget::fit(&env, FeatureMap::Linear, 200_000, 9).unwrap();
        let b = &t.coefficients[0];
        assert!((b[0] - 2.0).abs() < 0.03, "{b:?}");
        assert!((b[1] - 1.0).abs() < 0.03 && (b[2] - 1.0).abs() < 0.03, "{b:?}");
        let c = &t.coefficients[2];
        assert!((c[0] + 0.0).abs() < 0.03 && (c[1] + 1.0).abs() < 0.03, "{c:?}");
        // far along the diagonal arm 0 wins, far against it arm 2 does
        assert_eq!(t.arm(&[3.0, 3.0]), 0);
        assert_eq!(t.arm(&[-3.0, -3.0]), 2);
        // quadratic features are exact
        let q = ClassTarget::fit(&env, FeatureMap::Quadratic, 2000, 9).unwrap();
        for x in [[0.3, -1.2], [1.0, 0.5], [-2.0, 0.1]] {
            let want = bandit_core::env::quadratic_mean(&x);
            for (v, w) in q.values(&x).iter().zip(&want) {
                assert!((v - w).abs() < 1e-8);
            }
        }
    }
}
