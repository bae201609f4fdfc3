//! Assignment probabilities and the clipped inverse-propensity weights built
//! from them.
//!
//! Thompson sampling propensities are known in principle and are estimated
//! here by Monte Carlo over stored posterior snapshots. UCB assignments are
//! deterministic given the history, so their propensities come from a
//! multinomial logistic model of the chosen arm on the context.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, BanditError, Result};
use crate::estimator::{predict_mean_var, FittedArmModel};
use crate::linalg::spd_cholesky;
use crate::rng::argmax_random_tie;

/// `1 / max(gamma, p)`, which lies in `[1, 1/gamma]`.
pub fn clip_to_weight(p: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(BanditError::Parameter(format!("gamma must lie in (0,1), got {gamma}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(BanditError::Parameter(format!("propensity must lie in [0,1], got {p}")));
    }
    Ok(1.0 / gamma.max(p))
}

/// Per-arm models as they stood after the refit at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub time: usize,
    pub models: Vec<FittedArmModel>,
}

/// Append-only store of snapshots with strictly increasing times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStore {
    snapshots: Vec<ModelSnapshot>,
}

impl SnapshotStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, snapshot: ModelSnapshot) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if snapshot.time <= last.time {
                return Err(BanditError::State(format!(
                    "snapshot time {} does not follow {}",
                    snapshot.time, last.time
                )));
            }
        }
        self.snapshots.push(snapshot);
        Ok(())
    }

    /// Replaces the most recent snapshot, keeping its position.
    pub fn replace_last(&mut self, snapshot: ModelSnapshot) {
        if let Some(last) = self.snapshots.last_mut() {
            *last = snapshot;
        } else {
            self.snapshots.push(snapshot);
        }
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[ModelSnapshot] {
        &self.snapshots
    }
}

/// Monte-Carlo Thompson-sampling propensities for context `x`.
///
/// Each iteration picks a stored snapshot uniformly, samples every arm's
/// reward under `N(theta, alpha^2 V)` and records the arm with the highest
/// sampled reward. Only the scalar `x' theta~` enters the argmax, and it is
/// distributed exactly as `N(x' theta, alpha^2 x' V x)`, so that scalar is
/// drawn directly.
pub fn ts_propensity_mc<R: Rng + ?Sized>(
    store: &SnapshotStore,
    x: &[f64],
    alpha: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if store.is_empty() {
        return Err(BanditError::State("no posterior snapshots stored".into()));
    }
    if n_draws == 0 {
        return Err(BanditError::Parameter("n_draws must be at least 1".into()));
    }
    let moments: Vec<Vec<(f64, f64)>> = store
        .snapshots()
        .iter()
        .map(|s| {
            s.models
                .iter()
                .map(|m| predict_mean_var(m, x).map(|(mu, s2)| (mu, alpha * s2.sqrt())))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(mc_argmax_frequencies(&moments, n_draws, rng))
}

/// Frequencies with which each arm has the largest draw, where a draw picks a
/// row of `moments` uniformly and then samples `N(mean, sd^2)` per arm.
pub fn mc_argmax_frequencies<R: Rng + ?Sized>(moments: &[Vec<(f64, f64)>], n_draws: usize, rng: &mut R) -> Vec<f64> {
    let k = moments[0].len();
    let mut counts = vec![0usize; k];
    let mut sampled = vec![0.0; k];
    for _ in 0..n_draws {
        let row = if moments.len() == 1 { &moments[0] } else { &moments[rng.random_range(0..moments.len())] };
        for (s, (mu, sd)) in sampled.iter_mut().zip(row) {
            *s = if *sd > 0.0 { mu + sd * rng.sample::<f64, _>(StandardNormal) } else { *mu };
        }
        counts[argmax_random_tie(&sampled, rng)] += 1;
    }
    let n = n_draws as f64;
    counts.iter().map(|c| *c as f64 / n).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitOptions {
    pub l2: f64,
    pub max_iter: usize,
    /// Convergence threshold on the gradient norm, per observation.
    pub tol: f64,
}

impl Default for LogitOptions {
    fn default() -> Self {
        Self { l2: 1.0, max_iter: 100, tol: 1e-6 }
    }
}

/// Symmetric softmax-linear classifier with an intercept per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialLogit {
    n_arms: usize,
    dim: usize,
    /// `n_arms x (dim + 1)`; the last column is the intercept.
    coef: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl MultinomialLogit {
    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coef
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(softmax_row(&self.coef, x))
    }
}

fn softmax_row(coef: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let k = coef.nrows();
    let d = x.len();
    let mut z: Vec<f64> = (0..k)
        .map(|a| {
            let mut s = coef[(a, d)];
            for j in 0..d {
                s += coef[(a, j)] * x[j];
            }
            s
        })
        .collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
    z
}

struct LogitProblem<'a> {
    x: &'a DMatrix<f64>,
    arms: &'a [usize],
    k: usize,
    l2: f64,
}

impl LogitProblem<'_> {
    fn p(&self) -> usize {
        self.x.ncols() + 1
    }

    fn row(&self, i: usize, buf: &mut [f64]) {
        let d = self.x.ncols();
        for j in 0..d {
            buf[j] = self.x[(i, j)];
        }
        buf[d] = 1.0;
    }

    fn objective(&self, coef: &DMatrix<f64>) -> f64 {
        let p = self.p();
        let mut buf = vec![0.0; p];
        let mut ll = 0.0;
        for i in 0..self.x.nrows() {
            self.row(i, &mut buf);
            let probs = softmax_row(coef, &buf[..p - 1]);
            ll += probs[self.arms[i]].max(f64::MIN_POSITIVE).ln();
        }
        ll - 0.5 * self.l2 * coef.norm_squared()
    }

    /// Gradient of the regularized log-likelihood, and optionally the
    /// negated Hessian, both over the row-major flattening of `coef`.
    fn derivatives(&self, coef: &DMatrix<f64>, with_hessian: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let p = self.p();
        let k = self.k;
        let dim = k * p;
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = if with_hessian { Some(DMatrix::<f64>::zeros(dim, dim)) } else { None };
        let mut buf = vec![0.0; p];
        let mut outer = vec![0.0; p * p];
        for i in 0..self.x.nrows() {
            self.row(i, &mut buf);
            let probs = softmax_row(coef, &buf[..p - 1]);
            for a in 0..k {
                let resid = f64::from(u8::from(self.arms[i] == a)) - probs[a];
                for j in 0..p {
                    grad[a * p + j] += resid * buf[j];
                }
            }
            if let Some(h) = hess.as_mut() {
                for j in 0..p {
                    for l in 0..p {
                        outer[j * p + l] = buf[j] * buf[l];
                    }
                }
                for a in 0..k {
                    for b in a..k {
                        let c = probs[a] * (f64::from(u8::from(a == b)) - probs[b]);
                        if c == 0.0 {
                            continue;
                        }
                        for j in 0..p {
                            for l in 0..p {
                                h[(a * p + j, b * p + l)] += c * outer[j * p + l];
                            }
                        }
                    }
                }
            }
        }
        for a in 0..k {
            for j in 0..p {
                grad[a * p + j] -= self.l2 * coef[(a, j)];
            }
        }
        if let Some(h) = hess.as_mut() {
            for a in 0..k {
                for b in (a + 1)..k {
                    for j in 0..p {
                        for l in 0..p {
                            h[(b * p + l, a * p + j)] = h[(a * p + j, b * p + l)];
                        }
                    }
                }
            }
            for i in 0..dim {
                h[(i, i)] += self.l2;
            }
        }
        (grad, hess)
    }
}

/// Gradient of the L2-regularized multinomial log-likelihood at `model`.
pub fn logit_gradient(model: &MultinomialLogit, contexts: &DMatrix<f64>, arms: &[usize], l2: f64) -> DVector<f64> {
    LogitProblem { x: contexts, arms, k: model.n_arms, l2 }.derivatives(&model.coef, false).0
}

/// Fits `p(a | x)` by L2-regularized maximum likelihood, using Newton ascent
/// steps with backtracking. `contexts` is `n x d`.
///
/// Hitting `max_iter` is not an error: the best iterate comes back with
/// `converged == false`. `warm_start` seeds the iteration.
pub fn ucb_propensity_logistic(
    contexts: &DMatrix<f64>,
    arms: &[usize],
    n_arms: usize,
    options: LogitOptions,
    warm_start: Option<&MultinomialLogit>,
) -> Result<MultinomialLogit> {
    check_dim(contexts.nrows(), arms.len())?;
    if contexts.nrows() == 0 {
        return Err(BanditError::State("logistic propensity needs at least one observation".into()));
    }
    if options.l2 < 0.0 || !options.l2.is_finite() {
        return Err(BanditError::Parameter(format!("l2 must be non-negative, got {}", options.l2)));
    }
    if let Some(a) = arms.iter().find(|a| **a >= n_arms) {
        return Err(BanditError::Parameter(format!("arm {a} out of range for {n_arms} arms")));
    }
    let d = contexts.ncols();
    let problem = LogitProblem { x: contexts, arms, k: n_arms, l2: options.l2 };
    let p = d + 1;
    let mut coef = match warm_start {
        Some(w) if w.n_arms == n_arms && w.dim == d => w.coef.clone(),
        _ => DMatrix::zeros(n_arms, p),
    };
    let threshold = options.tol * contexts.nrows() as f64;
    let mut obj = problem.objective(&coef);
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let (grad, hess) = problem.derivatives(&coef, true);
        grad_norm = grad.norm();
        if grad_norm <= threshold || iterations >= options.max_iter {
            break;
        }
        iterations += 1;
        let step = spd_cholesky(&hess.expect("hessian requested"))?.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = coef.clone();
            for a in 0..n_arms {
                for j in 0..p {
                    trial[(a, j)] += t * step[a * p + j];
                }
            }
            let trial_obj = problem.objective(&trial);
            if trial_obj >= obj {
                coef = trial;
                obj = trial_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(MultinomialLogit {
        n_arms,
        dim: d,
        coef,
        converged: grad_norm <= threshold,
        iterations,
        gradient_norm: grad_norm,
    })
}
