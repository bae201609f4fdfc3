//! Honest regression forests and forest Thompson sampling.
//!
//! Each tree draws a subsample without replacement and splits it in half:
//! the first half chooses the splits (CART variance reduction over a random
//! subset of the node's non-constant features), the second half alone sets
//! the leaf values. A leaf with fewer than `min_leaf` estimation observations
//! takes its parent's estimate.
//!
//! The variance reported by [`ForestModel::predict`] is the between-tree
//! sample variance of the per-tree predictions. This is a simplification: it
//! is the plain ensemble dispersion, not the little-bags variance estimator
//! of generalized random forests, and it is not a calibrated standard error
//! of the forest mean.
//!
//! Forests ignore observation weights. Inverse-propensity weighting enters
//! either by replicating rows ([`apply_ipw_replication`]) or by adding the
//! propensity as a feature ([`apply_propensity_feature`]).

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, BanditError, Result};
use crate::estimator::ArmHistory;
use crate::par::{map_range, Execution};
use crate::policy::{Policy, WarmStartRecord};
use crate::propensity::{clip_to_weight, mc_argmax_frequencies};
use crate::rng::{argmax_random_tie, fork_seed, mix, stream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub subsample_rate: f64,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Features tried per node; `None` is `ceil(sqrt(k))` of the node's `k`
    /// non-constant features.
    pub feature_subset_size: Option<usize>,
    pub variance_floor: f64,
    pub execution: Execution,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            subsample_rate: 0.5,
            min_leaf: 5,
            max_depth: None,
            feature_subset_size: None,
            variance_floor: 0.0,
            execution: Execution::default(),
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 2 {
            return Err(BanditError::Parameter("a forest needs at least 2 trees".into()));
        }
        if !(self.subsample_rate > 0.0 && self.subsample_rate <= 1.0) {
            return Err(BanditError::Parameter("subsample_rate must be in (0, 1]".into()));
        }
        if self.min_leaf == 0 || self.feature_subset_size == Some(0) || !(self.variance_floor >= 0.0) {
            return Err(BanditError::Parameter(
                "min_leaf and feature_subset_size must be positive, variance_floor non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Row-major design and responses shared by the trees of one forest.
struct Data<'a> {
    x: &'a [f64],
    r: &'a [f64],
    dim: usize,
}

impl Data<'_> {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.dim + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestTree {
    nodes: Vec<Node>,
    pub min_leaf: usize,
}

impl HonestTree {
    /// Grows the structure on `split_idx` and fills leaves from `estimate_idx`.
    /// `contexts` is row-major with `dim` columns.
    pub fn fit<R: Rng + ?Sized>(
        contexts: &[f64],
        rewards: &[f64],
        dim: usize,
        split_idx: &[usize],
        estimate_idx: &[usize],
        config: &ForestConfig,
        rng: &mut R,
    ) -> Result<Self> {
        check_dim(rewards.len() * dim, contexts.len())?;
        if estimate_idx.is_empty() || split_idx.is_empty() {
            return Err(BanditError::State("both half-samples must be non-empty".into()));
        }
        let data = Data { x: contexts, r: rewards, dim };
        let mut nodes = Vec::new();
        grow(&data, split_idx.to_vec(), 0, config, rng, &mut nodes);
        let mut tree = HonestTree { nodes, min_leaf: config.min_leaf };
        tree.estimate(&data, estimate_idx);
        Ok(tree)
    }

    fn estimate(&mut self, data: &Data, estimate_idx: &[usize]) {
        let n_nodes = self.nodes.len();
        let mut sums = vec![0.0; n_nodes];
        let mut counts = vec![0usize; n_nodes];
        for &i in estimate_idx {
            let mut k = 0;
            loop {
                sums[k] += data.r[i];
                counts[k] += 1;
                match self.nodes[k] {
                    Node::Leaf { .. } => break,
                    Node::Split { feature, threshold, left, right } => {
                        k = if data.at(i, feature) <= threshold { left } else { right };
                    }
                }
            }
        }
        // children are always pushed after their parent, so one forward pass suffices
        let mut values = vec![0.0; n_nodes];
        values[0] = sums[0] / counts[0] as f64;
        for k in 0..n_nodes {
            if let Node::Split { left, right, .. } = self.nodes[k] {
                for c in [left, right] {
                    values[c] = if counts[c] >= self.min_leaf { sums[c] / counts[c] as f64 } else { values[k] };
                }
            }
        }
        for (k, node) in self.nodes.iter_mut().enumerate() {
            if let Node::Leaf { value } = node {
                *value = values[k];
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    k = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    /// Split features and thresholds in node order; leaves appear as `None`.
    pub fn structure(&self) -> Vec<Option<(usize, f64)>> {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Leaf { .. } => None,
                Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            })
            .collect()
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { value } => Some(*value),
                Node::Split { .. } => None,
            })
            .collect()
    }
}

/// Best variance-reduction split of `idx` on `feature`, as (gain, threshold).
fn best_split(data: &Data, idx: &[usize], feature: usize, min_leaf: usize) -> Option<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = idx.iter().map(|&i| (data.at(i, feature), data.r[i])).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut left = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for i in 1..n {
        left += pairs[i - 1].1;
        if i < min_leaf || n - i < min_leaf || pairs[i - 1].0 == pairs[i].0 {
            continue;
        }
        let right = total - left;
        let gain = left * left / i as f64 + right * right / (n - i) as f64 - total * total / n as f64;
        if best.is_none_or(|(g, _)| gain > g) {
            let mid = 0.5 * (pairs[i - 1].0 + pairs[i].0);
            let threshold = if mid < pairs[i].0 { mid } else { pairs[i - 1].0 };
            best = Some((gain, threshold));
        }
    }
    best
}

fn grow<R: Rng + ?Sized>(
    data: &Data,
    idx: Vec<usize>,
    depth: usize,
    config: &ForestConfig,
    rng: &mut R,
    nodes: &mut Vec<Node>,
) -> usize {
    let me = nodes.len();
    nodes.push(Node::Leaf { value: 0.0 });
    if idx.len() < 2 * config.min_leaf || config.max_depth.is_some_and(|m| depth >= m) {
        return me;
    }
    let candidates: Vec<usize> = (0..data.dim)
        .filter(|&j| {
            let first = data.at(idx[0], j);
            idx.iter().any(|&i| data.at(i, j) != first)
        })
        .collect();
    if candidates.is_empty() {
        return me;
    }
    let default_mtry = (candidates.len() as f64).sqrt().ceil() as usize;
    let mtry = config.feature_subset_size.unwrap_or(default_mtry).min(candidates.len());
    let mut best: Option<(f64, usize, f64)> = None;
    for k in sample(rng, candidates.len(), mtry).into_iter() {
        let feature = candidates[k];
        if let Some((gain, threshold)) = best_split(data, &idx, feature, config.min_leaf) {
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, feature, threshold));
            }
        }
    }
    let Some((gain, feature, threshold)) = best else { return me };
    if !(gain > 1e-12) {
        return me;
    }
    let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| data.at(i, feature) <= threshold);
    let left = grow(data, l, depth + 1, config, rng, nodes);
    let right = grow(data, r, depth + 1, config, rng, nodes);
    nodes[me] = Node::Split { feature, threshold, left, right };
    me
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<HonestTree>,
    pub subsample_rate: f64,
    pub feature_subset_size: Option<usize>,
    pub variance_floor: f64,
    pub dim: usize,
}

impl ForestModel {
    pub fn per_tree(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }

    /// Mean of the tree predictions and their sample variance, floored.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.dim, x.len())?;
        let preds = self.per_tree(x);
        let m = preds.len() as f64;
        let mu = preds.iter().sum::<f64>() / m;
        let s2 = preds.iter().map(|p| (p - mu).powi(2)).sum::<f64>() / (m - 1.0);
        Ok((mu, s2.max(self.variance_floor)))
    }
}

/// Fits an honest forest; tree `t` uses stream `t` of `seed`.
pub fn fit_honest_forest_seeded(history: &ArmHistory, config: &ForestConfig, seed: u64) -> Result<ForestModel> {
    config.validate()?;
    let n = history.len();
    if n < 2 * config.min_leaf {
        return Err(BanditError::State(format!("forest needs at least {} observations, got {n}", 2 * config.min_leaf)));
    }
    let dim = history.dim();
    let contexts: Vec<f64> = history.contexts().flatten().copied().collect();
    let rewards = history.rewards();
    let size = ((config.subsample_rate * n as f64).ceil() as usize).clamp(2, n);
    let trees = map_range(config.execution, config.n_trees, |t| {
        let mut rng = stream(seed, t as u64);
        let mut idx = sample(&mut rng, n, size).into_vec();
        idx.shuffle(&mut rng);
        let (split, estimate) = idx.split_at(size / 2);
        HonestTree::fit(&contexts, rewards, dim, split, estimate, config, &mut rng)
    });
    Ok(ForestModel {
        trees: trees.into_iter().collect::<Result<_>>()?,
        subsample_rate: config.subsample_rate,
        feature_subset_size: config.feature_subset_size,
        variance_floor: config.variance_floor,
        dim,
    })
}

pub fn fit_honest_forest<R: Rng + ?Sized>(
    history: &ArmHistory,
    config: &ForestConfig,
    rng: &mut R,
) -> Result<ForestModel> {
    fit_honest_forest_seeded(history, config, fork_seed(rng))
}

/// Each row repeated `round(w)` times (half away from zero), with unit weight.
pub fn apply_ipw_replication(history: &ArmHistory, weights: &[f64]) -> Result<ArmHistory> {
    check_dim(history.len(), weights.len())?;
    if weights.iter().any(|w| !(*w >= 1.0 && w.is_finite())) {
        return Err(BanditError::Parameter("replication weights must be finite and at least 1".into()));
    }
    let mut out = ArmHistory::new(history.arm(), history.dim());
    for (i, w) in weights.iter().enumerate() {
        for _ in 0..(w.round() as usize) {
            out.push(history.context(i), history.rewards()[i])?;
        }
    }
    Ok(out)
}

/// Appends each observation's propensity as a final context coordinate.
pub fn apply_propensity_feature(history: &ArmHistory, propensities: &[f64]) -> Result<ArmHistory> {
    check_dim(history.len(), propensities.len())?;
    if propensities.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(BanditError::Parameter("propensities must lie in [0, 1]".into()));
    }
    let mut out = ArmHistory::new(history.arm(), history.dim() + 1);
    let mut row = Vec::with_capacity(history.dim() + 1);
    for (i, p) in propensities.iter().enumerate() {
        row.clear();
        row.extend_from_slice(history.context(i));
        row.push(*p);
        out.push_weighted(&row, history.rewards()[i], history.weights()[i])?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestIpw {
    #[default]
    None,
    Replication,
    PropensityFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestPolicyConfig {
    pub forest: ForestConfig,
    pub alpha: f64,
    pub ipw: ForestIpw,
    pub gamma: f64,
    pub propensity_draws: usize,
    /// An arm is refit once its history has grown by
    /// `max(refit_cadence, refit_growth * n)` since its last fit.
    pub refit_cadence: usize,
    pub refit_growth: f64,
}

impl Default for ForestPolicyConfig {
    fn default() -> Self {
        Self {
            forest: ForestConfig::default(),
            alpha: 1.0,
            ipw: ForestIpw::None,
            gamma: 0.1,
            propensity_draws: 1000,
            refit_cadence: 10,
            refit_growth: 0.1,
        }
    }
}

impl ForestPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        self.forest.validate()?;
        if !(self.alpha >= 0.0) || !(self.refit_growth >= 0.0) || self.refit_cadence == 0 {
            return Err(BanditError::Parameter("need alpha >= 0, refit_growth >= 0, refit_cadence >= 1".into()));
        }
        if self.ipw != ForestIpw::None && (!(self.gamma > 0.0 && self.gamma < 1.0) || self.propensity_draws == 0) {
            return Err(BanditError::Parameter("balanced forests need gamma in (0,1) and propensity draws".into()));
        }
        Ok(())
    }
}

/// Thompson sampling with `mu_a ~ N(mu, alpha^2 s2)` from per-arm honest forests.
///
/// With IPW enabled, the probability that the chosen arm would be picked is
/// estimated by Monte Carlo from the same per-arm moments at selection time
/// (`1/K` during the uniform start-up phase) and stored with the observation.
#[derive(Debug, Clone)]
pub struct ForestPolicy {
    config: ForestPolicyConfig,
    n_arms: usize,
    dim: usize,
    histories: Vec<ArmHistory>,
    propensities: Vec<Vec<f64>>,
    forests: Vec<Option<ForestModel>>,
    fitted_len: Vec<usize>,
    last_propensities: Option<Vec<f64>>,
    select_rng: StreamRng,
    propensity_rng: StreamRng,
    fit_rng: StreamRng,
}

impl ForestPolicy {
    pub fn new(config: ForestPolicyConfig, n_arms: usize, dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_arms == 0 || dim == 0 {
            return Err(BanditError::Parameter("need at least one arm and one feature".into()));
        }
        Ok(Self {
            config,
            n_arms,
            dim,
            histories: (0..n_arms).map(|a| ArmHistory::new(a, dim)).collect(),
            propensities: vec![Vec::new(); n_arms],
            forests: vec![None; n_arms],
            fitted_len: vec![0; n_arms],
            last_propensities: None,
            select_rng: stream(mix(seed, 1), 0),
            propensity_rng: stream(mix(seed, 2), 0),
            fit_rng: stream(mix(seed, 3), 0),
        })
    }

    pub fn forest(&self, arm: usize) -> Option<&ForestModel> {
        self.forests[arm].as_ref()
    }

    fn due(&self, arm: usize) -> bool {
        let n = self.histories[arm].len();
        if n < 2 * self.config.forest.min_leaf {
            return false;
        }
        if self.forests[arm].is_none() {
            return true;
        }
        let last = self.fitted_len[arm];
        let step = (self.config.refit_growth * last as f64).ceil() as usize;
        n - last >= step.max(self.config.refit_cadence)
    }

    fn training_history(&self, arm: usize) -> Result<ArmHistory> {
        let h = &self.histories[arm];
        match self.config.ipw {
            ForestIpw::None => Ok(h.clone()),
            ForestIpw::Replication => {
                let weights = self.propensities[arm]
                    .iter()
                    .map(|p| clip_to_weight(*p, self.config.gamma))
                    .collect::<Result<Vec<_>>>()?;
                apply_ipw_replication(h, &weights)
            }
            ForestIpw::PropensityFeature => apply_propensity_feature(h, &self.propensities[arm]),
        }
    }

    fn refit(&mut self, arm: usize) -> Result<()> {
        let training = self.training_history(arm)?;
        let seed = fork_seed(&mut self.fit_rng);
        self.forests[arm] = Some(fit_honest_forest_seeded(&training, &self.config.forest, seed)?);
        self.fitted_len[arm] = self.histories[arm].len();
        Ok(())
    }

    /// Per-arm forest moments at `x`, with `p` appended in feature mode.
    fn moments(&self, x: &[f64], p: Option<&[f64]>) -> Result<Vec<(f64, f64)>> {
        let mut row = x.to_vec();
        self.forests
            .iter()
            .enumerate()
            .map(|(a, f)| {
                let f = f.as_ref().expect("all arms fitted");
                if let Some(p) = p {
                    row.truncate(x.len());
                    row.push(p[a]);
                }
                let (mu, s2) = f.predict(&row)?;
                Ok((mu, self.config.alpha * s2.sqrt()))
            })
            .collect()
    }

    fn assignment_probabilities(&mut self, moments: &[(f64, f64)]) -> Vec<f64> {
        mc_argmax_frequencies(&[moments.to_vec()], self.config.propensity_draws, &mut self.propensity_rng)
    }
}

impl Policy for ForestPolicy {
    fn n_arms(&self) -> usize {
        self.n_arms
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn select(&mut self, x: &[f64]) -> Result<usize> {
        check_dim(self.dim, x.len())?;
        if self.forests.iter().any(Option::is_none) {
            self.last_propensities = Some(vec![1.0 / self.n_arms as f64; self.n_arms]);
            return Ok(self.select_rng.random_range(0..self.n_arms));
        }
        let moments = match self.config.ipw {
            ForestIpw::None => {
                self.last_propensities = None;
                self.moments(x, None)?
            }
            ForestIpw::Replication => {
                let m = self.moments(x, None)?;
                self.last_propensities = Some(self.assignment_probabilities(&m));
                m
            }
            ForestIpw::PropensityFeature => {
                // first pass at the uniform propensity, second at the implied one
                let uniform = vec![1.0 / self.n_arms as f64; self.n_arms];
                let first = self.moments(x, Some(&uniform))?;
                let p = self.assignment_probabilities(&first);
                let second = self.moments(x, Some(&p))?;
                self.last_propensities = Some(self.assignment_probabilities(&second));
                second
            }
        };
        let scores: Vec<f64> =
            moments.iter().map(|(mu, sd)| mu + sd * self.select_rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(argmax_random_tie(&scores, &mut self.select_rng))
    }

    fn update(&mut self, x: &[f64], arm: usize, reward: f64) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if arm >= self.n_arms {
            return Err(BanditError::Parameter(format!("arm {arm} out of range")));
        }
        let p = self.last_propensities.take().map_or(1.0 / self.n_arms as f64, |p| p[arm]);
        self.histories[arm].push(x, reward)?;
        self.propensities[arm].push(p);
        if self.due(arm) {
            self.refit(arm)?;
        }
        Ok(())
    }

    fn warm_start(&mut self, batch: &[WarmStartRecord]) -> Result<()> {
        for rec in batch {
            check_dim(self.dim, rec.context.len())?;
            self.histories[rec.arm].push(&rec.context, rec.reward)?;
            self.propensities[rec.arm].push(rec.propensity);
        }
        for a in 0..self.n_arms {
            if self.due(a) {
                self.refit(a)?;
            }
        }
        Ok(())
    }

    fn predict_means(&self, x: &[f64]) -> Option<Vec<f64>> {
        if self.forests.iter().any(Option::is_none) {
            return None;
        }
        let p = (self.config.ipw == ForestIpw::PropensityFeature).then(|| vec![1.0 / self.n_arms as f64; self.n_arms]);
        self.moments(x, p.as_deref()).ok().map(|m| m.into_iter().map(|(mu, _)| mu).collect())
    }
}
