//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "quadratic-well-specified"
//! horizon = 2000
//! replications = 100
//! seed = 7
//!
//! [environment]
//! kind = "quadratic"
//!
//! [evaluation]
//! window = 500
//! threshold = 0.95
//! target = "optimal"
//!
//! [[policies]]
//! kind = "blts"
//! features = "quadratic"
//! alpha = [0.25, 0.5, 1.0]
//! gamma = [0.01, 0.05, 0.1, 0.2]
//! ```
//!
//! Grid-valued keys (`alpha`, `gamma`) expand into one grid point per
//! combination; everything else is a scalar override of the policy default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bandit_core::bootstrap::{BootstrapConfig, DrawMode, Solver};
use bandit_core::env::{Dataset, NONLINEAR_DIM, NONLINEAR_NOISE_SD, SPARSE_DIM, SPARSE_NUISANCE};
use bandit_core::features::FeatureMap;
use bandit_core::forest::{ForestConfig, ForestIpw, ForestPolicyConfig};
use bandit_core::gibbs::{GibbsConfig, PrecisionForm};
use bandit_core::linear::{LinearKind, PolicyConfig, VarianceScale};
use bandit_core::par::Execution;

use crate::error::{HarnessError, Result};

/// Thompson-sampling exploration grid.
pub const TS_ALPHA_GRID: [f64; 3] = [0.25, 0.5, 1.0];
/// UCB exploration grid.
pub const UCB_ALPHA_GRID: [f64; 3] = [1.0, 2.0, 4.0];
/// Propensity clipping grid of the balanced policies.
pub const GAMMA_GRID: [f64; 4] = [0.01, 0.05, 0.1, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub horizon: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub traces: TraceOutput,
    #[serde(default)]
    pub evaluation: Evaluation,
    pub environment: EnvSpec,
    pub policies: Vec<PolicySpec>,
}

fn default_replications() -> usize {
    20
}

/// Which grid points get per-seed trace files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOutput {
    /// Only each policy's selected grid point.
    #[default]
    Best,
    All,
    None,
}

/// Reference assignment against which "found the optimal assignment" is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentTarget {
    /// The arm with the highest noiseless expected reward.
    #[default]
    Optimal,
    /// The best assignment available to the policy's feature class: the argmax
    /// of each arm's population least-squares projection onto the features.
    BestInClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Evaluation {
    pub window: usize,
    pub threshold: f64,
    pub target: AssignmentTarget,
    /// Monte-Carlo sample size for the best-in-class projection.
    pub target_samples: usize,
    /// Size of the held-out set for per-arm MSE tracking; 0 disables it.
    pub mse_points: usize,
    pub mse_every: usize,
}

impl Default for Evaluation {
    fn default() -> Self {
        Self {
            window: 500,
            threshold: 0.95,
            target: AssignmentTarget::Optimal,
            target_samples: 200_000,
            mse_points: 0,
            mse_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Quadratic {
        #[serde(default = "yes")]
        warm_start: bool,
    },
    SparseLinear {
        #[serde(default = "sparse_dim")]
        dim: usize,
        #[serde(default = "sparse_nuisance")]
        nuisance: usize,
        noise_sd: f64,
    },
    Nonlinear {
        #[serde(default = "nonlinear_dim")]
        dim: usize,
        #[serde(default = "nonlinear_noise")]
        noise_sd: f64,
    },
    /// A labelled table served once in shuffled order; either a CSV file or a
    /// generated separable dataset.
    Classification {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default = "default_label")]
        label: String,
        #[serde(default)]
        synthetic: Option<SyntheticData>,
    },
}

fn yes() -> bool {
    true
}
fn sparse_dim() -> usize {
    SPARSE_DIM
}
fn sparse_nuisance() -> usize {
    SPARSE_NUISANCE
}
fn nonlinear_dim() -> usize {
    NONLINEAR_DIM
}
fn nonlinear_noise() -> f64 {
    NONLINEAR_NOISE_SD
}
fn default_label() -> String {
    "label".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub rows: usize,
    pub classes: usize,
    pub dim: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_radius() -> f64 {
    3.0
}

impl EnvSpec {
    /// Loads or generates the dataset of a classification environment.
    pub fn dataset(&self, base: Option<&Path>) -> Result<Option<Dataset>> {
        let EnvSpec::Classification { path, label, synthetic } = self else { return Ok(None) };
        match (path, synthetic) {
            (Some(p), None) => {
                let full = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                Dataset::from_path(&full, label)
                    .map(Some)
                    .map_err(|e| HarnessError::Config(format!("dataset {}: {e}", full.display())))
            }
            (None, Some(s)) => Dataset::separable_blobs(s.rows, s.classes, s.dim, s.radius, s.seed)
                .map(Some)
                .map_err(|e| HarnessError::Config(e.to_string())),
            _ => Err(HarnessError::Config(
                "classification environment needs exactly one of `path` or `synthetic`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[serde(rename = "lints")]
    LinTs,
    #[serde(rename = "linucb")]
    LinUcb,
    Blts,
    Blucb,
    BootstrapRidge,
    BootstrapLasso,
    BayesianLasso,
    Forest,
    Uniform,
    /// Reads the noiseless outcomes; a regret-zero reference.
    Oracle,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::LinTs => "lints",
            PolicyKind::LinUcb => "linucb",
            PolicyKind::Blts => "blts",
            PolicyKind::Blucb => "blucb",
            PolicyKind::BootstrapRidge => "bootstrap_ridge",
            PolicyKind::BootstrapLasso => "bootstrap_lasso",
            PolicyKind::BayesianLasso => "bayesian_lasso",
            PolicyKind::Forest => "forest",
            PolicyKind::Uniform => "uniform",
            PolicyKind::Oracle => "oracle",
        }
    }

    fn linear(self) -> Option<LinearKind> {
        match self {
            PolicyKind::LinTs => Some(LinearKind::LinTs),
            PolicyKind::LinUcb => Some(LinearKind::LinUcb),
            PolicyKind::Blts => Some(LinearKind::Blts),
            PolicyKind::Blucb => Some(LinearKind::Blucb),
            _ => None,
        }
    }

    fn default_alpha(self) -> Vec<f64> {
        match self {
            PolicyKind::LinTs | PolicyKind::Blts | PolicyKind::Forest => TS_ALPHA_GRID.to_vec(),
            PolicyKind::LinUcb | PolicyKind::Blucb => UCB_ALPHA_GRID.to_vec(),
            _ => vec![1.0],
        }
    }

    fn default_features(self) -> FeatureMap {
        match self {
            PolicyKind::Forest | PolicyKind::Uniform | PolicyKind::Oracle => FeatureMap::Identity,
            _ => FeatureMap::Linear,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    /// Output name; defaults to the kind label.
    #[serde(default)]
    pub name: Option<String>,
    pub kind: Option<PolicyKind>,
    #[serde(default)]
    pub features: Option<FeatureMap>,
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub variance_scale: Option<VarianceScale>,
    #[serde(default)]
    pub refit_cadence: Option<usize>,
    #[serde(default)]
    pub refit_growth: Option<f64>,
    #[serde(default)]
    pub cv_folds: Option<usize>,
    #[serde(default)]
    pub propensity_draws: Option<usize>,
    #[serde(default)]
    pub b_boot: Option<usize>,
    #[serde(default)]
    pub draw: Option<DrawMode>,
    #[serde(default)]
    pub free_intercept: Option<bool>,
    #[serde(default)]
    pub gibbs_lambda: Option<f64>,
    #[serde(default)]
    pub gibbs_iterations: Option<usize>,
    #[serde(default)]
    pub gibbs_precision_form: Option<PrecisionForm>,
    #[serde(default)]
    pub sigma_sq: Option<f64>,
    #[serde(default)]
    pub trees: Option<usize>,
    #[serde(default)]
    pub subsample_rate: Option<f64>,
    #[serde(default)]
    pub min_leaf: Option<usize>,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default)]
    pub ipw: Option<ForestIpw>,
}

impl PolicySpec {
    pub fn of_kind(kind: PolicyKind) -> Self {
        Self { kind: Some(kind), ..Default::default() }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind.expect("validated policy spec")
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind().label().to_string())
    }

    pub fn features(&self) -> FeatureMap {
        self.features.unwrap_or_else(|| self.kind().default_features())
    }

    fn balanced(&self) -> bool {
        match self.kind() {
            PolicyKind::Blts | PolicyKind::Blucb => true,
            PolicyKind::Forest => self.forest_ipw() != ForestIpw::None,
            _ => false,
        }
    }

    /// Unset `ipw` means replication when a gamma grid is given, none otherwise.
    fn forest_ipw(&self) -> ForestIpw {
        match (self.ipw, &self.gamma) {
            (Some(ipw), _) => ipw,
            (None, Some(_)) => ForestIpw::Replication,
            (None, None) => ForestIpw::None,
        }
    }

    /// One builder per (alpha, gamma) combination, in grid order.
    pub fn expand(&self, execution: Execution) -> Result<Vec<GridPoint>> {
        let kind = self.kind.ok_or_else(|| HarnessError::Config("policy without `kind`".into()))?;
        let alphas = self.alpha.clone().unwrap_or_else(|| kind.default_alpha());
        let gammas: Vec<Option<f64>> = if self.balanced() {
            let default = if kind == PolicyKind::Forest { vec![0.1] } else { GAMMA_GRID.to_vec() };
            self.gamma.clone().unwrap_or(default).into_iter().map(Some).collect()
        } else {
            if self.gamma.is_some() {
                return Err(HarnessError::Config(format!("{}: gamma given for an unbalanced policy", self.name())));
            }
            vec![None]
        };
        if alphas.is_empty() || gammas.is_empty() {
            return Err(HarnessError::Config(format!("{}: empty grid", self.name())));
        }
        let mut points = Vec::new();
        for &alpha in &alphas {
            for &gamma in &gammas {
                let builder = self.builder(kind, alpha, gamma, execution)?;
                let mut label = format!("alpha={alpha}");
                if let Some(g) = gamma {
                    label.push_str(&format!(",gamma={g}"));
                }
                points.push(GridPoint { policy: self.name(), label, alpha, gamma, features: self.features(), builder });
            }
        }
        Ok(points)
    }

    fn builder(&self, kind: PolicyKind, alpha: f64, gamma: Option<f64>, execution: Execution) -> Result<Builder> {
        let config_err = |e: bandit_core::error::BanditError| HarnessError::Config(format!("{}: {e}", self.name()));
        let builder = if let Some(lk) = kind.linear() {
            let mut c = PolicyConfig::new(lk, alpha);
            if let Some(g) = gamma {
                c.gamma = g;
            }
            if let Some(v) = &self.lambda_grid {
                c.lambda_grid = v.clone();
            }
            if let Some(v) = self.refit_cadence {
                c.refit_cadence = v;
            }
            if let Some(v) = self.cv_folds {
                c.cv_folds = v;
            }
            if let Some(v) = self.propensity_draws {
                c.propensity_draws = v;
            }
            if let Some(v) = self.variance_scale {
                c.variance_scale = v;
            }
            c.validate().map_err(config_err)?;
            Builder::Linear(c)
        } else {
            match kind {
                PolicyKind::BootstrapRidge | PolicyKind::BootstrapLasso => {
                    let solver = if kind == PolicyKind::BootstrapRidge { Solver::Ridge } else { Solver::Lasso };
                    let mut c = BootstrapConfig::new(solver);
                    c.alpha = alpha;
                    c.execution = execution;
                    c.free_intercept = self.free_intercept.unwrap_or(self.features().has_intercept());
                    if let Some(v) = &self.lambda_grid {
                        c.lambda_grid = v.clone();
                    }
                    if let Some(v) = self.b_boot {
                        c.b_boot = v;
                    }
                    if let Some(v) = self.draw {
                        c.draw = v;
                    }
                    if let Some(v) = self.cv_folds {
                        c.cv_folds = v;
                    }
                    if let Some(v) = self.refit_cadence {
                        c.refit_cadence = v;
                    }
                    if let Some(v) = self.refit_growth {
                        c.refit_growth = v;
                    }
                    c.validate().map_err(config_err)?;
                    Builder::Bootstrap(c)
                }
                PolicyKind::BayesianLasso => {
                    let mut c = GibbsConfig::default();
                    if let Some(v) = self.gibbs_lambda {
                        c.lambda = v;
                    }
                    if let Some(v) = self.gibbs_iterations {
                        c.iterations = v;
                    }
                    if let Some(v) = self.gibbs_precision_form {
                        c.form = v;
                    }
                    c.sigma_sq = self.sigma_sq;
                    c.validate().map_err(config_err)?;
                    Builder::BayesianLasso(c)
                }
                PolicyKind::Forest => {
                    let mut forest = ForestConfig { execution, ..Default::default() };
                    if let Some(v) = self.trees {
                        forest.n_trees = v;
                    }
                    if let Some(v) = self.subsample_rate {
                        forest.subsample_rate = v;
                    }
                    if let Some(v) = self.min_leaf {
                        forest.min_leaf = v;
                    }
                    forest.max_depth = self.max_depth;
                    let mut c = ForestPolicyConfig { forest, alpha, ipw: self.forest_ipw(), ..Default::default() };
                    if let Some(g) = gamma {
                        c.gamma = g;
                    }
                    if let Some(v) = self.propensity_draws {
                        c.propensity_draws = v;
                    }
                    if let Some(v) = self.refit_cadence {
                        c.refit_cadence = v;
                    }
                    if let Some(v) = self.refit_growth {
                        c.refit_growth = v;
                    }
                    c.validate().map_err(config_err)?;
                    Builder::Forest(c)
                }
                PolicyKind::Uniform => Builder::Uniform,
                PolicyKind::Oracle => Builder::Oracle,
                _ => unreachable!("linear kinds handled above"),
            }
        };
        Ok(builder)
    }
}

/// A fully specified policy, ready to instantiate per replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", content = "config", rename_all = "snake_case")]
pub enum Builder {
    Linear(PolicyConfig),
    Bootstrap(BootstrapConfig),
    BayesianLasso(GibbsConfig),
    Forest(ForestPolicyConfig),
    Uniform,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub policy: String,
    pub label: String,
    pub alpha: f64,
    pub gamma: Option<f64>,
    pub features: FeatureMap,
    pub builder: Builder,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Runtime(e.to_string()))
    }

    /// Checks everything that can be checked without running, and expands grids.
    pub fn validate(&self) -> Result<Vec<Vec<GridPoint>>> {
        if self.policies.is_empty() {
            return Err(HarnessError::Config("no policies configured".into()));
        }
        if self.replications == 0 {
            return Err(HarnessError::Config("replications must be at least 1".into()));
        }
        let ev = &self.evaluation;
        if !(ev.threshold > 0.0 && ev.threshold <= 1.0) || ev.window == 0 || ev.mse_every == 0 {
            return Err(HarnessError::Config(
                "evaluation needs window >= 1, mse_every >= 1, threshold in (0,1]".into(),
            ));
        }
        if ev.target == AssignmentTarget::BestInClass && ev.target_samples < 10 {
            return Err(HarnessError::Config("best_in_class target needs target_samples >= 10".into()));
        }
        match &self.environment {
            EnvSpec::SparseLinear { dim, nuisance, noise_sd } if *dim < nuisance + 2 || !(*noise_sd >= 0.0) => {
                return Err(HarnessError::Config("sparse_linear needs dim >= nuisance + 2 and noise_sd >= 0".into()));
            }
            EnvSpec::Nonlinear { dim, noise_sd } if *dim < 2 || !(*noise_sd >= 0.0) => {
                return Err(HarnessError::Config("nonlinear needs dim >= 2 and noise_sd >= 0".into()));
            }
            _ => {}
        }
        let mut names = std::collections::BTreeSet::new();
        let mut grids = Vec::new();
        for p in &self.policies {
            let points = p.expand(self.execution)?;
            if !names.insert(p.name()) {
                return Err(HarnessError::Config(format!("duplicate policy name {}", p.name())));
            }
            if p.name().is_empty() || p.name().contains(['/', '\\', ' ']) {
                return Err(HarnessError::Config(format!("policy name {:?} is not file-name safe", p.name())));
            }
            grids.push(points);
        }
        Ok(grids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
name = "demo"
horizon = 100
replications = 3

[environment]
kind = "quadratic"

[[policies]]
kind = "blts"
features = "quadratic"

[[policies]]
kind = "linucb"
name = "ucb"
alpha = [2.0]
"#;

    #[test]
    fn default_grids() {
        let c = RunConfig::from_toml(EXAMPLE).unwrap();
        let grids = c.validate().unwrap();
        assert_eq!(grids[0].len(), 12);
        assert_eq!(grids[0][0].label, "alpha=0.25,gamma=0.01");
        assert_eq!(grids[1].len(), 1);
        assert_eq!(grids[1][0].policy, "ucb");
        assert_eq!(c.evaluation.window, 500);
        assert_eq!(c.evaluation.threshold, 0.95);
    }

    #[test]
    fn standard_grids_are_defaults() {
        let ts = PolicySpec::of_kind(PolicyKind::LinTs).expand(Execution::Sequential).unwrap();
        assert_eq!(ts.iter().map(|p| p.alpha).collect::<Vec<_>>(), vec![0.25, 0.5, 1.0]);
        let ucb = PolicySpec::of_kind(PolicyKind::Blucb).expand(Execution::Sequential).unwrap();
        assert_eq!(ucb.len(), 12);
        assert_eq!(ucb[11].alpha, 4.0);
        assert_eq!(ucb[11].gamma, Some(0.2));
    }

    #[test]
    fn forest_grid_and_ipw_defaults() {
        let plain = PolicySpec::of_kind(PolicyKind::Forest).expand(Execution::Sequential).unwrap();
        assert_eq!(plain.len(), 3);
        assert!(plain.iter().all(|p| p.gamma.is_none()));
        let Builder::Forest(c) = &plain[0].builder else { panic!("not a forest") };
        assert_eq!(c.ipw, ForestIpw::None);

        let balanced = PolicySpec { gamma: Some(vec![0.05]), ..PolicySpec::of_kind(PolicyKind::Forest) };
        let points = balanced.expand(Execution::Sequential).unwrap();
        let Builder::Forest(c) = &points[0].builder else { panic!("not a forest") };
        assert_eq!((c.ipw, c.gamma), (ForestIpw::Replication, 0.05));

        let feature = PolicySpec { ipw: Some(ForestIpw::PropensityFeature), ..PolicySpec::of_kind(PolicyKind::Forest) };
        let points = feature.expand(Execution::Sequential).unwrap();
        assert_eq!(points[0].gamma, Some(0.1));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            EXAMPLE.replace("kind = \"quadratic\"", "kind = \"volcano\""),
            EXAMPLE.replace("replications = 3", "replications = 0"),
            EXAMPLE.replace("alpha = [2.0]", "alpha = [2.0]\ngamma = [0.1]"),
            EXAMPLE.replace("features = \"quadratic\"", "features = \"quadratic\"\ngamma = [1.5]"),
            EXAMPLE.replace("name = \"ucb\"", "name = \"blts\""),
            EXAMPLE.replace("horizon = 100", "horizon = 100\nbogus = 1"),
        ];
        for text in bad {
            let r = RunConfig::from_toml(&text).and_then(|c| c.validate().map(|_| ()));
            assert!(matches!(r, Err(HarnessError::Config(_))), "{text}");
        }
    }

    #[test]
    fn classification_source_must_be_unique() {
        let env = EnvSpec::Classification { path: None, label: "label".into(), synthetic: None };
        assert!(env.dataset(None).is_err());
        let env =
            EnvSpec::Classification { path: Some("/nonexistent.csv".into()), label: "label".into(), synthetic: None };
        assert!(matches!(env.dataset(None), Err(HarnessError::Config(_))));
    }

    #[test]
    fn toml_roundtrip() {
        let c = RunConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }
}
