//! The versioned `summary.json` written by every run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use bandit_core::features::FeatureMap;

use crate::config::{AssignmentTarget, EnvSpec, Evaluation, PolicyKind};
use crate::error::{io_err, HarnessError, Result};
use crate::metrics::{pairwise_compare, ComparisonReport, PolicyScores};

pub const SUMMARY_SCHEMA: &str = "bandit-harness-summary";
pub const SUMMARY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub version: u32,
    pub name: String,
    pub environment: EnvSpec,
    pub n_arms: usize,
    pub context_dim: usize,
    pub horizon: usize,
    pub replications: usize,
    pub seed_base: u64,
    pub evaluation: Evaluation,
    pub policies: Vec<PolicySummary>,
    /// Pairwise comparison of the selected grid points.
    pub comparison: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub label: String,
    pub alpha: f64,
    pub gamma: Option<f64>,
    pub mean_final_regret: f64,
    pub se_final_regret: f64,
    pub mean_normalized_regret: f64,
    pub optimal_assignment_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    /// Steps after which predictions were scored.
    pub steps: Vec<usize>,
    /// `per_arm[a][k]`: mean over replications of arm `a`'s MSE at `steps[k]`.
    pub per_arm: Vec<Vec<f64>>,
    /// Replications with fitted models at each checkpoint.
    pub counted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub name: String,
    pub kind: PolicyKind,
    pub features: FeatureMap,
    /// Target the assignment rate of this policy is judged against.
    pub target: AssignmentTarget,
    pub grid: Vec<GridSummary>,
    /// Index into `grid` of the selected point; everything below refers to it.
    pub best: usize,
    pub seeds: Vec<u64>,
    pub steps: Vec<usize>,
    pub final_regret: Vec<f64>,
    pub normalized_regret: Vec<f64>,
    pub agreement: Vec<f64>,
    pub found_assignment: Vec<bool>,
    pub optimal_assignment_rate: f64,
    pub mean_final_regret: f64,
    pub se_final_regret: f64,
    pub mean_curve: Vec<f64>,
    pub se_curve: Vec<f64>,
    pub mse: Option<MseSummary>,
}

/// Index of the grid point with the lowest mean final regret; the first one
/// wins ties and NaN never wins.
pub fn select_best(grid: &[GridSummary]) -> usize {
    let mut best = 0;
    for (i, g) in grid.iter().enumerate().skip(1) {
        let b = grid[best].mean_final_regret;
        if g.mean_final_regret < b || (b.is_nan() && !g.mean_final_regret.is_nan()) {
            best = i;
        }
    }
    best
}

impl Summary {
    pub fn policy(&self, name: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.name == name)
    }

    pub fn scores(&self) -> Vec<PolicyScores> {
        self.policies
            .iter()
            .map(|p| PolicyScores {
                environment: self.name.clone(),
                policy: p.name.clone(),
                seeds: p.seeds.clone(),
                normalized_regret: p.normalized_regret.clone(),
            })
            .collect()
    }

    pub fn refresh_comparison(&mut self) {
        self.comparison = pairwise_compare(&self.scores());
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Runtime(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let schema = v.get("schema").and_then(|s| s.as_str());
        let version = v.get("version").and_then(|s| s.as_u64());
        if schema != Some(SUMMARY_SCHEMA) {
            return Err(HarnessError::Config(format!("not a {SUMMARY_SCHEMA} file")));
        }
        if version != Some(u64::from(SUMMARY_VERSION)) {
            return Err(HarnessError::Config(format!("unsupported summary version {version:?}")));
        }
        serde_json::from_value(v).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
