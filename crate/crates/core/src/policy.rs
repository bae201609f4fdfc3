//! The select/update interface shared by every learning policy.

use crate::error::Result;

/// One pre-collected observation used to seed a policy before the online loop.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartRecord {
    pub context: Vec<f64>,
    pub arm: usize,
    pub reward: f64,
    /// Probability with which `arm` was assigned to `context`.
    pub propensity: f64,
}

/// A contextual bandit policy: a single-threaded state machine that owns its
/// random streams.
pub trait Policy: Send {
    fn n_arms(&self) -> usize;

    /// Dimension of the (feature-mapped) contexts the policy consumes.
    fn dim(&self) -> usize;

    fn select(&mut self, x: &[f64]) -> Result<usize>;

    /// Records the reward of the arm returned by the preceding `select`.
    fn update(&mut self, x: &[f64], arm: usize, reward: f64) -> Result<()>;

    /// Seeds the history with logged data and fits the initial models.
    fn warm_start(&mut self, batch: &[WarmStartRecord]) -> Result<()>;

    /// Current point predictions of every arm's mean reward, when every arm
    /// has a fitted model.
    fn predict_means(&self, x: &[f64]) -> Option<Vec<f64>>;
}
