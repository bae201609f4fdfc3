use serde::{Deserialize, Serialize};

/// Preprocessing applied to raw contexts before a policy sees them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// Raw context.
    Identity,
    /// `(1, x)`.
    #[default]
    Linear,
    /// `(1, x, x^2)` with squares taken coordinate-wise.
    Quadratic,
    /// `(1, x, x^2, x_i x_j for i < j)`: the full degree-2 expansion.
    Polynomial2,
}

impl FeatureMap {
    pub fn dim(self, raw: usize) -> usize {
        match self {
            FeatureMap::Identity => raw,
            FeatureMap::Linear => raw + 1,
            FeatureMap::Quadratic => 2 * raw + 1,
            FeatureMap::Polynomial2 => 2 * raw + 1 + raw * raw.saturating_sub(1) / 2,
        }
    }

    /// Whether the first output coordinate is the constant 1.
    pub fn has_intercept(self) -> bool {
        !matches!(self, FeatureMap::Identity)
    }

    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim(x.len()));
        if self.has_intercept() {
            out.push(1.0);
        }
        out.extend_from_slice(x);
        if matches!(self, FeatureMap::Quadratic | FeatureMap::Polynomial2) {
            out.extend(x.iter().map(|v| v * v));
        }
        if self == FeatureMap::Polynomial2 {
            for i in 0..x.len() {
                for j in (i + 1)..x.len() {
                    out.push(x[i] * x[j]);
                }
            }
        }
        out
    }
}
