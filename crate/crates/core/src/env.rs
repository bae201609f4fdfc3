//! Reward-generating environments.
//!
//! Each environment yields [`Draw`]s: a raw context together with every arm's
//! noiseless expected reward and realized (noisy) reward. Policies only ever
//! see the realized reward of the arm they chose; the harness uses the rest
//! for regret accounting.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::error::{check_dim, BanditError, Result};
use crate::rng::{stream, StreamRng};

/// A context with all potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub context: Vec<f64>,
    pub expected: Vec<f64>,
    pub realized: Vec<f64>,
}

impl Draw {
    /// Arm with the highest expected reward (lowest index on ties).
    pub fn optimal_arm(&self) -> usize {
        first_argmax(&self.expected)
    }

    pub fn optimal_reward(&self) -> f64 {
        self.expected[self.optimal_arm()]
    }
}

pub fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub trait Environment: Send {
    fn n_arms(&self) -> usize;

    fn context_dim(&self) -> usize;

    /// Next context of the online phase; `None` once a finite source is exhausted.
    fn next_draw(&mut self) -> Option<Draw>;

    /// Logged contexts to seed policies with before the online phase.
    fn warm_start_draws(&mut self) -> Vec<Draw> {
        Vec::new()
    }

    /// An independent sample from the online context distribution, for
    /// evaluation. Does not advance the environment.
    fn population_sample(&self, n: usize, seed: u64) -> Vec<Draw>;
}

fn add_noise<R: Rng + ?Sized>(expected: &[f64], noise_sd: f64, rng: &mut R) -> Vec<f64> {
    expected
        .iter()
        .map(|m| if noise_sd > 0.0 { m + noise_sd * rng.sample::<f64, _>(StandardNormal) } else { *m })
        .collect()
}

fn standard_normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Standard normal truncated to `(lo, hi)`: rejection from `N(0,1)`, with an
/// inverse-CDF draw if rejection keeps failing.
pub fn truncated_standard_normal<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    for _ in 0..10_000 {
        let z: f64 = rng.sample(StandardNormal);
        if z > lo && z < hi {
            return z;
        }
    }
    let phi = StatNormal::standard();
    let (a, b) = (phi.cdf(lo), phi.cdf(hi));
    phi.inverse_cdf(a + (b - a) * rng.random::<f64>()).clamp(lo, hi)
}

// ---------------------------------------------------------------------------
// Warm-start bias design: two-dimensional contexts, three arms.

pub const QUADRATIC_NOISE_SD: f64 = 0.1;
pub const QUADRATIC_WARM_START: usize = 50;
pub const QUADRATIC_TRUNCATION: (f64, f64) = (-1.15, -0.85);

pub fn quadratic_mean(x: &[f64]) -> Vec<f64> {
    let bowl = 0.5 * (x[0] + 1.0).powi(2) + 0.5 * (x[1] + 1.0).powi(2);
    vec![bowl, 1.0, 2.0 - bowl]
}

/// Rewards of the three arms with independent `N(0, 0.01)` noise each.
pub fn quadratic_rewards<R: Rng + ?Sized>(x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    check_dim(2, x.len())?;
    Ok(add_noise(&quadratic_mean(x), QUADRATIC_NOISE_SD, rng))
}

#[derive(Debug, Clone)]
pub struct SyntheticQuadraticEnv {
    pub noise_sd: f64,
    pub warm_start_count: usize,
    pub truncation: (f64, f64),
    rng: StreamRng,
}

impl SyntheticQuadraticEnv {
    pub fn new(seed: u64) -> Self {
        Self {
            noise_sd: QUADRATIC_NOISE_SD,
            warm_start_count: QUADRATIC_WARM_START,
            truncation: QUADRATIC_TRUNCATION,
            rng: stream(seed, 0),
        }
    }

    fn draw_at(&mut self, x: Vec<f64>) -> Draw {
        let expected = quadratic_mean(&x);
        let realized = add_noise(&expected, self.noise_sd, &mut self.rng);
        Draw { context: x, expected, realized }
    }
}

impl Environment for SyntheticQuadraticEnv {
    fn n_arms(&self) -> usize {
        3
    }

    fn context_dim(&self) -> usize {
        2
    }

    fn next_draw(&mut self) -> Option<Draw> {
        let x = standard_normal_vec(2, &mut self.rng);
        Some(self.draw_at(x))
    }

    fn warm_start_draws(&mut self) -> Vec<Draw> {
        let (lo, hi) = self.truncation;
        (0..self.warm_start_count)
            .map(|_| {
                let x = vec![
                    truncated_standard_normal(lo, hi, &mut self.rng),
                    truncated_standard_normal(lo, hi, &mut self.rng),
                ];
                self.draw_at(x)
            })
            .collect()
    }

    fn population_sample(&self, n: usize, seed: u64) -> Vec<Draw> {
        let mut rng = stream(seed, 0);
        (0..n)
            .map(|_| {
                let x = standard_normal_vec(2, &mut rng);
                let expected = quadratic_mean(&x);
                Draw { realized: expected.clone(), context: x, expected }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Sparse linear design with nuisance and noise coordinates.

#[derive(Debug, Clone)]
pub struct SparseLinearEnv {
    pub dim: usize,
    /// Number of nuisance coordinates, `x_2 ..= x_{q+1}`.
    pub nuisance: usize,
    pub noise_sd: f64,
    rng: StreamRng,
}

pub const SPARSE_DIM: usize = 102;
pub const SPARSE_NUISANCE: usize = 51;

/// Common shift `2 sigma * sum_{j=2}^{q+1} x_j`.
pub fn sparse_shift(x: &[f64], nuisance: usize, noise_sd: f64) -> f64 {
    2.0 * noise_sd * x[2..2 + nuisance].iter().sum::<f64>()
}

pub fn sparse_linear_mean(x: &[f64], nuisance: usize, noise_sd: f64) -> Vec<f64> {
    let f = sparse_shift(x, nuisance, noise_sd);
    vec![x[0] + f, 1.0 - x[0] + f, x[1] + f]
}

pub fn sparse_linear_rewards<R: Rng + ?Sized>(
    x: &[f64],
    nuisance: usize,
    noise_sd: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if x.len() < nuisance + 2 {
        return Err(BanditError::Shape { expected: nuisance + 2, got: x.len() });
    }
    Ok(add_noise(&sparse_linear_mean(x, nuisance, noise_sd), noise_sd, rng))
}

impl SparseLinearEnv {
    pub fn new(dim: usize, nuisance: usize, noise_sd: f64, seed: u64) -> Result<Self> {
        if dim < nuisance + 2 || noise_sd < 0.0 {
            return Err(BanditError::Parameter(format!(
                "sparse design needs dim >= nuisance + 2 and noise_sd >= 0 (dim {dim}, nuisance {nuisance})"
            )));
        }
        Ok(Self { dim, nuisance, noise_sd, rng: stream(seed, 0) })
    }
}

impl Environment for SparseLinearEnv {
    fn n_arms(&self) -> usize {
        3
    }

    fn context_dim(&self) -> usize {
        self.dim
    }

    fn next_draw(&mut self) -> Option<Draw> {
        let x = standard_normal_vec(self.dim, &mut self.rng);
        let expected = sparse_linear_mean(&x, self.nuisance, self.noise_sd);
        let realized = add_noise(&expected, self.noise_sd, &mut self.rng);
        Some(Draw { context: x, expected, realized })
    }

    fn population_sample(&self, n: usize, seed: u64) -> Vec<Draw> {
        let mut rng = stream(seed, 0);
        (0..n)
            .map(|_| {
                let x = standard_normal_vec(self.dim, &mut rng);
                let expected = sparse_linear_mean(&x, self.nuisance, self.noise_sd);
                Draw { realized: expected.clone(), context: x, expected }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Nonlinear design: arm 2 is a quadrant-dependent piecewise function.

pub const NONLINEAR_DIM: usize = 10;
pub const NONLINEAR_NOISE_SD: f64 = 0.1;

pub fn nonlinear_mean(x: &[f64]) -> Vec<f64> {
    let third = if x[1] < 0.0 {
        x[0].min(-x[0]) - 1.0
    } else if x[1] > 0.0 {
        x[0].max(-x[0]) + 1.0
    } else {
        0.0
    };
    vec![x[0], -x[0], third]
}

pub fn nonlinear_rewards<R: Rng + ?Sized>(x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(BanditError::Shape { expected: 2, got: x.len() });
    }
    Ok(add_noise(&nonlinear_mean(x), NONLINEAR_NOISE_SD, rng))
}

#[derive(Debug, Clone)]
pub struct NonlinearEnv {
    pub dim: usize,
    pub noise_sd: f64,
    rng: StreamRng,
}

impl NonlinearEnv {
    pub fn new(seed: u64) -> Self {
        Self { dim: NONLINEAR_DIM, noise_sd: NONLINEAR_NOISE_SD, rng: stream(seed, 0) }
    }
}

impl Environment for NonlinearEnv {
    fn n_arms(&self) -> usize {
        3
    }

    fn context_dim(&self) -> usize {
        self.dim
    }

    fn next_draw(&mut self) -> Option<Draw> {
        let x = standard_normal_vec(self.dim, &mut self.rng);
        let expected = nonlinear_mean(&x);
        let realized = add_noise(&expected, self.noise_sd, &mut self.rng);
        Some(Draw { context: x, expected, realized })
    }

    fn population_sample(&self, n: usize, seed: u64) -> Vec<Draw> {
        let mut rng = stream(seed, 0);
        (0..n)
            .map(|_| {
                let x = standard_normal_vec(self.dim, &mut rng);
                let expected = nonlinear_mean(&x);
                Draw { realized: expected.clone(), context: x, expected }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Classification datasets with bandit feedback.

/// A labelled feature table. Labels are indices into `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Row-major `n x dim`.
    features: Vec<f64>,
    pub labels: Vec<usize>,
    /// Rows skipped at ingestion because of missing values.
    pub dropped_rows: usize,
}

fn is_missing(v: &str) -> bool {
    matches!(v.trim(), "" | "?" | "NA" | "na" | "NaN" | "nan" | "null")
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, features: Vec<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let dim = feature_names.len();
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(BanditError::Dataset("feature table does not match label count".into()));
        }
        if labels.iter().any(|l| *l >= n_classes) {
            return Err(BanditError::Dataset("label out of range".into()));
        }
        Ok(Self {
            feature_names,
            class_names: (0..n_classes).map(|c| c.to_string()).collect(),
            features,
            labels,
            dropped_rows: 0,
        })
    }

    pub fn from_path(path: impl AsRef<Path>, label_column: &str) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| BanditError::Dataset(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_reader(file, label_column)
    }

    /// Reads comma-separated UTF-8 text with a header row.
    ///
    /// Columns whose every value parses as a number are numeric; any other
    /// feature column is one-hot encoded over its sorted distinct values.
    /// Rows with a missing value anywhere are dropped and counted. Class
    /// labels are indexed in sorted order of their text.
    pub fn from_reader<R: Read>(reader: R, label_column: &str) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = csv
            .headers()
            .map_err(|e| BanditError::Dataset(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let label_idx = headers
            .iter()
            .position(|h| h == label_column)
            .ok_or_else(|| BanditError::Dataset(format!("no label column named {label_column:?}")))?;
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut dropped = 0;
        for rec in csv.records() {
            let rec = rec.map_err(|e| BanditError::Dataset(e.to_string()))?;
            if rec.len() != headers.len() {
                return Err(BanditError::Dataset(format!(
                    "row has {} fields, header has {}",
                    rec.len(),
                    headers.len()
                )));
            }
            if rec.iter().any(is_missing) {
                dropped += 1;
                continue;
            }
            rows.push(rec.iter().map(|v| v.trim().to_string()).collect());
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} rows with missing values");
        }
        if rows.is_empty() {
            return Err(BanditError::Dataset("no complete rows".into()));
        }

        let mut class_names: Vec<String> = rows.iter().map(|r| r[label_idx].clone()).collect();
        class_names.sort();
        class_names.dedup();
        let labels = rows.iter().map(|r| class_names.binary_search(&r[label_idx]).expect("label indexed")).collect();

        // (column, None) for numeric, (column, Some(categories)) for one-hot
        let mut encoders: Vec<(usize, Option<Vec<String>>)> = Vec::new();
        let mut feature_names = Vec::new();
        for (c, name) in headers.iter().enumerate() {
            if c == label_idx {
                continue;
            }
            if rows.iter().all(|r| r[c].parse::<f64>().is_ok_and(f64::is_finite)) {
                encoders.push((c, None));
                feature_names.push(name.clone());
            } else {
                let mut cats: Vec<String> = rows.iter().map(|r| r[c].clone()).collect();
                cats.sort();
                cats.dedup();
                feature_names.extend(cats.iter().map(|v| format!("{name}={v}")));
                encoders.push((c, Some(cats)));
            }
        }
        if feature_names.is_empty() {
            return Err(BanditError::Dataset("no feature columns".into()));
        }
        let mut features = Vec::with_capacity(rows.len() * feature_names.len());
        for r in &rows {
            for (c, enc) in &encoders {
                match enc {
                    None => features.push(r[*c].parse::<f64>().expect("checked numeric")),
                    Some(cats) => {
                        let hit = cats.binary_search(&r[*c]).expect("category indexed");
                        features.extend((0..cats.len()).map(|k| if k == hit { 1.0 } else { 0.0 }));
                    }
                }
            }
        }
        Ok(Self { feature_names, class_names, features, labels, dropped_rows: dropped })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features[i * d..(i + 1) * d]
    }

    /// Fraction of rows in the most common class.
    pub fn majority_fraction(&self) -> f64 {
        let mut counts = vec![0usize; self.n_classes()];
        for l in &self.labels {
            counts[*l] += 1;
        }
        *counts.iter().max().unwrap_or(&0) as f64 / self.len().max(1) as f64
    }

    /// Linearly separable classes: centres evenly spaced on a circle of
    /// radius `radius` in the first two coordinates, points uniform in the
    /// unit disc around their centre, remaining coordinates standard normal
    /// noise. Separable whenever the centre spacing exceeds 2.
    pub fn separable_blobs(n: usize, n_classes: usize, dim: usize, radius: f64, seed: u64) -> Result<Self> {
        if dim < 2 || n_classes < 2 {
            return Err(BanditError::Parameter("need dim >= 2 and at least 2 classes".into()));
        }
        let mut rng = stream(seed, 0);
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % n_classes;
            let angle = 2.0 * std::f64::consts::PI * c as f64 / n_classes as f64;
            let r = rng.random::<f64>().sqrt();
            let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
            features.push(radius * angle.cos() + r * phi.cos());
            features.push(radius * angle.sin() + r * phi.sin());
            for _ in 2..dim {
                features.push(normal.sample(&mut rng));
            }
            labels.push(c);
        }
        let names = (0..dim).map(|j| format!("x{j}")).collect();
        Self::new(names, features, labels, n_classes)
    }
}

/// Serves each dataset row once, in a shuffled order; reward is 1 for the
/// true class and 0 otherwise.
#[derive(Debug, Clone)]
pub struct ClassificationBanditEnv {
    dataset: Dataset,
    order: Vec<usize>,
    position: usize,
}

impl ClassificationBanditEnv {
    pub fn new(dataset: Dataset, shuffle_seed: u64) -> Self {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut stream(shuffle_seed, 0));
        Self { dataset, order, position: 0 }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Context and hidden label of step `t` of the shuffled pass.
    pub fn step(&self, t: usize) -> Option<(&[f64], usize)> {
        self.order.get(t).map(|&i| (self.dataset.row(i), self.dataset.labels[i]))
    }

    fn draw_row(&self, i: usize) -> Draw {
        let k = self.dataset.n_classes();
        let label = self.dataset.labels[i];
        let expected: Vec<f64> = (0..k).map(|a| if a == label { 1.0 } else { 0.0 }).collect();
        Draw { context: self.dataset.row(i).to_vec(), realized: expected.clone(), expected }
    }
}

impl Environment for ClassificationBanditEnv {
    fn n_arms(&self) -> usize {
        self.dataset.n_classes()
    }

    fn context_dim(&self) -> usize {
        self.dataset.dim()
    }

    fn next_draw(&mut self) -> Option<Draw> {
        let i = *self.order.get(self.position)?;
        self.position += 1;
        Some(self.draw_row(i))
    }

    fn population_sample(&self, n: usize, _seed: u64) -> Vec<Draw> {
        (0..n.min(self.dataset.len())).map(|i| self.draw_row(i)).collect()
    }
}
