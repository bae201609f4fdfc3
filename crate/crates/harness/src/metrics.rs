//! Assignment rates, paired sign tests and pairwise policy comparison.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

/// Fraction of the last `window` steps whose chosen arm equals the target arm.
/// Shorter sequences are judged on all their steps; an empty one scores 0.
pub fn window_agreement(arms: &[usize], targets: &[usize], window: usize) -> f64 {
    let n = arms.len().min(targets.len());
    let start = n.saturating_sub(window);
    if n == start {
        return 0.0;
    }
    let hits = (start..n).filter(|&i| arms[i] == targets[i]).count();
    hits as f64 / (n - start) as f64
}

/// A replication finds the optimal assignment when its window agreement is at
/// least `threshold`.
pub fn finds_assignment(arms: &[usize], targets: &[usize], window: usize, threshold: f64) -> bool {
    !arms.is_empty() && window_agreement(arms, targets, window) >= threshold
}

/// Fraction of replications, each given as `(arms, targets)`, that find the
/// optimal assignment.
pub fn optimal_assignment_rate(replications: &[(Vec<usize>, Vec<usize>)], window: usize, threshold: f64) -> f64 {
    if replications.is_empty() {
        return 0.0;
    }
    let hits = replications.iter().filter(|(a, t)| finds_assignment(a, t, window, threshold)).count();
    hits as f64 / replications.len() as f64
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean, with the `n - 1` variance; 0 for fewer than 2 values.
pub fn standard_error(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    /// Pairs where the first sample is lower.
    pub below: usize,
    pub above: usize,
    pub ties: usize,
    /// Two-sided p-value of the exact binomial test on the untied pairs.
    pub p_value: f64,
}

pub fn sign_test(a: &[f64], b: &[f64]) -> SignTest {
    assert_eq!(a.len(), b.len(), "sign test needs paired samples");
    let below = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let above = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let ties = a.len() - below - above;
    let n = below + above;
    let p_value = if n == 0 {
        1.0
    } else {
        let k = below.min(above) as u64;
        let bin = Binomial::new(0.5, n as u64).expect("valid binomial");
        (2.0 * bin.cdf(k)).min(1.0)
    };
    SignTest { below, above, ties, p_value }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PBucket {
    #[serde(rename = "p<0.001")]
    P001,
    #[serde(rename = "p<0.01")]
    P01,
    #[serde(rename = "p<0.05")]
    P05,
    #[serde(rename = "n.s.")]
    NotSignificant,
}

impl PBucket {
    pub fn of(p: f64) -> Self {
        if p < 0.001 {
            PBucket::P001
        } else if p < 0.01 {
            PBucket::P01
        } else if p < 0.05 {
            PBucket::P05
        } else {
            PBucket::NotSignificant
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PBucket::P001 => "p<0.001",
            PBucket::P01 => "p<0.01",
            PBucket::P05 => "p<0.05",
            PBucket::NotSignificant => "n.s.",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Loss,
    Tie,
}

impl Outcome {
    pub fn reversed(self) -> Self {
        match self {
            Outcome::Win => Outcome::Loss,
            Outcome::Loss => Outcome::Win,
            Outcome::Tie => Outcome::Tie,
        }
    }
}

/// Normalized regret per seed of one policy in one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScores {
    pub environment: String,
    pub policy: String,
    pub seeds: Vec<u64>,
    pub normalized_regret: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub environment: String,
    pub first: String,
    pub second: String,
    /// From the first policy's side: lower mean normalized regret wins.
    pub outcome: Outcome,
    pub mean_difference: f64,
    pub sign_test: SignTest,
    pub significance: PBucket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub first: String,
    pub second: String,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Wins and losses at p < 0.05.
    pub significant_wins: usize,
    pub significant_losses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Every ordered pair of distinct policies within each environment.
    pub pairs: Vec<PairResult>,
    /// Per ordered policy pair, counts over environments.
    pub tallies: Vec<Tally>,
}

fn compare_pair(a: &PolicyScores, b: &PolicyScores) -> PairResult {
    // pair up by seed so that only common replications are compared
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, s) in a.seeds.iter().enumerate() {
        if let Some(j) = b.seeds.iter().position(|t| t == s) {
            x.push(a.normalized_regret[i]);
            y.push(b.normalized_regret[j]);
        }
    }
    let diffs: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u - v).collect();
    let mean_difference = mean(&diffs);
    let outcome = if mean_difference < 0.0 {
        Outcome::Win
    } else if mean_difference > 0.0 {
        Outcome::Loss
    } else {
        Outcome::Tie
    };
    let sign_test = sign_test(&x, &y);
    PairResult {
        environment: a.environment.clone(),
        first: a.policy.clone(),
        second: b.policy.clone(),
        outcome,
        mean_difference,
        sign_test,
        significance: PBucket::of(sign_test.p_value),
    }
}

/// Compares every pair of policies that share an environment.
pub fn pairwise_compare(scores: &[PolicyScores]) -> ComparisonReport {
    let mut pairs = Vec::new();
    for a in scores {
        for b in scores {
            if a.environment == b.environment && a.policy != b.policy {
                pairs.push(compare_pair(a, b));
            }
        }
    }
    let mut names: Vec<&str> = scores.iter().map(|s| s.policy.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let mut tallies = Vec::new();
    for &first in &names {
        for &second in &names {
            if first == second {
                continue;
            }
            let mut t = Tally {
                first: first.into(),
                second: second.into(),
                wins: 0,
                losses: 0,
                ties: 0,
                significant_wins: 0,
                significant_losses: 0,
            };
            for p in pairs.iter().filter(|p| p.first == first && p.second == second) {
                let sig = p.significance != PBucket::NotSignificant;
                match p.outcome {
                    Outcome::Win => {
                        t.wins += 1;
                        t.significant_wins += usize::from(sig);
                    }
                    Outcome::Loss => {
                        t.losses += 1;
                        t.significant_losses += usize::from(sig);
                    }
                    Outcome::Tie => t.ties += 1,
                }
            }
            if t.wins + t.losses + t.ties > 0 {
                tallies.push(t);
            }
        }
    }
    ComparisonReport { pairs, tallies }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(env: &str, policy: &str, v: Vec<f64>) -> PolicyScores {
        PolicyScores {
            environment: env.into(),
            policy: policy.into(),
            seeds: (0..v.len() as u64).collect(),
            normalized_regret: v,
        }
    }

    #[test]
    fn agreement_window() {
        let arms = [0, 1, 1, 1, 2];
        let targets = [1, 1, 1, 1, 1];
        assert_eq!(window_agreement(&arms, &targets, 4), 0.75);
        assert_eq!(window_agreement(&arms, &targets, 100), 0.6);
        assert_eq!(window_agreement(&[], &[], 3), 0.0);
        assert!(finds_assignment(&arms[..4], &targets[..4], 3, 0.95));
        assert!(!finds_assignment(&[], &[], 3, 0.95));
        let reps = vec![(vec![1, 1], vec![1, 1]), (vec![0, 1], vec![1, 1])];
        assert_eq!(optimal_assignment_rate(&reps, 2, 0.95), 0.5);
    }

    #[test]
    fn sign_test_matches_binomial_sum() {
        // 9 of 12 below: p = 2 * sum_{k<=3} C(12,k) / 2^12
        let a: Vec<f64> = (0..12).map(|i| if i < 9 { 0.0 } else { 2.0 }).collect();
        let b = vec![1.0; 12];
        let t = sign_test(&a, &b);
        let tail = [1.0, 12.0, 66.0, 220.0].iter().sum::<f64>() / 4096.0;
        assert!((t.p_value - 2.0 * tail).abs() < 1e-12);
        assert_eq!((t.below, t.above, t.ties), (9, 3, 0));
        assert_eq!(sign_test(&b, &b).p_value, 1.0);
    }

    #[test]
    fn identical_policies_tie() {
        let v = vec![0.3, 0.1, 0.5];
        let r = pairwise_compare(&[scores("e", "a", v.clone()), scores("e", "b", v)]);
        assert!(r.pairs.iter().all(|p| p.outcome == Outcome::Tie && p.sign_test.p_value == 1.0));
        assert_eq!(r.tallies[0].ties, 1);
    }

    #[test]
    fn dominance_is_most_significant() {
        let a: Vec<f64> = (0..20).map(|i| 0.1 + 0.01 * i as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.05).collect();
        let r = pairwise_compare(&[scores("e", "good", a), scores("e", "bad", b)]);
        let p = r.pairs.iter().find(|p| p.first == "good").unwrap();
        assert_eq!(p.outcome, Outcome::Win);
        assert_eq!(p.significance, PBucket::P001);
        let q = r.pairs.iter().find(|p| p.first == "bad").unwrap();
        assert_eq!(q.outcome, Outcome::Loss);
    }

    #[test]
    fn tallies_count_environments() {
        let r = pairwise_compare(&[
            scores("e1", "a", vec![0.1; 3]),
            scores("e1", "b", vec![0.2; 3]),
            scores("e2", "a", vec![0.3; 3]),
            scores("e2", "b", vec![0.2; 3]),
            scores("e3", "a", vec![0.2; 3]),
        ]);
        let t = r.tallies.iter().find(|t| t.first == "a").unwrap();
        assert_eq!((t.wins, t.losses, t.ties), (1, 1, 0));
        assert_eq!(r.pairs.len(), 4);
    }

    proptest! {
        #[test]
        fn antisymmetric(v in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..30)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let r = pairwise_compare(&[scores("e", "a", a), scores("e", "b", b)]);
            let ab = r.pairs.iter().find(|p| p.first == "a").unwrap();
            let ba = r.pairs.iter().find(|p| p.first == "b").unwrap();
            prop_assert_eq!(ab.outcome, ba.outcome.reversed());
            prop_assert_eq!(ab.sign_test.p_value, ba.sign_test.p_value);
            prop_assert_eq!(ab.sign_test.below, ba.sign_test.above);
            let ta = r.tallies.iter().find(|t| t.first == "a").unwrap();
            let tb = r.tallies.iter().find(|t| t.first == "b").unwrap();
            prop_assert_eq!((ta.wins, ta.losses, ta.ties), (tb.losses, tb.wins, tb.ties));
        }
    }
}
