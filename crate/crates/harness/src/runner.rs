//! Runs every (policy, grid point, replication) of a config and writes the
//! traces, `summary.json` and charts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;

use bandit_core::bootstrap::BootstrapPolicy;
use bandit_core::env::{
    ClassificationBanditEnv, Dataset, Draw, Environment, NonlinearEnv, SparseLinearEnv, SyntheticQuadraticEnv,
};
use bandit_core::features::FeatureMap;
use bandit_core::forest::ForestPolicy;
use bandit_core::gibbs::BayesianLassoPolicy;
use bandit_core::linear::LinearPolicy;
use bandit_core::par::{map_range, Execution};
use bandit_core::policy::{Policy, WarmStartRecord};
use bandit_core::rng::{mix, stream, StreamRng};

use crate::charts::{write_charts, Curve};
use crate::config::{AssignmentTarget, Builder, EnvSpec, Evaluation, GridPoint, RunConfig, TraceOutput};
use crate::error::{io_err, HarnessError, Result};
use crate::metrics::{finds_assignment, mean, pairwise_compare, standard_error, window_agreement};
use crate::summary::{select_best, GridSummary, MseSummary, PolicySummary, Summary, SUMMARY_SCHEMA, SUMMARY_VERSION};
use crate::target::ClassTarget;
use crate::trace::{context_hash, trace_file_name, write_trace, TraceRow};

const ENV_STREAM: u64 = 0x656e_7669;
const WARM_STREAM: u64 = 0x7761_726d;
const POLICY_STREAM: u64 = 0x706f_6c69;
const TARGET_STREAM: u64 = 0x7461_7267;
const MSE_STREAM: u64 = 0x6d73_6500;

/// Seed of replication `r`.
pub fn replication_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(r as u64)
}

/// Builds the environment of one replication. Every policy and grid point of a
/// run sees the same environment for a given seed.
pub fn make_env(spec: &EnvSpec, dataset: Option<&Dataset>, seed: u64) -> Result<Box<dyn Environment>> {
    let env_seed = mix(seed, ENV_STREAM);
    Ok(match spec {
        EnvSpec::Quadratic { warm_start } => {
            let mut env = SyntheticQuadraticEnv::new(env_seed);
            if !warm_start {
                env.warm_start_count = 0;
            }
            Box::new(env)
        }
        EnvSpec::SparseLinear { dim, nuisance, noise_sd } => {
            Box::new(SparseLinearEnv::new(*dim, *nuisance, *noise_sd, env_seed)?)
        }
        EnvSpec::Nonlinear { dim, noise_sd } => {
            let mut env = NonlinearEnv::new(env_seed);
            env.dim = *dim;
            env.noise_sd = *noise_sd;
            Box::new(env)
        }
        EnvSpec::Classification { .. } => {
            let data = dataset.ok_or_else(|| HarnessError::Config("classification run without a dataset".into()))?;
            Box::new(ClassificationBanditEnv::new(data.clone(), env_seed))
        }
    })
}

enum Agent {
    Learner(Box<dyn Policy>),
    Uniform(StreamRng, usize),
    Oracle,
}

fn make_agent(builder: &Builder, n_arms: usize, dim: usize, seed: u64) -> Result<Agent> {
    let s = mix(seed, POLICY_STREAM);
    Ok(match builder {
        Builder::Linear(c) => Agent::Learner(Box::new(LinearPolicy::new(c.clone(), n_arms, dim, s)?)),
        Builder::Bootstrap(c) => Agent::Learner(Box::new(BootstrapPolicy::new(c.clone(), n_arms, dim, s)?)),
        Builder::BayesianLasso(c) => Agent::Learner(Box::new(BayesianLassoPolicy::new(c.clone(), n_arms, dim, s)?)),
        Builder::Forest(c) => Agent::Learner(Box::new(ForestPolicy::new(c.clone(), n_arms, dim, s)?)),
        Builder::Uniform => Agent::Uniform(stream(s, 0), n_arms),
        Builder::Oracle => Agent::Oracle,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub seed: u64,
    pub rows: Vec<TraceRow>,
    /// `(step, per-arm MSE)` at each checkpoint where every arm had a model.
    pub mse: Vec<(usize, Vec<f64>)>,
}

impl ReplicationResult {
    pub fn final_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative_regret)
    }

    pub fn normalized_regret(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.final_regret() / self.rows.len() as f64
        }
    }

    pub fn arms(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.arm).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.target_arm).collect()
    }

    pub fn curve(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cumulative_regret).collect()
    }
}

/// Shared, read-only inputs of every replication of a run.
pub struct RunContext<'a> {
    pub environment: &'a EnvSpec,
    pub dataset: Option<&'a Dataset>,
    pub horizon: usize,
    pub evaluation: &'a Evaluation,
    /// Held-out noiseless draws for MSE tracking (may be empty).
    pub mse_points: &'a [Draw],
}

/// One full warm-start + online loop.
pub fn run_replication(
    ctx: &RunContext<'_>,
    builder: &Builder,
    features: FeatureMap,
    target: Option<&ClassTarget>,
    seed: u64,
) -> Result<ReplicationResult> {
    let mut env = make_env(ctx.environment, ctx.dataset, seed)?;
    let k = env.n_arms();
    let dim = features.dim(env.context_dim());
    let mut agent = make_agent(builder, k, dim, seed)?;

    let warm = env.warm_start_draws();
    if !warm.is_empty() {
        let mut rng = stream(mix(seed, WARM_STREAM), 0);
        let batch: Vec<WarmStartRecord> = warm
            .iter()
            .map(|d| {
                let arm = rng.random_range(0..k);
                WarmStartRecord {
                    context: features.apply(&d.context),
                    arm,
                    reward: d.realized[arm],
                    propensity: 1.0 / k as f64,
                }
            })
            .collect();
        if let Agent::Learner(p) = &mut agent {
            p.warm_start(&batch)?;
        }
    }

    let mse_phi: Vec<Vec<f64>> = ctx.mse_points.iter().map(|d| features.apply(&d.context)).collect();
    let mut rows = Vec::with_capacity(ctx.horizon);
    let mut mse = Vec::new();
    let mut cumulative = 0.0;
    for t in 0..ctx.horizon {
        let Some(draw) = env.next_draw() else { break };
        let phi = features.apply(&draw.context);
        let arm = match &mut agent {
            Agent::Learner(p) => p.select(&phi)?,
            Agent::Uniform(rng, k) => rng.random_range(0..*k),
            Agent::Oracle => draw.optimal_arm(),
        };
        if arm >= k {
            return Err(HarnessError::Runtime(format!("policy chose arm {arm} of {k}")));
        }
        let reward = draw.realized[arm];
        if let Agent::Learner(p) = &mut agent {
            p.update(&phi, arm, reward)?;
        }
        let optimal_reward = draw.optimal_reward();
        let regret = optimal_reward - draw.expected[arm];
        cumulative += regret;
        rows.push(TraceRow {
            t,
            context_hash: context_hash(&draw.context),
            arm,
            target_arm: target.map_or_else(|| draw.optimal_arm(), |c| c.arm(&draw.context)),
            reward,
            optimal_reward,
            regret,
            cumulative_regret: cumulative,
        });
        let step = t + 1;
        if !mse_phi.is_empty() && (step % ctx.evaluation.mse_every == 0 || step == ctx.horizon) {
            if let Agent::Learner(p) = &agent {
                if let Some(errors) = prediction_mse(p.as_ref(), &mse_phi, ctx.mse_points, k) {
                    mse.push((step, errors));
                }
            }
        }
    }
    Ok(ReplicationResult { seed, rows, mse })
}

fn prediction_mse(policy: &dyn Policy, phi: &[Vec<f64>], draws: &[Draw], k: usize) -> Option<Vec<f64>> {
    let mut sums = vec![0.0; k];
    for (x, d) in phi.iter().zip(draws) {
        let pred = policy.predict_means(x)?;
        for a in 0..k {
            sums[a] += (pred[a] - d.expected[a]).powi(2);
        }
    }
    Some(sums.into_iter().map(|s| s / draws.len() as f64).collect())
}

/// Whether a point is judged against the best-in-class assignment.
fn uses_class_target(evaluation: &Evaluation, point: &GridPoint) -> bool {
    evaluation.target == AssignmentTarget::BestInClass
        && matches!(point.builder, Builder::Linear(_) | Builder::Bootstrap(_) | Builder::BayesianLasso(_))
}

fn summarize_grid(point: &GridPoint, reps: &[ReplicationResult], evaluation: &Evaluation) -> GridSummary {
    let finals: Vec<f64> = reps.iter().map(ReplicationResult::final_regret).collect();
    let normalized: Vec<f64> = reps.iter().map(ReplicationResult::normalized_regret).collect();
    let found = reps
        .iter()
        .filter(|r| finds_assignment(&r.arms(), &r.targets(), evaluation.window, evaluation.threshold))
        .count();
    GridSummary {
        label: point.label.clone(),
        alpha: point.alpha,
        gamma: point.gamma,
        mean_final_regret: mean(&finals),
        se_final_regret: standard_error(&finals),
        mean_normalized_regret: mean(&normalized),
        optimal_assignment_rate: found as f64 / reps.len().max(1) as f64,
    }
}

fn summarize_mse(reps: &[ReplicationResult], k: usize) -> Option<MseSummary> {
    let mut by_step: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for r in reps {
        for (step, errors) in &r.mse {
            let e = by_step.entry(*step).or_insert_with(|| (vec![0.0; k], 0));
            for a in 0..k {
                e.0[a] += errors[a];
            }
            e.1 += 1;
        }
    }
    if by_step.is_empty() {
        return None;
    }
    let steps: Vec<usize> = by_step.keys().copied().collect();
    let counted: Vec<usize> = by_step.values().map(|v| v.1).collect();
    let per_arm = (0..k).map(|a| by_step.values().map(|(s, n)| s[a] / *n as f64).collect()).collect();
    Some(MseSummary { steps, per_arm, counted })
}

/// Output-directory and override settings that do not belong in the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub replications: Option<usize>,
    pub horizon: Option<usize>,
    /// Directory relative dataset paths are resolved against.
    pub base_dir: Option<PathBuf>,
    /// Skip writing files altogether.
    pub dry: bool,
}

pub struct RunOutput {
    pub summary: Summary,
    pub out_dir: Option<PathBuf>,
    pub files: Vec<PathBuf>,
}

/// Validates the config, runs every grid point and writes the artifacts.
pub fn run_experiment(config: &RunConfig, options: &RunOptions) -> Result<RunOutput> {
    let mut config = config.clone();
    if let Some(r) = options.replications {
        config.replications = r;
    }
    if let Some(h) = options.horizon {
        config.horizon = h;
    }
    let grids = config.validate()?;
    let dataset = config.environment.dataset(options.base_dir.as_deref())?;
    let probe = make_env(&config.environment, dataset.as_ref(), config.seed)?;
    let n_arms = probe.n_arms();
    let context_dim = probe.context_dim();
    if n_arms < 2 {
        return Err(HarnessError::Config("environment needs at least two arms".into()));
    }

    let ev = &config.evaluation;
    let mut targets: BTreeMap<String, ClassTarget> = BTreeMap::new();
    for point in grids.iter().flatten() {
        if uses_class_target(ev, point) {
            let key = format!("{:?}", point.features);
            if !targets.contains_key(&key) {
                let seed = mix(config.seed, TARGET_STREAM);
                targets.insert(key, ClassTarget::fit(probe.as_ref(), point.features, ev.target_samples, seed)?);
            }
        }
    }
    let mse_points = if ev.mse_points > 0 {
        probe.population_sample(ev.mse_points, mix(config.seed, MSE_STREAM))
    } else {
        Vec::new()
    };

    let out_dir = if options.dry {
        None
    } else {
        let dir = options
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("out").join(&config.name));
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Some(dir)
    };
    let mut files = Vec::new();

    let ctx = RunContext {
        environment: &config.environment,
        dataset: dataset.as_ref(),
        horizon: config.horizon,
        evaluation: ev,
        mse_points: &mse_points,
    };
    let seeds: Vec<u64> = (0..config.replications).map(|r| replication_seed(config.seed, r)).collect();
    let mut policies = Vec::new();
    let mut curves = Vec::new();
    for (spec, grid) in config.policies.iter().zip(&grids) {
        let mut summaries = Vec::new();
        let mut best: Option<(usize, Vec<ReplicationResult>)> = None;
        for (g, point) in grid.iter().enumerate() {
            let target =
                if uses_class_target(ev, point) { targets.get(&format!("{:?}", point.features)) } else { None };
            log::info!("{} {} ({} replications)", point.policy, point.label, seeds.len());
            let reps: Vec<ReplicationResult> = map_range(config.execution, seeds.len(), |r| {
                run_replication(&ctx, &point.builder, point.features, target, seeds[r])
            })
            .into_iter()
            .collect::<Result<_>>()
            .map_err(|e| HarnessError::Runtime(format!("{} {}: {e}", point.policy, point.label)))?;
            let s = summarize_grid(point, &reps, ev);
            log::info!(
                "{} {}: mean regret {:.3}, rate {:.2}",
                point.policy,
                point.label,
                s.mean_final_regret,
                s.optimal_assignment_rate
            );
            summaries.push(s);
            if let (TraceOutput::All, Some(dir)) = (config.traces, &out_dir) {
                let name = if grid.len() > 1 { format!("{}-g{g}", point.policy) } else { point.policy.clone() };
                files.extend(write_traces(dir, &name, &reps)?);
            }
            let current = best.as_ref().map(|(b, _)| *b);
            let candidate = select_best(&summaries);
            if current != Some(candidate) {
                best = Some((candidate, reps));
            }
        }
        let (b, reps) = best.expect("grid is never empty");
        if let (TraceOutput::Best, Some(dir)) = (config.traces, &out_dir) {
            files.extend(write_traces(dir, &spec.name(), &reps)?);
        }
        let point = &grid[b];
        let series: Vec<Vec<f64>> = reps.iter().map(ReplicationResult::curve).collect();
        let curve = Curve::from_series(&spec.name(), &series);
        let finals: Vec<f64> = reps.iter().map(ReplicationResult::final_regret).collect();
        let found: Vec<bool> =
            reps.iter().map(|r| finds_assignment(&r.arms(), &r.targets(), ev.window, ev.threshold)).collect();
        policies.push(PolicySummary {
            name: spec.name(),
            kind: spec.kind(),
            features: point.features,
            target: if uses_class_target(ev, point) {
                AssignmentTarget::BestInClass
            } else {
                AssignmentTarget::Optimal
            },
            best: b,
            seeds: seeds.clone(),
            steps: reps.iter().map(|r| r.rows.len()).collect(),
            final_regret: finals.clone(),
            normalized_regret: reps.iter().map(ReplicationResult::normalized_regret).collect(),
            agreement: reps.iter().map(|r| window_agreement(&r.arms(), &r.targets(), ev.window)).collect(),
            optimal_assignment_rate: summaries[b].optimal_assignment_rate,
            found_assignment: found,
            mean_final_regret: mean(&finals),
            se_final_regret: standard_error(&finals),
            mean_curve: curve.mean.clone(),
            se_curve: curve.se.clone(),
            mse: summarize_mse(&reps, n_arms),
            grid: summaries,
        });
        curves.push(curve);
    }

    let mut summary = Summary {
        schema: SUMMARY_SCHEMA.into(),
        version: SUMMARY_VERSION,
        name: config.name.clone(),
        environment: config.environment.clone(),
        n_arms,
        context_dim,
        horizon: config.horizon,
        replications: config.replications,
        seed_base: config.seed,
        evaluation: config.evaluation.clone(),
        policies,
        comparison: pairwise_compare(&[]),
    };
    summary.refresh_comparison();
    if let Some(dir) = &out_dir {
        let path = dir.join("summary.json");
        summary.write(&path)?;
        files.push(path);
        files.extend(write_charts(&curves, dir, &config.name)?);
        if let Some(mse) = mse_csv(&summary) {
            let path = dir.join("mse.csv");
            std::fs::write(&path, mse).map_err(io_err(&path))?;
            files.push(path);
        }
    }
    Ok(RunOutput { summary, out_dir, files })
}

fn write_traces(dir: &Path, name: &str, reps: &[ReplicationResult]) -> Result<Vec<PathBuf>> {
    reps.iter()
        .map(|r| {
            let path = dir.join(trace_file_name(name, r.seed));
            write_trace(&path, &r.rows).map(|_| path)
        })
        .collect()
}

/// `policy,arm,step,mse,replications` rows of every policy with MSE checkpoints.
fn mse_csv(summary: &Summary) -> Option<String> {
    let mut s = String::from("policy,arm,step,mse,replications\n");
    let mut any = false;
    for p in &summary.policies {
        if let Some(m) = &p.mse {
            any = true;
            for (a, series) in m.per_arm.iter().enumerate() {
                for (k, v) in series.iter().enumerate() {
                    s.push_str(&format!("{},{a},{},{v},{}\n", p.name, m.steps[k], m.counted[k]));
                }
            }
        }
    }
    any.then_some(s)
}

/// Runs a single policy spec without writing files; convenient for tests.
pub fn run_policy_replications(
    ctx: &RunContext<'_>,
    point: &GridPoint,
    target: Option<&ClassTarget>,
    seeds: &[u64],
    execution: Execution,
) -> Result<Vec<ReplicationResult>> {
    map_range(execution, seeds.len(), |r| run_replication(ctx, &point.builder, point.features, target, seeds[r]))
        .into_iter()
        .collect()
}
