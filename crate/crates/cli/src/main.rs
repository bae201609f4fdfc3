use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bandit_core::env::Dataset;
use bandit_harness::charts::chart_trace_dir;
use bandit_harness::metrics::{pairwise_compare, Outcome, PolicyScores};
use bandit_harness::{run_experiment, HarnessError, Result, RunConfig, RunOptions, Summary};

#[derive(Parser)]
#[command(name = "cbandit", version, about = "Run and compare contextual bandit experiments")]
struct Cli {
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy and grid point of a config file.
    Run {
        config: PathBuf,
        /// Number of replications (overrides the config).
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise sign-test comparison of the policies in one or more summaries.
    Compare {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// Write the report as JSON here instead of printing a table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render regret.svg and regret.csv from the trace files in a directory.
    Chart {
        trace_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset utilities.
    Datasets {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Check that a CSV file loads as a classification dataset.
    Validate {
        csv: PathBuf,
        #[arg(long, default_value = "label")]
        label: String,
    },
}

fn exit_code(e: &HarnessError) -> u8 {
    match e {
        HarnessError::Config(_) => 2,
        HarnessError::Runtime(_) | HarnessError::Io { .. } => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        set_jobs(jobs)?;
    }
    match cli.command {
        Command::Run { config, seeds, horizon, out } => run(&config, seeds, horizon, out),
        Command::Compare { summaries, out } => compare(&summaries, out.as_deref()),
        Command::Chart { trace_dir, out } => {
            let out = out.unwrap_or_else(|| trace_dir.clone());
            let title = trace_dir.file_name().map_or_else(|| "regret".into(), |n| n.to_string_lossy().into_owned());
            for f in chart_trace_dir(&trace_dir, &out, &title)? {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Datasets { command: DatasetCommand::Validate { csv, label } } => validate(&csv, &label),
    }
}

fn set_jobs(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(HarnessError::Config("--jobs must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    Ok(())
}

fn run(path: &Path, seeds: Option<usize>, horizon: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let config = RunConfig::from_path(path)?;
    let options =
        RunOptions { out, replications: seeds, horizon, base_dir: path.parent().map(Path::to_path_buf), dry: false };
    let result = run_experiment(&config, &options)?;
    let s = &result.summary;
    println!("{} ({} replications, horizon {})", s.name, s.replications, s.horizon);
    println!("{:<20} {:<24} {:>12} {:>10} {:>8}", "policy", "selected", "regret", "se", "rate");
    for p in &s.policies {
        println!(
            "{:<20} {:<24} {:>12.3} {:>10.3} {:>8.3}",
            p.name, p.grid[p.best].label, p.mean_final_regret, p.se_final_regret, p.optimal_assignment_rate
        );
    }
    if let Some(dir) = &result.out_dir {
        println!("wrote {} files to {}", result.files.len(), dir.display());
    }
    Ok(())
}

fn compare(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut scores: Vec<PolicyScores> = Vec::new();
    for p in paths {
        let s = Summary::read(p)?;
        if scores.iter().any(|x| x.environment == s.name) {
            return Err(HarnessError::Config(format!("two summaries share the run name {}", s.name)));
        }
        scores.extend(s.scores());
    }
    let report = pairwise_compare(&scores);
    if let Some(out) = out {
        let text = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        std::fs::write(out, text + "\n")
            .map_err(|e| HarnessError::Io { path: out.display().to_string(), source: e })?;
        return Ok(());
    }
    println!("{:<16} {:<18} {:<18} {:>6} {:>12} {:>9}", "environment", "policy", "versus", "result", "mean diff", "p");
    for pair in &report.pairs {
        let result = match pair.outcome {
            Outcome::Win => "win",
            Outcome::Loss => "loss",
            Outcome::Tie => "tie",
        };
        println!(
            "{:<16} {:<18} {:<18} {:>6} {:>12.5} {:>9}",
            pair.environment,
            pair.first,
            pair.second,
            result,
            pair.mean_difference,
            pair.significance.label()
        );
    }
    if paths.len() > 1 {
        println!();
        println!(
            "{:<18} {:<18} {:>5} {:>6} {:>5} {:>8} {:>8}",
            "policy", "versus", "wins", "losses", "ties", "sig.win", "sig.loss"
        );
        for t in &report.tallies {
            println!(
                "{:<18} {:<18} {:>5} {:>6} {:>5} {:>8} {:>8}",
                t.first, t.second, t.wins, t.losses, t.ties, t.significant_wins, t.significant_losses
            );
        }
    }
    Ok(())
}

fn validate(path: &Path, label: &str) -> Result<()> {
    let d = Dataset::from_path(path, label).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    if d.is_empty() {
        return Err(HarnessError::Config(format!("{}: no usable rows", path.display())));
    }
    println!("rows: {}", d.len());
    println!("dropped rows: {}", d.dropped_rows);
    println!("features: {}", d.dim());
    println!("classes: {} ({})", d.n_classes(), d.class_names.join(", "));
    println!("majority fraction: {:.4}", d.majority_fraction());
    Ok(())
}
