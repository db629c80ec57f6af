//! Batch execution of an experiment's cross product.

use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use scalesim::engine::{self, BoxStats, SimulationTrace};
use serde::Serialize;

use crate::config::{ExperimentConfig, RunSpec};
use crate::losses::{write_losses, LossRow};
use crate::trace::write_trace;
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 picks the number of cores.
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub seed_offset: u64,
    /// Replaces the config's master seed.
    pub master_seed: Option<u64>,
    /// Keep only these policy names.
    pub policies: Option<Vec<String>>,
    /// Replaces the config's alpha list.
    pub alphas: Option<Vec<f64>>,
    pub replications: Option<u64>,
    pub write_traces: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub policy: String,
    pub alpha: f64,
    pub seed: u64,
    pub steps_completed: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub spec: RunSpec,
    pub wall_clock: Duration,
    pub outcome: Result<LossRow, RunFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub policy: String,
    pub alpha: f64,
    #[serde(flatten)]
    pub stats: BoxStats,
    /// Median loss over the lowest median at the same alpha.
    pub median_ratio_to_best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub experiment: String,
    pub runs: usize,
    pub failed: usize,
    pub groups: Vec<GroupSummary>,
    pub failures: Vec<RunFailure>,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub results: Vec<RunResult>,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn rows(&self) -> Vec<LossRow> {
        self.results
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().cloned())
            .collect()
    }

    pub fn group(&self, policy: &str, alpha: f64) -> Option<&GroupSummary> {
        self.summary
            .groups
            .iter()
            .find(|g| g.policy == policy && g.alpha == alpha)
    }

    /// Total wall-clock time spent simulating one policy.
    pub fn wall_clock(&self, policy: &str) -> Duration {
        self.results
            .iter()
            .filter(|r| r.spec.policy == policy)
            .map(|r| r.wall_clock)
            .sum()
    }
}

fn apply_options(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentConfig, CliError> {
    let mut config = config.clone();
    let bad = |flag: &str, message: String| CliError::Config {
        location: flag.to_string(),
        message,
    };
    if let Some(names) = &opts.policies {
        for n in names {
            if !config.policies.iter().any(|p| &p.name == n) {
                return Err(bad("--policies", format!("no policy named {n:?} in the config")));
            }
        }
        config.policies.retain(|p| names.contains(&p.name));
    }
    if let Some(alphas) = &opts.alphas {
        for a in alphas {
            scalesim::cost::RiskAversion::new(*a).map_err(|e| bad("--alpha", e.to_string()))?;
        }
        if alphas.is_empty() {
            return Err(bad("--alpha", "at least one alpha is required".into()));
        }
        config.alphas = alphas.clone();
    }
    if let Some(n) = opts.replications {
        if n == 0 {
            return Err(bad("--replications", "at least one seed is required".into()));
        }
        config.replications = n;
    }
    if let Some(w) = opts.write_traces {
        config.write_traces = w;
    }
    Ok(config)
}

fn trace_file_name(spec: &RunSpec) -> String {
    format!("{}_a{}_s{}.csv", spec.policy, spec.alpha, spec.seed)
}

fn execute(spec: &RunSpec) -> (RunResult, SimulationTrace) {
    let start = Instant::now();
    let (outcome, trace) = match engine::run(&spec.scenario) {
        Ok(trace) => (
            Ok(LossRow {
                policy: spec.policy.clone(),
                alpha: spec.alpha,
                seed: spec.seed,
                total_loss: trace.total_loss,
                mean_step_loss: trace.mean_step_loss(),
            }),
            trace,
        ),
        Err(err) => (
            Err(RunFailure {
                policy: spec.policy.clone(),
                alpha: spec.alpha,
                seed: spec.seed,
                steps_completed: err.partial.records.len(),
                error: err.error.to_string(),
            }),
            err.partial,
        ),
    };
    let result = RunResult {
        spec: spec.clone(),
        wall_clock: start.elapsed(),
        outcome,
    };
    (result, trace)
}

fn summarize(config: &ExperimentConfig, results: &[RunResult]) -> Summary {
    let mut groups = Vec::new();
    for p in &config.policies {
        for &alpha in &config.alphas {
            let losses: Vec<f64> = results
                .iter()
                .filter_map(|r| r.outcome.as_ref().ok())
                .filter(|row| row.policy == p.name && row.alpha == alpha)
                .map(|row| row.total_loss)
                .collect();
            if let Ok(stats) = BoxStats::from_values(&losses) {
                groups.push(GroupSummary {
                    policy: p.name.clone(),
                    alpha,
                    stats,
                    median_ratio_to_best: f64::NAN,
                });
            }
        }
    }
    for i in 0..groups.len() {
        let best = groups
            .iter()
            .filter(|g| g.alpha == groups[i].alpha)
            .map(|g| g.stats.median)
            .fold(f64::INFINITY, f64::min);
        groups[i].median_ratio_to_best = if best > 0.0 {
            groups[i].stats.median / best
        } else if groups[i].stats.median == 0.0 {
            1.0
        } else {
            f64::INFINITY
        };
    }
    let failures: Vec<RunFailure> = results
        .iter()
        .filter_map(|r| r.outcome.as_ref().err().cloned())
        .collect();
    Summary {
        schema: "scalesim summary v1",
        experiment: config.name.clone(),
        runs: results.len(),
        failed: failures.len(),
        groups,
        failures,
    }
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>, CliError> {
    std::fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

/// Runs every (policy, alpha, seed) cell and writes `losses.csv`,
/// `summary.json` and, if enabled, one trace CSV per run. A failed run is
/// recorded in the summary and does not stop the others.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport, CliError> {
    let config = apply_options(config, opts)?;
    let master = opts.master_seed.unwrap_or(config.master_seed);
    let specs = config.runs(master, opts.seed_offset);
    let out_dir = opts
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&config.name));
    let traces_dir = out_dir.join("traces");
    std::fs::create_dir_all(if config.write_traces { &traces_dir } else { &out_dir })
        .map_err(|e| CliError::io(&out_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    // Bounded batches keep at most a few traces in memory; results are
    // written by this thread in cross-product order.
    let batch = pool.current_num_threads().max(1) * 2;
    let mut results = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(batch) {
        let done: Vec<(RunResult, SimulationTrace)> =
            pool.install(|| chunk.par_iter().map(execute).collect());
        for (result, trace) in done {
            if config.write_traces {
                let path = traces_dir.join(trace_file_name(&result.spec));
                write_trace(create(&path)?, &trace.records)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            }
            results.push(result);
        }
    }

    let rows: Vec<LossRow> = results
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().cloned())
        .collect();
    let losses_path = out_dir.join("losses.csv");
    write_losses(create(&losses_path)?, &rows)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", losses_path.display())))?;

    let summary = summarize(&config, &results);
    let summary_path = out_dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    json.push('\n');
    std::fs::write(&summary_path, json).map_err(|e| CliError::io(&summary_path, e))?;

    Ok(ExperimentReport {
        out_dir,
        results,
        summary,
    })
}
