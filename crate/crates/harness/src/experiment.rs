//! Single runs with their file outputs, and parallel sweeps.

use std::path::Path;

use afford_core::predictor::checkpoint;
use afford_core::trainer::{run, RunConfig, RunOutcome};
use rayon::prelude::*;

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::output::{self, RunPaths};
use crate::stats::{aggregate, ExperimentSummary, RunResult};

/// Caps the number of sweep worker threads.
pub const THREADS_VAR: &str = "AFFORD_BANDIT_THREADS";

pub fn summary_path(out: &Path) -> std::path::PathBuf {
    out.join("summary.csv")
}

pub fn result_of(cfg: &RunConfig, outcome: &RunOutcome) -> RunResult {
    RunResult {
        method: cfg.method.name().into(),
        env: cfg.env.kind.name().into(),
        seed: cfg.seed,
        checkpoints: outcome.log.checkpoints(),
    }
}

/// Runs one configuration and writes its log, final parameters and
/// checkpoint maps under `out`.
pub fn run_and_save(cfg: &RunConfig, out: &Path) -> Result<(RunOutcome, RunPaths)> {
    let outcome = run(cfg)?;
    let paths = RunPaths::new(out, cfg.method.name(), cfg.env.kind.name(), cfg.seed);
    output::save_log(&outcome.log, &paths.log)?;
    output::create_dir(paths.params.parent().expect("params path has a parent"))?;
    checkpoint::save(&outcome.ensemble, &paths.params).map_err(|e| match e {
        afford_core::Error::Io(io) => Error::io(&paths.params, io),
        other => Error::Core(other),
    })?;
    for snap in &outcome.snapshots {
        output::save_snapshot(&paths, snap)?;
    }
    Ok((outcome, paths))
}

/// Every (method, env, seed) combination of a sweep, in a fixed order.
pub fn sweep_configs(settings: &Settings) -> Result<Vec<RunConfig>> {
    let methods = settings.method_list()?;
    let envs = settings.env_list()?;
    let seeds = settings.seed_list()?;
    let mut out = Vec::with_capacity(methods.len() * envs.len() * seeds.len());
    for &env in &envs {
        for &method in &methods {
            for &seed in &seeds {
                out.push(settings.run_config(method, env, seed)?);
            }
        }
    }
    Ok(out)
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// Worker pool sized by the environment override, else one thread per core.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every configuration on a worker pool; each worker writes its own
/// run's files. The summary is written after all runs finish.
pub fn sweep(configs: &[RunConfig], out: &Path, reps: usize, seed: u64) -> Result<(Vec<RunResult>, ExperimentSummary)> {
    let pool = worker_pool()?;
    let results: Vec<RunResult> = pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| run_and_save(cfg, out).map(|(outcome, _)| result_of(cfg, &outcome)))
            .collect::<Result<_>>()
    })?;
    let summary = aggregate(&results, reps, seed)?;
    output::save_summary(&summary, &summary_path(out))?;
    Ok((results, summary))
}

