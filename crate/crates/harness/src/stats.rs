//! Percentile bootstrap and checkpoint aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use afford_core::rng::{self, tags};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_REPS: usize = 50_000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    Mean,
    Median,
}

impl Stat {
    pub fn name(self) -> &'static str {
        match self {
            Stat::Mean => "mean",
            Stat::Median => "median",
        }
    }

    /// Evaluates the statistic; sorts `values` in place for the median.
    pub fn apply(self, values: &mut [f64]) -> f64 {
        match self {
            Stat::Mean => mean(values),
            Stat::Median => {
                values.sort_by(f64::total_cmp);
                quantile_sorted(values, 0.5)
            }
        }
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Stat::Mean),
            "median" => Ok(Stat::Median),
            _ => Err(Error::Config(format!("unknown statistic `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub stat: Stat,
    pub reps: usize,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear-interpolation quantile of sorted data (the usual "type 7").
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let i = h.floor() as usize;
    match sorted.get(i + 1) {
        Some(&next) => sorted[i] + (h - i as f64) * (next - sorted[i]),
        None => sorted[i],
    }
}

fn check_level(reps: usize, level: f64) -> Result<()> {
    if reps == 0 {
        return Err(Error::Config("bootstrap reps must be at least 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} outside (0, 1)")));
    }
    Ok(())
}

/// Turns replicate statistics into an interval around `point`.
///
/// With few replicates the percentile interval can exclude the point
/// estimate by rounding; it is widened to contain it.
fn interval(mut reps: Vec<f64>, point: f64, stat: Stat, level: f64) -> BootstrapResult {
    reps.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let lo = quantile_sorted(&reps, tail).min(point);
    let hi = quantile_sorted(&reps, 1.0 - tail).max(point);
    BootstrapResult { point, lo, hi, stat, reps: reps.len() }
}

/// Percentile bootstrap confidence interval of `stat`.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    values: &[f64],
    reps: usize,
    stat: Stat,
    rng: &mut R,
    level: f64,
) -> Result<BootstrapResult> {
    if values.is_empty() {
        return Err(Error::Empty("bootstrap sample"));
    }
    check_level(reps, level)?;
    let point = stat.apply(&mut values.to_vec());
    let n = values.len();
    let mut resample = vec![0.0; n];
    let mut out = Vec::with_capacity(reps);
    for _ in 0..reps {
        for slot in resample.iter_mut() {
            *slot = values[rng.random_range(0..n)];
        }
        out.push(stat.apply(&mut resample));
    }
    Ok(interval(out, point, stat, level))
}

/// Bootstrap of the mean of group means, resampling within each group.
/// Every group counts equally regardless of its size.
pub fn stratified_mean_ci<R: Rng + ?Sized>(
    groups: &[Vec<f64>],
    reps: usize,
    rng: &mut R,
    level: f64,
) -> Result<BootstrapResult> {
    if groups.is_empty() || groups.iter().any(Vec::is_empty) {
        return Err(Error::Empty("bootstrap group"));
    }
    check_level(reps, level)?;
    let point = groups.iter().map(|g| mean(g)).sum::<f64>() / groups.len() as f64;
    let mut out = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut total = 0.0;
        for g in groups {
            let s: f64 = (0..g.len()).map(|_| g[rng.random_range(0..g.len())]).sum();
            total += s / g.len() as f64;
        }
        out.push(total / groups.len() as f64);
    }
    Ok(interval(out, point, Stat::Mean, level))
}

/// Checkpoint success rates of one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: String,
    pub env: String,
    pub seed: u64,
    pub checkpoints: Vec<(usize, f64)>,
}

/// How rows of a summary were pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pooling {
    /// One (method, env) cell.
    Cell,
    /// Every run of a method across envs, each run weighted equally.
    Runs,
    /// Mean of per-env means, each env weighted equally.
    Tasks,
}

/// Env label used for the pooled rows.
pub const POOLED_RUNS: &str = "all_runs";
pub const POOLED_TASKS: &str = "all_tasks";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub env: String,
    pub checkpoint: usize,
    pub seed_count: usize,
    pub pooling: Pooling,
    pub ci: BootstrapResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub rows: Vec<SummaryRow>,
}

impl ExperimentSummary {
    pub fn get(&self, method: &str, env: &str, checkpoint: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.env == env && r.checkpoint == checkpoint)
    }
}

/// Groups checkpoint success rates by (method, env, checkpoint) and
/// attaches bootstrap intervals of the mean. Each method also gets pooled
/// rows across envs, by run and by task.
///
/// The result does not depend on the order of `runs`.
pub fn aggregate(runs: &[RunResult], reps: usize, seed: u64) -> Result<ExperimentSummary> {
    let first = runs.first().ok_or(Error::Empty("run collection"))?;
    let steps: Vec<usize> = first.checkpoints.iter().map(|c| c.0).collect();
    for r in runs {
        let s: Vec<usize> = r.checkpoints.iter().map(|c| c.0).collect();
        if s != steps {
            return Err(Error::CheckpointMismatch(format!(
                "{} {} seed {} has {s:?}, expected {steps:?}",
                r.method, r.env, r.seed
            )));
        }
    }

    let mut sorted: Vec<&RunResult> = runs.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.method, &a.env, a.seed)
            .cmp(&(&b.method, &b.env, b.seed))
            .then_with(|| {
                let ra = a.checkpoints.iter().map(|c| c.1);
                let rb = b.checkpoints.iter().map(|c| c.1);
                ra.zip(rb).map(|(x, y)| x.total_cmp(&y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    // method -> env -> per-checkpoint values
    let mut cells: BTreeMap<&str, BTreeMap<&str, Vec<Vec<f64>>>> = BTreeMap::new();
    for r in sorted {
        let per_env = cells.entry(&r.method).or_default().entry(&r.env).or_insert_with(|| vec![Vec::new(); steps.len()]);
        for (k, &(_, rate)) in r.checkpoints.iter().enumerate() {
            per_env[k].push(rate);
        }
    }

    let mut rows = Vec::new();
    let mut cell_index = 0u64;
    let mut next_rng = || {
        cell_index += 1;
        rng::stream(rng::derive_seed(seed, tags::BOOTSTRAP), cell_index)
    };
    for (method, envs) in &cells {
        for (k, &checkpoint) in steps.iter().enumerate() {
            let mut all = Vec::new();
            let mut groups = Vec::new();
            for (env, values) in envs {
                let v = &values[k];
                let ci = bootstrap_ci(v, reps, Stat::Mean, &mut next_rng(), DEFAULT_LEVEL)?;
                rows.push(SummaryRow {
                    method: method.to_string(),
                    env: env.to_string(),
                    checkpoint,
                    seed_count: v.len(),
                    pooling: Pooling::Cell,
                    ci,
                });
                all.extend_from_slice(v);
                groups.push(v.clone());
            }
            let ci = bootstrap_ci(&all, reps, Stat::Mean, &mut next_rng(), DEFAULT_LEVEL)?;
            rows.push(SummaryRow {
                method: method.to_string(),
                env: POOLED_RUNS.into(),
                checkpoint,
                seed_count: all.len(),
                pooling: Pooling::Runs,
                ci,
            });
            let ci = stratified_mean_ci(&groups, reps, &mut next_rng(), DEFAULT_LEVEL)?;
            rows.push(SummaryRow {
                method: method.to_string(),
                env: POOLED_TASKS.into(),
                checkpoint,
                seed_count: all.len(),
                pooling: Pooling::Tasks,
                ci,
            });
        }
    }
    Ok(ExperimentSummary { rows })
}
