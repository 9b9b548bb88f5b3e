//! The online interact-update loop and checkpoint evaluation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::buffer::ReplayBuffer;
use crate::envs::{self, EnvConfig, EnvKind, EnvState};
use crate::error::{Error, Result};
use crate::infogain::{info_map, normalize};
use crate::policy::{self, PolicyConfig};
use crate::predictor::{mean_map, Ensemble, ModelConfig};
use crate::rng::{self, tags, Stream};
use crate::types::{ActionSpec, GridShape, InfoMap, Mask, Outcome, ProbMap, Scene, ScoreMap, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ida,
    JsdOnly,
    Greedy,
    Random,
    Where2act,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ida, Method::JsdOnly, Method::Greedy, Method::Random, Method::Where2act];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ida => "ida",
            Method::JsdOnly => "jsd_only",
            Method::Greedy => "greedy",
            Method::Random => "random",
            Method::Where2act => "where2act",
        }
    }

    /// Ensemble size the method trains with; the single-model baselines
    /// ignore the configured head count.
    pub fn heads(self, configured: usize) -> usize {
        match self {
            Method::Ida | Method::JsdOnly => configured,
            Method::Greedy | Method::Random | Method::Where2act => 1,
        }
    }

    /// Uncertainty penalty applied at evaluation.
    pub fn eval_penalty(self, policy: &PolicyConfig) -> f64 {
        match self {
            Method::Ida => policy.c_eval,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Checkpoints used when none are configured, clipped to the budget.
pub const DEFAULT_CHECKPOINTS: [usize; 4] = [25, 50, 100, 250];

pub fn default_checkpoints(budget: usize) -> Vec<usize> {
    let mut out: Vec<usize> = DEFAULT_CHECKPOINTS.into_iter().filter(|&c| c < budget).collect();
    if budget > 0 {
        out.push(budget);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub policy: PolicyConfig,
    pub method: Method,
    pub budget: usize,
    pub warmup: usize,
    pub eval_checkpoints: Vec<usize>,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl RunConfig {
    /// Desk-scale defaults: 32x32 grid, eight orientations, 250 interactions.
    pub fn new(method: Method, env: EnvKind, seed: u64) -> Self {
        let model = ModelConfig::default();
        Self {
            env: EnvConfig::new(env, model.grid, model.orientations),
            model,
            policy: PolicyConfig::default(),
            method,
            budget: 250,
            warmup: 10,
            eval_checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            eval_episodes: 20,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.model.validate()?;
        self.policy.validate()?;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.env.grid != self.model.grid || self.env.orientations != self.model.orientations {
            return fail(format!(
                "environment ({}, Q={}) and model ({}, Q={}) disagree",
                self.env.grid, self.env.orientations, self.model.grid, self.model.orientations
            ));
        }
        if self.budget == 0 {
            return fail("budget must be at least 1".into());
        }
        if self.warmup > self.budget {
            return fail(format!("warmup {} exceeds budget {}", self.warmup, self.budget));
        }
        if self.eval_episodes == 0 {
            return fail("eval_episodes must be at least 1".into());
        }
        if self.eval_checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("checkpoints {:?} are not strictly increasing", self.eval_checkpoints));
        }
        if let Some(&c) = self.eval_checkpoints.iter().find(|&&c| c == 0 || c > self.budget) {
            return fail(format!("checkpoint {c} outside 1..={}", self.budget));
        }
        Ok(())
    }

    /// Model config with the method's head count applied.
    pub fn effective_model(&self) -> ModelConfig {
        ModelConfig { n_heads: self.method.heads(self.model.n_heads), ..self.model.clone() }
    }

    pub fn grid(&self) -> GridShape {
        self.model.grid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Interact { t: usize, action: ActionSpec, outcome: Outcome, loss: f64 },
    Checkpoint { t: usize, success_rate: f64 },
}

impl Record {
    pub fn t(&self) -> usize {
        match *self {
            Record::Interact { t, .. } | Record::Checkpoint { t, .. } => t,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<Record>,
}

impl RunLog {
    pub fn interactions(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| matches!(r, Record::Interact { .. }))
    }

    /// `(step, success rate)` for every checkpoint in order.
    pub fn checkpoints(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| match *r {
                Record::Checkpoint { t, success_rate } => Some((t, success_rate)),
                Record::Interact { .. } => None,
            })
            .collect()
    }

    pub fn success_at(&self, t: usize) -> Option<f64> {
        self.checkpoints().into_iter().find(|&(s, _)| s == t).map(|(_, r)| r)
    }
}

/// Call counts used to audit a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub env_steps: usize,
    /// Predictor evaluations made to choose training actions.
    pub selection_forwards: usize,
}

/// Maps of the first evaluation scene at a checkpoint, reduced over
/// orientations by a per-pixel maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub scene: Arc<Scene>,
    pub afford: Vec<f64>,
    pub info: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub stats: RunStats,
    pub snapshots: Vec<Snapshot>,
    pub ensemble: Ensemble,
}

/// Anything that can produce per-head probability maps for a state.
pub trait MapSource {
    fn maps(&self, state: &EnvState) -> Result<Vec<ProbMap>>;
}

impl MapSource for Ensemble {
    fn maps(&self, state: &EnvState) -> Result<Vec<ProbMap>> {
        self.predict_all(state.scene())
    }
}

/// Uses the environment's hidden ground truth as a one-head predictor.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthOracle;

impl MapSource for GroundTruthOracle {
    fn maps(&self, state: &EnvState) -> Result<Vec<ProbMap>> {
        Ok(vec![state.ground_truth().clone()])
    }
}

/// Ensemble mean and min-max normalized information radius.
pub fn mean_and_info(maps: &[ProbMap], mask: &Mask) -> Result<(ProbMap, InfoMap)> {
    let mean = mean_map(maps)?;
    let info = normalize(&info_map(maps)?, mask)?;
    Ok((mean, info))
}

/// Streams for one evaluation pass; scenes and outcomes are separate so the
/// scene sequence does not depend on the actions taken.
#[derive(Debug, Clone)]
pub struct EvalStreams {
    pub scenes: Stream,
    pub outcomes: Stream,
}

impl EvalStreams {
    /// Streams for checkpoint `t` of a run seeded with `seed`. They do not
    /// depend on the method, so methods are compared on the same scenes.
    pub fn for_checkpoint(seed: u64, t: usize) -> Self {
        Self {
            scenes: rng::stream(rng::derive_seed(seed, tags::EVAL_SCENES), t as u64),
            outcomes: rng::stream(rng::derive_seed(seed, tags::EVAL_OUTCOMES), t as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub success_rate: f64,
    pub snapshot: Option<(Arc<Scene>, Vec<f64>, Vec<f64>)>,
}

/// Success rate of the pessimistic greedy policy over fresh scenes.
pub fn evaluate<S: MapSource + ?Sized>(
    source: &S,
    env: &EnvConfig,
    c_eval: f64,
    episodes: usize,
    streams: &mut EvalStreams,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::Config("eval_episodes must be at least 1".into()));
    }
    let mut wins = 0usize;
    let mut snapshot = None;
    for ep in 0..episodes {
        let state = envs::reset(env, &mut streams.scenes, ep as u64)?;
        let mask = state.scene().mask();
        let maps = source.maps(&state)?;
        let (mean, info) = mean_and_info(&maps, mask)?;
        let score = policy::eval_score(&mean, &info, c_eval)?;
        let a = policy::select_argmax(&score, mask)?;
        if state.step(a, &mut streams.outcomes)?.is_success() {
            wins += 1;
        }
        if ep == 0 {
            snapshot = Some((state.scene().clone(), mean.max_over_orientations(), info.max_over_orientations()));
        }
    }
    Ok(EvalResult { success_rate: wins as f64 / episodes as f64, snapshot })
}

/// Training-time action choice for one interaction. `step` is one-based.
fn choose(
    cfg: &RunConfig,
    ensemble: &Ensemble,
    scene: &Scene,
    step: usize,
    rng: &mut Stream,
    stats: &mut RunStats,
) -> Result<ActionSpec> {
    let mask = scene.mask();
    let q = cfg.model.orientations;
    if step <= cfg.warmup {
        return policy::sample_random(rng, mask, q);
    }
    let p = &cfg.policy;
    match cfg.method {
        Method::Random => policy::sample_random(rng, mask, q),
        Method::Greedy => {
            stats.selection_forwards += 1;
            let map = ensemble.predict_head(0, scene)?;
            policy::select_argmax(&ScoreMap::new(map.shape(), map.values().to_vec())?, mask)
        }
        Method::Where2act => {
            if policy::where2act_is_random(step - 1, cfg.budget, p.random_fraction) {
                return policy::sample_random(rng, mask, q);
            }
            stats.selection_forwards += 1;
            let rhat = ensemble.predict_head(0, scene)?;
            policy::where2act_policy(step - 1, cfg.budget, rng, &rhat, mask, p)
        }
        Method::Ida => {
            stats.selection_forwards += 1;
            let maps = ensemble.predict_all(scene)?;
            let (mean, info) = mean_and_info(&maps, mask)?;
            let rhat = if p.thompson {
                let h = policy::sample_head(rng, maps.len())?;
                maps.into_iter().nth(h).expect("head index in range")
            } else {
                mean
            };
            policy::select_argmax(&policy::explore_score(&rhat, &info, p.c_expl)?, mask)
        }
        Method::JsdOnly => {
            stats.selection_forwards += 1;
            let maps = ensemble.predict_all(scene)?;
            let info = normalize(&info_map(&maps)?, mask)?;
            policy::select_argmax(&policy::info_only_score(&info)?, mask)
        }
    }
}

fn update(cfg: &RunConfig, ensemble: &mut Ensemble, buffer: &ReplayBuffer, rng: &mut Stream) -> Result<f64> {
    let updates = cfg.model.updates_per_interaction;
    if updates == 0 {
        return Ok(f64::NAN);
    }
    let b = cfg.model.batch_size;
    let mut total = 0.0;
    for _ in 0..updates {
        total += if cfg.model.independent_batches {
            let batches = (0..ensemble.n_heads())
                .map(|_| buffer.sample_batch(rng, b))
                .collect::<Result<Vec<_>>>()?;
            ensemble.train_step_independent(&batches)?
        } else {
            ensemble.train_step(&buffer.sample_batch(rng, b)?)?
        };
    }
    Ok(total / updates as f64)
}

/// Runs one full training loop with checkpoint evaluations.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut ensemble = Ensemble::init(cfg.effective_model(), rng::derive_seed(cfg.seed, tags::MODEL_INIT))?;
    let mut env_rng = rng::stream(cfg.seed, tags::ENV);
    let mut policy_rng = rng::stream(cfg.seed, tags::POLICY);
    let mut batch_rng = rng::stream(cfg.seed, tags::BATCH);
    let mut buffer = ReplayBuffer::new(cfg.model.orientations);
    let mut log = RunLog::default();
    let mut stats = RunStats::default();
    let mut snapshots = Vec::new();
    let c_eval = cfg.method.eval_penalty(&cfg.policy);
    let mut checkpoints = cfg.eval_checkpoints.iter().peekable();

    for step in 1..=cfg.budget {
        let state = envs::reset(&cfg.env, &mut env_rng, step as u64)?;
        let action = choose(cfg, &ensemble, state.scene(), step, &mut policy_rng, &mut stats)?;
        let outcome = state.step(action, &mut env_rng)?;
        stats.env_steps += 1;
        buffer.push(Transition::new(state.scene().clone(), action, outcome, step as u64))?;
        let loss = update(cfg, &mut ensemble, &buffer, &mut batch_rng)?;
        log.records.push(Record::Interact { t: step, action, outcome, loss });

        if checkpoints.next_if_eq(&&step).is_some() {
            let mut streams = EvalStreams::for_checkpoint(cfg.seed, step);
            let res = evaluate(&ensemble, &cfg.env, c_eval, cfg.eval_episodes, &mut streams)?;
            stats.env_steps += cfg.eval_episodes;
            log.records.push(Record::Checkpoint { t: step, success_rate: res.success_rate });
            if let Some((scene, afford, info)) = res.snapshot {
                snapshots.push(Snapshot { t: step, scene, afford, info });
            }
        }
    }
    Ok(RunOutcome { log, stats, snapshots, ensemble })
}
