//! Ensemble of per-pixel Bernoulli affordance predictors.
//!
//! Two architectures share one interface: a shared-encoder U-Net with one
//! decoder per head, and a tabular model with one free logit per
//! `(head, orientation, row, col)`. Parameters of either live in a single
//! flat vector so the optimizer, checkpoint writer and gradient checker do
//! not care which one is in use.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod unet;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{GridShape, MapShape, Outcome, ProbMap, Scene, Transition};
use adam::Adam;
use unet::UNet;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Standard deviation of the tabular logit initialization.
const TABULAR_INIT_STD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[default]
    Conv,
    Tabular,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Conv => "conv",
            Arch::Tabular => "tabular",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(Arch::Conv),
            "tabular" => Ok(Arch::Tabular),
            other => Err(Error::Config(format!("unknown arch `{other}`"))),
        }
    }
}

/// Filter counts of the three encoder blocks; the decoder mirrors them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvWidths {
    pub stem: usize,
    pub down: usize,
    pub bottleneck: usize,
}

impl Default for ConvWidths {
    fn default() -> Self {
        Self { stem: 8, down: 16, bottleneck: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub grid: GridShape,
    pub orientations: usize,
    pub n_heads: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub updates_per_interaction: usize,
    pub arch: Arch,
    pub widths: ConvWidths,
    /// Draw a separate mini-batch for every head instead of sharing one.
    pub independent_batches: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            grid: GridShape::new(32, 32),
            orientations: 8,
            n_heads: 5,
            learning_rate: 3e-4,
            batch_size: 256,
            updates_per_interaction: 5,
            arch: Arch::Conv,
            widths: ConvWidths::default(),
            independent_batches: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_heads == 0 {
            return fail("n_heads must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.orientations == 0 {
            return fail("orientations must be at least 1".into());
        }
        if self.grid.height == 0 || self.grid.width == 0 {
            return fail(format!("grid {} is empty", self.grid));
        }
        if self.arch == Arch::Conv {
            if !self.grid.height.is_multiple_of(4) || !self.grid.width.is_multiple_of(4) {
                return fail(format!("conv arch needs grid sides divisible by 4, got {}", self.grid));
            }
            let w = self.widths;
            if w.stem == 0 || w.down == 0 || w.bottleneck == 0 {
                return fail("conv widths must be positive".into());
            }
        }
        Ok(())
    }

    pub fn map_shape(&self) -> MapShape {
        MapShape::new(self.orientations, self.grid)
    }
}

#[derive(Debug, Clone)]
enum Net {
    Conv(UNet),
    Tabular,
}

/// Ensemble parameters together with their optimizer state.
#[derive(Debug, Clone)]
pub struct Ensemble {
    config: ModelConfig,
    net: Net,
    params: Vec<f64>,
    adam: Adam,
}

impl Ensemble {
    /// Randomly initialized ensemble; every head uses its own sub-seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut e = Self::zeros(config)?;
        match &e.net {
            Net::Conv(net) => net.init(&mut e.params, e.config.n_heads, seed),
            Net::Tabular => {
                let per_head = e.config.map_shape().len();
                let normal = Normal::new(0.0, TABULAR_INIT_STD).expect("valid std");
                for (h, table) in e.params.chunks_mut(per_head).enumerate() {
                    let mut stream = rng::stream(seed, 1 + h as u64);
                    table.iter_mut().for_each(|v| *v = normal.sample(&mut stream));
                }
            }
        }
        Ok(e)
    }

    /// Ensemble with every parameter set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (net, len) = match config.arch {
            Arch::Conv => {
                let net = UNet::new(config.grid, config.orientations, config.widths);
                let len = net.param_count(config.n_heads);
                (Net::Conv(net), len)
            }
            Arch::Tabular => (Net::Tabular, config.n_heads * config.map_shape().len()),
        };
        let adam = Adam::new(len, config.learning_rate);
        Ok(Self { config, net, params: vec![0.0; len], adam })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_heads(&self) -> usize {
        self.config.n_heads
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces the parameter vector; the optimizer state is kept.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.params.len()),
                actual: format!("{} parameters", params.len()),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        self.params = params;
        Ok(())
    }

    /// Number of Adam steps taken so far.
    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    fn check_scene(&self, scene: &Scene) -> Result<()> {
        if scene.grid() != self.config.grid {
            return Err(Error::ShapeMismatch {
                expected: self.config.grid.to_string(),
                actual: scene.grid().to_string(),
            });
        }
        Ok(())
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.config.n_heads {
            return Err(Error::HeadOutOfRange { index: head, heads: self.config.n_heads });
        }
        Ok(())
    }

    fn to_map(&self, logits: Vec<f64>) -> ProbMap {
        let values = logits.into_iter().map(sigmoid).collect();
        ProbMap::new(self.config.map_shape(), values).expect("sigmoid output lies in [0, 1]")
    }

    fn tabular_logits(&self, head: usize) -> &[f64] {
        let n = self.config.map_shape().len();
        &self.params[head * n..(head + 1) * n]
    }

    pub fn predict_head(&self, head: usize, scene: &Scene) -> Result<ProbMap> {
        self.check_head(head)?;
        self.check_scene(scene)?;
        Ok(match &self.net {
            Net::Conv(net) => {
                let enc = net.encode(&self.params, scene);
                self.to_map(net.head_logits(&self.params, head, &enc))
            }
            Net::Tabular => self.to_map(self.tabular_logits(head).to_vec()),
        })
    }

    /// Maps of every head; the encoder runs once.
    pub fn predict_all(&self, scene: &Scene) -> Result<Vec<ProbMap>> {
        self.check_scene(scene)?;
        Ok(match &self.net {
            Net::Conv(net) => {
                let enc = net.encode(&self.params, scene);
                (0..self.config.n_heads)
                    .map(|h| self.to_map(net.head_logits(&self.params, h, &enc)))
                    .collect()
            }
            Net::Tabular => (0..self.config.n_heads)
                .map(|h| self.to_map(self.tabular_logits(h).to_vec()))
                .collect(),
        })
    }

    /// Mean loss over heads and batch elements and its gradient, with every
    /// head evaluated on the same batch.
    pub fn loss_and_grad(&self, batch: &[Transition]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let n = self.config.n_heads;
        let share = 1.0 / (batch.len() * n) as f64;
        let items = dedup(batch);
        let weighted: Vec<(&Transition, Vec<f64>)> = items
            .into_iter()
            .map(|(t, count)| (t, vec![count as f64 * share; n]))
            .collect();
        self.accumulate(&weighted)
    }

    /// Like [`Ensemble::loss_and_grad`] but head `i` sees only `batches[i]`.
    /// The loss is the mean over heads of each head's batch mean.
    pub fn loss_and_grad_independent(&self, batches: &[Vec<Transition>]) -> Result<(f64, Vec<f64>)> {
        let n = self.config.n_heads;
        if batches.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} batches"),
                actual: format!("{} batches", batches.len()),
            });
        }
        if batches.iter().any(Vec::is_empty) {
            return Err(Error::Empty("training batch"));
        }
        let mut weighted = Vec::new();
        for (h, batch) in batches.iter().enumerate() {
            let share = 1.0 / (batch.len() * n) as f64;
            for (t, count) in dedup(batch) {
                let mut w = vec![0.0; n];
                w[h] = count as f64 * share;
                weighted.push((t, w));
            }
        }
        self.accumulate(&weighted)
    }

    fn accumulate(&self, weighted: &[(&Transition, Vec<f64>)]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (t, w) in weighted {
            t.action.check(t.scene.mask(), self.config.orientations)?;
            self.check_scene(&t.scene)?;
            let target = t.outcome.target();
            let dloss = |z: f64| bce_logit(z, target);
            match &self.net {
                Net::Conv(net) => {
                    loss += net.accumulate(&self.params, &mut grad, &t.scene, t.action, w, dloss);
                }
                Net::Tabular => {
                    let shape = self.config.map_shape();
                    let idx = shape.index(t.action.orient, t.action.row, t.action.col);
                    for (h, &wh) in w.iter().enumerate() {
                        if wh == 0.0 {
                            continue;
                        }
                        let k = h * shape.len() + idx;
                        let (l, dz) = dloss(self.params[k]);
                        loss += wh * l;
                        grad[k] += wh * dz;
                    }
                }
            }
        }
        Ok((loss, grad))
    }

    fn apply(&mut self, loss: f64, grad: &[f64]) -> Result<f64> {
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.adam.step(&mut self.params, grad);
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(loss)
    }

    /// One Adam step on the shared batch; returns the pre-update mean loss.
    pub fn train_step(&mut self, batch: &[Transition]) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad(batch)?;
        self.apply(loss, &grad)
    }

    /// One Adam step where head `i` is trained on `batches[i]`.
    pub fn train_step_independent(&mut self, batches: &[Vec<Transition>]) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad_independent(batches)?;
        self.apply(loss, &grad)
    }
}

/// Collapses repeated draws of the same transition into `(first, count)`,
/// keeping first-occurrence order.
fn dedup(batch: &[Transition]) -> Vec<(&Transition, usize)> {
    let mut slots: HashMap<(usize, u64, usize, usize, usize, u8), usize> = HashMap::new();
    let mut out: Vec<(&Transition, usize)> = Vec::new();
    for t in batch {
        let key = (
            Arc::as_ptr(&t.scene) as usize,
            t.step_index,
            t.action.orient,
            t.action.row,
            t.action.col,
            t.outcome.bit(),
        );
        match slots.get(&key) {
            Some(&i) => out[i].1 += 1,
            None => {
                slots.insert(key, out.len());
                out.push((t, 1));
            }
        }
    }
    out
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of predicting `p` for outcome `b`.
pub fn bce_loss(p: f64, b: Outcome) -> f64 {
    bce(p, b.target())
}

fn bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
}

/// Loss and its derivative with respect to the logit. Inside the clamp the
/// derivative is `p - b`; outside it the clamped loss is flat.
fn bce_logit(z: f64, target: f64) -> (f64, f64) {
    let p = sigmoid(z);
    let dz = if (BCE_EPS..=1.0 - BCE_EPS).contains(&p) { p - target } else { 0.0 };
    (bce(p, target), dz)
}

/// Pointwise mean of equally shaped maps.
pub fn mean_map(maps: &[ProbMap]) -> Result<ProbMap> {
    let first = maps.first().ok_or(Error::Empty("map sequence"))?;
    let shape = first.shape();
    let mut acc = vec![0.0; shape.len()];
    for m in maps {
        if m.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: format!("{shape:?}"),
                actual: format!("{:?}", m.shape()),
            });
        }
        acc.iter_mut().zip(m.values()).for_each(|(a, v)| *a += v);
    }
    let n = maps.len() as f64;
    let values = acc.into_iter().map(|a| (a / n).clamp(0.0, 1.0)).collect();
    ProbMap::new(shape, values)
}
