//! Self-checks run by `afford-bandit verify`.

use std::f64::consts::LN_2;
use std::sync::Arc;

use afford_core::infogain::{bayes_info_gain, jsd};
use afford_core::predictor::gradcheck::{self, REL_FLOOR, STEP};
use afford_core::rng;
use afford_core::{ActionSpec, Arch, ConvWidths, Ensemble, GridShape, Mask, ModelConfig, Outcome, Scene, Transition};
use rand::Rng;

use crate::error::Result;

pub const EQUIVALENCE_SAMPLES: usize = 10_000;
pub const EQUIVALENCE_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-4;

/// (model seed, batch seed) pairs for the gradient checks.
pub const GRADIENT_SEEDS: [(u64, u64); 3] = [(0, 100), (5, 6), (1, 2)];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Largest gap between the Bayesian information gain under a uniform prior
/// and the information radius, over random head vectors of size 1..=8.
pub fn equivalence_gap(samples: usize, seed: u64) -> Result<f64> {
    let mut rng = rng::stream(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let n = rng.random_range(1..=8);
        let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let prior = vec![1.0 / n as f64; n];
        worst = worst.max((bayes_info_gain(&probs, &prior)? - jsd(&probs)).abs());
    }
    Ok(worst)
}

fn equivalence() -> Result<Check> {
    let gap = equivalence_gap(EQUIVALENCE_SAMPLES, 17)?;
    Ok(Check {
        name: "info-gain equivalence",
        passed: gap <= EQUIVALENCE_TOL,
        detail: format!("max |gain - jsd| = {gap:.3e} over {EQUIVALENCE_SAMPLES} vectors"),
    })
}

fn jsd_bounds() -> Check {
    let mut rng = rng::stream(5, 0);
    let mut in_range = true;
    for _ in 0..EQUIVALENCE_SAMPLES {
        let n = rng.random_range(1..=8);
        let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let v = jsd(&probs);
        in_range &= (0.0..=LN_2).contains(&v);
    }
    let identical = jsd(&[0.37; 5]) == 0.0;
    let spot = jsd(&[0.2, 0.8]);
    Check {
        name: "jsd bounds",
        passed: in_range && identical && (spot - 0.1927).abs() <= 1e-4,
        detail: format!("in [0, ln 2]: {in_range}, identical heads give 0: {identical}, jsd(0.2, 0.8) = {spot:.6}"),
    }
}

fn random_batch(seed: u64, grid: GridShape, q: usize, n: usize) -> Result<Vec<Transition>> {
    let mut rng = rng::stream(seed, 0);
    (0..n)
        .map(|i| {
            let heights = (0..grid.cells()).map(|_| rng.random::<f64>()).collect();
            let scene = Arc::new(Scene::new(i as u64, heights, Mask::with_border(grid, 1))?);
            let a = ActionSpec::new(
                rng.random_range(0..q),
                rng.random_range(1..grid.height - 1),
                rng.random_range(1..grid.width - 1),
            );
            Ok(Transition::new(scene, a, Outcome::from(rng.random_bool(0.5)), i as u64))
        })
        .collect()
}

fn gradient(name: &'static str, arch: Arch) -> Result<Check> {
    let cfg = ModelConfig {
        grid: GridShape::new(8, 8),
        orientations: 2,
        n_heads: 2,
        arch,
        widths: ConvWidths { stem: 1, down: 2, bottleneck: 2 },
        ..ModelConfig::default()
    };
    let mut worst = 0.0f64;
    let mut params = 0;
    // Fixed draws: with random ones a ReLU input occasionally lands within
    // one step of zero, where a central difference straddles the kink.
    for (model_seed, batch_seed) in GRADIENT_SEEDS {
        let ensemble = Ensemble::init(cfg.clone(), model_seed)?;
        let batch = random_batch(batch_seed, cfg.grid, cfg.orientations, 4)?;
        let r = gradcheck::check(&ensemble, &batch, STEP, REL_FLOOR)?;
        worst = worst.max(r.max_rel_error);
        params = r.params;
    }
    Ok(Check {
        name,
        passed: worst <= GRADIENT_TOL,
        detail: format!(
            "max relative error {worst:.3e} over {params} parameters, {} draws",
            GRADIENT_SEEDS.len()
        ),
    })
}

pub fn run_all() -> Result<Vec<Check>> {
    Ok(vec![
        equivalence()?,
        jsd_bounds(),
        gradient("conv gradient", Arch::Conv)?,
        gradient("tabular gradient", Arch::Tabular)?,
    ])
}
