//! Action selection.
//!
//! Training uses an optimistic score, `rhat + c_expl * info`, where `rhat` is
//! either a Thompson-sampled head or the ensemble mean. Evaluation uses the
//! pessimistic `mean - c_eval * info`. Both are reduced to an action by a
//! masked argmax. The remaining samplers implement the Random and
//! Where2Act-style baselines.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ActionSpec, InfoMap, Mask, ProbMap, ScoreMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub c_expl: f64,
    pub c_eval: f64,
    pub thompson: bool,
    pub boltzmann_temperature: f64,
    pub random_fraction: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            c_expl: 0.3,
            c_eval: 0.1,
            thompson: true,
            boltzmann_temperature: 1.0,
            random_fraction: 0.5,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_expl >= 0.0 && self.c_eval >= 0.0) {
            return Err(Error::Config("c_expl and c_eval must be non-negative".into()));
        }
        if !(self.boltzmann_temperature > 0.0) || !self.boltzmann_temperature.is_finite() {
            return Err(Error::Config("boltzmann_temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.random_fraction) {
            return Err(Error::Config("random_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Uniformly picks an ensemble head for Thompson sampling.
pub fn sample_head<R: Rng + ?Sized>(rng: &mut R, n_heads: usize) -> Result<usize> {
    if n_heads == 0 {
        return Err(Error::Empty("ensemble"));
    }
    Ok(rng.random_range(0..n_heads))
}

fn combine(rhat: &ProbMap, info: &InfoMap, coeff: f64) -> Result<ScoreMap> {
    if rhat.shape() != info.shape() {
        return Err(Error::ShapeMismatch {
            expected: rhat.shape().to_string(),
            actual: info.shape().to_string(),
        });
    }
    let values = rhat
        .values()
        .iter()
        .zip(info.values())
        .map(|(&r, &i)| r + coeff * i)
        .collect();
    ScoreMap::new(rhat.shape(), values)
}

/// Optimistic training score `rhat + c_expl * info`.
pub fn explore_score(rhat: &ProbMap, info_norm: &InfoMap, c_expl: f64) -> Result<ScoreMap> {
    combine(rhat, info_norm, c_expl)
}

/// Score for the information-only explorer: the normalized information map
/// itself.
pub fn info_only_score(info_norm: &InfoMap) -> Result<ScoreMap> {
    let zero = ProbMap::constant(info_norm.shape(), 0.0)?;
    explore_score(&zero, info_norm, 1.0)
}

/// Pessimistic evaluation score `mean - c_eval * info`.
pub fn eval_score(mean: &ProbMap, info_norm: &InfoMap, c_eval: f64) -> Result<ScoreMap> {
    combine(mean, info_norm, -c_eval)
}

fn check_mask(mask: &Mask, grid: crate::types::GridShape) -> Result<()> {
    if mask.grid() != grid {
        return Err(Error::ShapeMismatch {
            expected: grid.to_string(),
            actual: mask.grid().to_string(),
        });
    }
    Ok(())
}

/// Highest-scoring valid action. Ties go to the lowest flat index in
/// `(orient, row, col)` order.
pub fn select_argmax(score: &ScoreMap, valid: &Mask) -> Result<ActionSpec> {
    let shape = score.shape();
    check_mask(valid, shape.grid)?;
    let cells = shape.grid.cells();
    let mask = valid.cells();
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in score.values().iter().enumerate() {
        if !mask[i % cells] {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| shape.action_at(i))
        .ok_or(Error::NoValidPixels)
}

/// Uniform over valid `(pixel, orientation)` pairs.
pub fn sample_random<R: Rng + ?Sized>(rng: &mut R, valid: &Mask, orientations: usize) -> Result<ActionSpec> {
    if orientations == 0 {
        return Err(Error::Empty("orientation set"));
    }
    let n_valid = valid.count_valid();
    if n_valid == 0 {
        return Err(Error::NoValidPixels);
    }
    let k = rng.random_range(0..n_valid * orientations);
    let (row, col) = valid
        .valid_cells()
        .nth(k % n_valid)
        .expect("index below valid count");
    Ok(ActionSpec::new(k / n_valid, row, col))
}

/// Softmax sampling with probability proportional to `exp(rhat / T)` over
/// valid actions.
pub fn sample_boltzmann<R: Rng + ?Sized>(
    rng: &mut R,
    rhat: &ProbMap,
    valid: &Mask,
    temperature: f64,
) -> Result<ActionSpec> {
    if !(temperature > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let shape = rhat.shape();
    check_mask(valid, shape.grid)?;
    let cells = shape.grid.cells();
    let mask = valid.cells();
    let candidates: Vec<usize> = (0..shape.len()).filter(|i| mask[i % cells]).collect();
    if candidates.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let values = rhat.values();
    let top = candidates
        .iter()
        .map(|&i| values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = candidates
        .iter()
        .map(|&i| ((values[i] - top) / temperature).exp())
        .collect();
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidMap(format!("softmax weights: {e}")))?;
    Ok(shape.action_at(candidates[dist.sample(rng)]))
}

/// Where2Act-style schedule: uniform sampling for the first
/// `random_fraction * budget` steps, Boltzmann sampling afterwards.
pub fn where2act_policy<R: Rng + ?Sized>(
    step: usize,
    budget: usize,
    rng: &mut R,
    rhat: &ProbMap,
    valid: &Mask,
    cfg: &PolicyConfig,
) -> Result<ActionSpec> {
    if step >= budget {
        return Err(Error::Config(format!("step {step} outside budget {budget}")));
    }
    if where2act_is_random(step, budget, cfg.random_fraction) {
        sample_random(rng, valid, rhat.shape().orientations)
    } else {
        sample_boltzmann(rng, rhat, valid, cfg.boltzmann_temperature)
    }
}

/// Whether `step` (zero-based) falls in the random phase of the schedule.
pub fn where2act_is_random(step: usize, budget: usize, random_fraction: f64) -> bool {
    (step as f64) < random_fraction * budget as f64
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;

    use super::*;
    use crate::rng::Stream;
    use crate::types::{GridShape, MapShape};

    fn shape() -> MapShape {
        MapShape::new(2, GridShape::new(3, 3))
    }

    fn pmap(values: Vec<f64>) -> ProbMap {
        ProbMap::new(shape(), values).unwrap()
    }

    #[test]
    fn default_coefficients() {
        let cfg = PolicyConfig::default();
        assert_eq!(cfg.c_expl, 0.3);
        assert_eq!(cfg.c_eval, 0.1);
        assert!(cfg.thompson);
    }

    #[test]
    fn head_sampling() {
        let mut rng = Stream::seed_from_u64(1);
        assert_eq!(sample_head(&mut rng, 1).unwrap(), 0);
        assert!(sample_head(&mut rng, 0).is_err());
        for _ in 0..1000 {
            assert!(sample_head(&mut rng, 5).unwrap() < 5);
        }
    }

    #[test]
    fn head_frequencies_uniform() {
        let mut rng = Stream::seed_from_u64(2);
        let mut counts = [0usize; 5];
        let draws = 50_000;
        for _ in 0..draws {
            counts[sample_head(&mut rng, 5).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.2).abs() <= 0.02);
        }
    }

    #[test]
    fn score_arithmetic() {
        let s = MapShape::new(1, GridShape::new(1, 1));
        let r = ProbMap::new(s, vec![0.6]).unwrap();
        let i = InfoMap::new(s, vec![0.5], true).unwrap();
        assert!((explore_score(&r, &i, 0.3).unwrap().values()[0] - 0.75).abs() < 1e-12);
        let m = ProbMap::new(s, vec![0.8]).unwrap();
        let i = InfoMap::new(s, vec![0.4], true).unwrap();
        assert!((eval_score(&m, &i, 0.1).unwrap().values()[0] - 0.76).abs() < 1e-12);
        assert_eq!(explore_score(&r, &i, 0.0).unwrap().values(), r.values());
        assert_eq!(eval_score(&m, &i, 0.0).unwrap().values(), m.values());
    }

    #[test]
    fn score_shape_mismatch() {
        let r = ProbMap::constant(shape(), 0.5).unwrap();
        let i = InfoMap::zeros(MapShape::new(1, GridShape::new(3, 3)), true);
        assert!(explore_score(&r, &i, 0.3).is_err());
        assert!(eval_score(&r, &i, 0.3).is_err());
    }

    #[test]
    fn argmax_unique_and_ties() {
        let mut v = vec![0.1; 18];
        v[13] = 0.9;
        let s = ScoreMap::new(shape(), v).unwrap();
        let full = Mask::full(shape().grid);
        assert_eq!(select_argmax(&s, &full).unwrap(), ActionSpec::new(1, 1, 1));

        let flat = ScoreMap::new(shape(), vec![0.4; 18]).unwrap();
        let mask = Mask::new(shape().grid, vec![false, false, true, true, true, true, true, true, true]).unwrap();
        assert_eq!(select_argmax(&flat, &mask).unwrap(), ActionSpec::new(0, 0, 2));
    }

    #[test]
    fn argmax_skips_invalid_maximum() {
        let mut v = vec![0.0; 18];
        v[0] = 5.0; // (0, 0, 0) masked out below
        v[10] = 3.0; // (1, 0, 1)
        let s = ScoreMap::new(shape(), v).unwrap();
        let mut cells = vec![true; 9];
        cells[0] = false;
        let mask = Mask::new(shape().grid, cells).unwrap();
        assert_eq!(select_argmax(&s, &mask).unwrap(), ActionSpec::new(1, 0, 1));
    }

    #[test]
    fn argmax_requires_valid_pixel() {
        let s = ScoreMap::new(shape(), vec![0.0; 18]).unwrap();
        let mask = Mask::new(shape().grid, vec![false; 9]).unwrap();
        assert!(matches!(select_argmax(&s, &mask), Err(Error::NoValidPixels)));
    }

    #[test]
    fn random_single_candidate() {
        let s = MapShape::new(1, GridShape::new(3, 3));
        let mut cells = vec![false; 9];
        cells[5] = true;
        let mask = Mask::new(s.grid, cells).unwrap();
        let mut rng = Stream::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(sample_random(&mut rng, &mask, 1).unwrap(), ActionSpec::new(0, 1, 2));
        }
        let empty = Mask::new(s.grid, vec![false; 9]).unwrap();
        assert!(sample_random(&mut rng, &empty, 1).is_err());
    }

    #[test]
    fn random_frequencies_uniform() {
        let mut cells = vec![true; 9];
        cells[4] = false;
        let mask = Mask::new(shape().grid, cells).unwrap();
        let mut rng = Stream::seed_from_u64(11);
        let mut counts = [0usize; 18];
        let draws = 50_000;
        for _ in 0..draws {
            let a = sample_random(&mut rng, &mask, 2).unwrap();
            a.check(&mask, 2).unwrap();
            counts[shape().index(a.orient, a.row, a.col)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let expected = if i % 9 == 4 { 0.0 } else { 1.0 / 16.0 };
            assert!((c as f64 / draws as f64 - expected).abs() <= 0.02);
        }
    }

    #[test]
    fn boltzmann_uniform_logits() {
        let r = pmap(vec![0.3; 18]);
        let mask = Mask::full(shape().grid);
        let mut rng = Stream::seed_from_u64(5);
        let mut counts = vec![0usize; 18];
        for _ in 0..36_000 {
            let a = sample_boltzmann(&mut rng, &r, &mask, 1.0).unwrap();
            counts[shape().index(a.orient, a.row, a.col)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 36_000.0 - 1.0 / 18.0).abs() < 0.01);
        }
    }

    #[test]
    fn boltzmann_cold_limit_picks_dominant() {
        let mut v = vec![0.5; 18];
        v[7] = 0.6;
        let r = pmap(v);
        let mask = Mask::full(shape().grid);
        let mut rng = Stream::seed_from_u64(6);
        let hits = (0..10_000)
            .filter(|_| sample_boltzmann(&mut rng, &r, &mask, 1e-3).unwrap() == shape().action_at(7))
            .count();
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn boltzmann_matches_softmax() {
        let v: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).fract()).collect();
        let r = pmap(v.clone());
        let mut cells = vec![true; 9];
        cells[2] = false;
        let mask = Mask::new(shape().grid, cells.clone()).unwrap();
        let t = 0.25;
        // exact softmax oracle
        let z: f64 = (0..18).filter(|i| cells[i % 9]).map(|i| (v[i] / t).exp()).sum();
        let exact: Vec<f64> = (0..18)
            .map(|i| if cells[i % 9] { (v[i] / t).exp() / z } else { 0.0 })
            .collect();
        let mut rng = Stream::seed_from_u64(7);
        let mut counts = [0usize; 18];
        let draws = 50_000;
        for _ in 0..draws {
            let a = sample_boltzmann(&mut rng, &r, &mask, t).unwrap();
            counts[shape().index(a.orient, a.row, a.col)] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&exact)
            .map(|(&c, &p)| (c as f64 / draws as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "total variation {tv}");
    }

    #[test]
    fn where2act_schedule() {
        assert!(where2act_is_random(0, 100, 0.5));
        assert!(where2act_is_random(49, 100, 0.5));
        assert!(!where2act_is_random(50, 100, 0.5));
        assert!(where2act_is_random(4999, 10_000, 0.5));
        assert!(!where2act_is_random(5000, 10_000, 0.5));

        let r = pmap(vec![0.5; 18]);
        let mask = Mask::full(shape().grid);
        let cfg = PolicyConfig::default();
        let mut rng = Stream::seed_from_u64(0);
        assert!(where2act_policy(0, 100, &mut rng, &r, &mask, &cfg).is_ok());
        assert!(where2act_policy(50, 100, &mut rng, &r, &mask, &cfg).is_ok());
        assert!(where2act_policy(100, 100, &mut rng, &r, &mask, &cfg).is_err());
    }

    #[test]
    fn where2act_branches_consume_expected_samplers() {
        // the random branch must agree with sample_random on an identical stream
        let r = pmap((0..18).map(|i| i as f64 / 18.0).collect());
        let mask = Mask::full(shape().grid);
        let cfg = PolicyConfig::default();
        let a = where2act_policy(10, 100, &mut Stream::seed_from_u64(4), &r, &mask, &cfg).unwrap();
        let b = sample_random(&mut Stream::seed_from_u64(4), &mask, 2).unwrap();
        assert_eq!(a, b);
        let a = where2act_policy(60, 100, &mut Stream::seed_from_u64(4), &r, &mask, &cfg).unwrap();
        let b = sample_boltzmann(&mut Stream::seed_from_u64(4), &r, &mask, 1.0).unwrap();
        assert_eq!(a, b);
    }

    fn unit_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..=1.0, 18)
    }

    proptest! {
        #[test]
        fn ucb_and_pessimism_dominance(r in unit_vec(), i in unit_vec(), c in 0.0f64..2.0) {
            let rhat = pmap(r);
            let info = InfoMap::new(shape(), i, true).unwrap();
            let up = explore_score(&rhat, &info, c).unwrap();
            let down = eval_score(&rhat, &info, c).unwrap();
            for k in 0..18 {
                prop_assert!(up.values()[k] >= rhat.values()[k]);
                prop_assert!(down.values()[k] <= rhat.values()[k]);
            }
        }

        #[test]
        fn argmax_affine_invariant(v in proptest::collection::vec(-5.0f64..5.0, 18),
                                   cells in proptest::collection::vec(any::<bool>(), 9),
                                   shift in -10.0f64..10.0, scale in 0.01f64..100.0) {
            prop_assume!(cells.iter().any(|&c| c));
            let mask = Mask::new(shape().grid, cells).unwrap();
            let base = select_argmax(&ScoreMap::new(shape(), v.clone()).unwrap(), &mask).unwrap();
            // quantize so shifted/scaled values keep their order exactly
            let q: Vec<f64> = v.iter().map(|x| (x * 8.0).round() / 8.0).collect();
            let qa = select_argmax(&ScoreMap::new(shape(), q.clone()).unwrap(), &mask).unwrap();
            let shifted: Vec<f64> = q.iter().map(|x| x + shift.round()).collect();
            let scaled: Vec<f64> = q.iter().map(|x| x * scale.round().max(1.0)).collect();
            prop_assert_eq!(select_argmax(&ScoreMap::new(shape(), shifted).unwrap(), &mask).unwrap(), qa);
            prop_assert_eq!(select_argmax(&ScoreMap::new(shape(), scaled).unwrap(), &mask).unwrap(), qa);
            base.check(&mask, 2).unwrap();
        }

        #[test]
        fn selections_always_valid(cells in proptest::collection::vec(any::<bool>(), 9),
                                   v in unit_vec(), seed in any::<u64>()) {
            prop_assume!(cells.iter().any(|&c| c));
            let mask = Mask::new(shape().grid, cells).unwrap();
            let mut rng = Stream::seed_from_u64(seed);
            let r = pmap(v.clone());
            select_argmax(&ScoreMap::new(shape(), v).unwrap(), &mask).unwrap().check(&mask, 2).unwrap();
            sample_random(&mut rng, &mask, 2).unwrap().check(&mask, 2).unwrap();
            sample_boltzmann(&mut rng, &r, &mask, 0.5).unwrap().check(&mask, 2).unwrap();
        }
    }
}
