//! Information radius of an ensemble's Bernoulli predictions.
//!
//! With `N` heads treated as a uniform discrete posterior over parameters,
//! the expected information gained about *which head fits best* from
//! observing the outcome of action `a` is the Jensen-Shannon divergence of
//! the heads' predictive distributions:
//!
//! ```text
//! I(x, a) = H(mean_i p_i) - mean_i H(p_i)
//! ```
//!
//! [`bayes_info_gain`] computes the same quantity the long way round
//! (marginal, posterior, expected KL) for arbitrary priors and serves as the
//! oracle for [`jsd`]. All values are in nats.

use crate::error::{Error, Result};
use crate::types::{InfoMap, Mask, ProbMap};

/// Entropy of a Bernoulli(p) variable, with `0 ln 0 = 0`.
pub fn bernoulli_entropy(p: f64) -> f64 {
    xlogx_neg(p) + xlogx_neg(1.0 - p)
}

#[inline]
fn xlogx_neg(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -x * x.ln()
    }
}

/// Jensen-Shannon divergence (information radius) of the heads' Bernoulli
/// predictions at a single action. Always in `[0, ln 2]`.
///
/// An empty slice yields 0.
pub fn jsd(probs: &[f64]) -> f64 {
    // agreement is exactly zero; the mean of equal values can drift by an ulp
    if probs.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let n = probs.len() as f64;
    let mean = probs.iter().sum::<f64>() / n;
    let mean_entropy = probs.iter().map(|&p| bernoulli_entropy(p)).sum::<f64>() / n;
    // concavity makes this non-negative; clamp the rounding residue
    (bernoulli_entropy(mean) - mean_entropy).clamp(0.0, std::f64::consts::LN_2)
}

/// Expected KL divergence between parameter posterior and prior after
/// observing one outcome, evaluated directly from Bayes' rule.
///
/// `probs[i]` is `p(b = 1 | theta_i)` and `prior[i]` is `p(theta_i)`.
pub fn bayes_info_gain(probs: &[f64], prior: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Empty("head probabilities"));
    }
    if prior.len() != probs.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} prior weights", probs.len()),
            actual: prior.len().to_string(),
        });
    }
    let sum: f64 = prior.iter().sum();
    if prior.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::UnnormalizedPrior { sum });
    }

    let mut gain = 0.0;
    for outcome in [0.0, 1.0] {
        let likelihood = |p: f64| if outcome == 1.0 { p } else { 1.0 - p };
        let marginal: f64 = probs
            .iter()
            .zip(prior)
            .map(|(&p, &w)| w * likelihood(p))
            .sum();
        if marginal <= 0.0 {
            continue;
        }
        let mut kl = 0.0;
        for (&p, &w) in probs.iter().zip(prior) {
            let posterior = w * likelihood(p) / marginal;
            if posterior > 0.0 {
                kl += posterior * (posterior / w).ln();
            }
        }
        gain += marginal * kl;
    }
    Ok(gain)
}

/// Pixelwise information radius across the ensemble's maps.
pub fn info_map(maps: &[ProbMap]) -> Result<InfoMap> {
    let first = maps.first().ok_or(Error::Empty("ensemble maps"))?;
    let shape = first.shape();
    for m in &maps[1..] {
        if m.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_string(),
                actual: m.shape().to_string(),
            });
        }
    }
    let mut column = vec![0.0; maps.len()];
    let values = (0..shape.len())
        .map(|i| {
            for (slot, m) in column.iter_mut().zip(maps) {
                *slot = m.values()[i];
            }
            jsd(&column)
        })
        .collect();
    InfoMap::new(shape, values, false)
}

/// Min-max rescales an information map to `[0, 1]` using statistics over
/// the valid pixels of every orientation slice. Invalid pixels become 0, as
/// does everything when the valid range is degenerate.
pub fn normalize(map: &InfoMap, mask: &Mask) -> Result<InfoMap> {
    let shape = map.shape();
    if mask.grid() != shape.grid {
        return Err(Error::ShapeMismatch {
            expected: shape.grid.to_string(),
            actual: mask.grid().to_string(),
        });
    }
    let cells = shape.grid.cells();
    let valid = mask.cells();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &v) in map.values().iter().enumerate() {
        if valid[i % cells] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        return Err(Error::NoValidPixels);
    }
    let range = hi - lo;
    let values = map
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !valid[i % cells] || range <= 0.0 {
                0.0
            } else {
                ((v - lo) / range).clamp(0.0, 1.0)
            }
        })
        .collect();
    InfoMap::new(shape, values, true)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;

    use proptest::prelude::*;

    use super::*;
    use crate::types::{GridShape, MapShape};

    // Expected values below come from evaluating the entropy formula by hand:
    //   H(0.2) = -0.2 ln 0.2 - 0.8 ln 0.8 = 0.500402...
    //   jsd({0.2, 0.8}) = ln 2 - H(0.2) = 0.192745...
    fn h_direct(p: f64) -> f64 {
        -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
    }

    #[test]
    fn entropy_spot_values() {
        assert!((bernoulli_entropy(0.5) - LN_2).abs() < 1e-15);
        assert_eq!(bernoulli_entropy(0.0), 0.0);
        assert_eq!(bernoulli_entropy(1.0), 0.0);
        assert!((bernoulli_entropy(0.2) - h_direct(0.2)).abs() < 1e-15);
        assert!((bernoulli_entropy(0.2) - 0.5004).abs() < 1e-4);
    }

    #[test]
    fn jsd_spot_values() {
        assert_eq!(jsd(&[0.3, 0.3, 0.3]), 0.0);
        assert!((jsd(&[0.0, 1.0]) - LN_2).abs() < 1e-15);
        let expected = LN_2 - h_direct(0.2);
        assert!((jsd(&[0.2, 0.8]) - expected).abs() < 1e-15);
        assert!((jsd(&[0.2, 0.8]) - 0.1927).abs() < 1e-4);
    }

    #[test]
    fn bayes_spot_values() {
        // posterior after b = 1 is (0.2, 0.8); KL against the uniform prior
        let kl = 0.2 * (0.2f64 / 0.5).ln() + 0.8 * (0.8f64 / 0.5).ln();
        let got = bayes_info_gain(&[0.2, 0.8], &[0.5, 0.5]).unwrap();
        assert!((got - kl).abs() < 1e-15);
        assert!((got - jsd(&[0.2, 0.8])).abs() < 1e-12);
        assert_eq!(bayes_info_gain(&[0.37], &[1.0]).unwrap(), 0.0);
        assert!(bayes_info_gain(&[0.4, 0.4, 0.4], &[1.0 / 3.0; 3]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn bayes_rejects_bad_prior() {
        assert!(matches!(
            bayes_info_gain(&[0.2, 0.8], &[0.5, 0.6]),
            Err(Error::UnnormalizedPrior { .. })
        ));
        assert!(bayes_info_gain(&[0.2, 0.8], &[1.5, -0.5]).is_err());
        assert!(bayes_info_gain(&[0.2, 0.8], &[1.0]).is_err());
    }

    fn shape() -> MapShape {
        MapShape::new(2, GridShape::new(3, 3))
    }

    #[test]
    fn info_map_of_identical_maps_is_zero() {
        let m = ProbMap::constant(shape(), 0.3).unwrap();
        let info = info_map(&[m.clone(), m.clone(), m]).unwrap();
        assert!(info.values().iter().all(|&v| v == 0.0));
        assert!(!info.is_normalized());
    }

    #[test]
    fn info_map_of_opposite_certainties_is_ln2() {
        let a = ProbMap::constant(shape(), 0.0).unwrap();
        let b = ProbMap::constant(shape(), 1.0).unwrap();
        let info = info_map(&[a, b]).unwrap();
        assert!(info.values().iter().all(|&v| (v - LN_2).abs() < 1e-15));
    }

    #[test]
    fn info_map_rejects_empty_and_mismatch() {
        assert!(info_map(&[]).is_err());
        let a = ProbMap::constant(shape(), 0.2).unwrap();
        let b = ProbMap::constant(MapShape::new(1, GridShape::new(3, 3)), 0.2).unwrap();
        assert!(info_map(&[a, b]).is_err());
    }

    #[test]
    fn normalize_rescales_over_valid_entries() {
        let s = MapShape::new(1, GridShape::new(1, 4));
        let m = InfoMap::new(s, vec![0.1, 0.3, 0.5, 0.6], false).unwrap();
        let mask = Mask::new(s.grid, vec![true, true, true, false]).unwrap();
        let n = normalize(&m, &mask).unwrap();
        assert!(n.is_normalized());
        assert_eq!(n.values()[0], 0.0);
        assert!((n.values()[1] - 0.5).abs() < 1e-12);
        assert_eq!(n.values()[2], 1.0);
        // masked out entry is 0 even though it held the largest raw value
        assert_eq!(n.values()[3], 0.0);
    }

    #[test]
    fn normalize_spans_orientations() {
        let s = MapShape::new(2, GridShape::new(1, 2));
        let m = InfoMap::new(s, vec![0.1, 0.2, 0.3, 0.5], false).unwrap();
        let n = normalize(&m, &Mask::full(s.grid)).unwrap();
        for (got, want) in n.values().iter().zip([0.0, 0.25, 0.5, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn normalize_degenerate_range_is_zero() {
        let s = MapShape::new(2, GridShape::new(2, 2));
        let m = InfoMap::new(s, vec![0.4; 8], false).unwrap();
        let n = normalize(&m, &Mask::full(s.grid)).unwrap();
        assert!(n.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_without_valid_pixels_errors() {
        let s = MapShape::new(1, GridShape::new(2, 2));
        let m = InfoMap::zeros(s, false);
        let mask = Mask::new(s.grid, vec![false; 4]).unwrap();
        assert!(matches!(normalize(&m, &mask), Err(Error::NoValidPixels)));
    }

    fn heads() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..=1.0, 1..=8)
    }

    proptest! {
        #[test]
        fn jsd_bounded(h in heads()) {
            let v = jsd(&h);
            prop_assert!((0.0..=LN_2).contains(&v));
        }

        #[test]
        fn jsd_matches_bayes_with_uniform_prior(h in heads()) {
            let prior = vec![1.0 / h.len() as f64; h.len()];
            let b = bayes_info_gain(&h, &prior).unwrap();
            prop_assert!((b - jsd(&h)).abs() <= 1e-10);
        }

        #[test]
        fn jsd_permutation_invariant(mut h in heads(), seed in any::<u64>()) {
            let before = jsd(&h);
            let k = (seed as usize) % h.len();
            h.rotate_left(k);
            h.reverse();
            prop_assert!((jsd(&h) - before).abs() < 1e-14);
        }

        #[test]
        fn jsd_outcome_symmetric(h in heads()) {
            let flipped: Vec<f64> = h.iter().map(|p| 1.0 - p).collect();
            prop_assert!((jsd(&h) - jsd(&flipped)).abs() < 1e-14);
        }

        #[test]
        fn jsd_positive_under_perturbation(p in 0.01f64..0.99, n in 2usize..8, eps in 1e-6f64..1e-2) {
            let mut h = vec![p; n];
            prop_assert_eq!(jsd(&h), 0.0);
            h[0] = (p + eps).min(1.0);
            prop_assert!(jsd(&h) > 0.0);
        }

        #[test]
        fn info_map_matches_scalar(vals in proptest::collection::vec(0.0f64..=1.0, 3 * 18)) {
            let s = shape();
            let maps: Vec<ProbMap> = vals
                .chunks(18)
                .map(|c| ProbMap::new(s, c.to_vec()).unwrap())
                .collect();
            let info = info_map(&maps).unwrap();
            for i in 0..s.len() {
                let column: Vec<f64> = maps.iter().map(|m| m.values()[i]).collect();
                prop_assert_eq!(info.values()[i], jsd(&column));
            }
        }
    }
}
