//! Synthetic single-step affordance environments with analytic ground truth.
//!
//! `shape_grasp` scatters rectangles and disks on a flat table; grasps
//! succeed mostly near object edges when the gripper is aligned with the
//! local boundary normal. `drawer_toy` has a single small handle that only
//! opens at one orientation.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ActionSpec, GridShape, MapShape, Mask, Outcome, ProbMap, Scene};

const PLACEMENT_ATTEMPTS: usize = 100;
const MIN_OBJECT: usize = 4;
const TABLE_HEIGHT: f64 = 0.5;
const HANDLE_HEIGHT: f64 = 1.0;
const HANDLE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    ShapeGrasp,
    DrawerToy,
}

impl EnvKind {
    pub const ALL: [EnvKind; 2] = [EnvKind::ShapeGrasp, EnvKind::DrawerToy];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::ShapeGrasp => "shape_grasp",
            EnvKind::DrawerToy => "drawer_toy",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown env `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub grid: GridShape,
    pub orientations: usize,
    pub p_hi: f64,
    pub p_lo: f64,
    /// Inclusive range of distances to the object boundary that count as edge cells.
    pub edge_band: (f64, f64),
    pub n_objects: usize,
    /// Success probability of the drawer handle at its orientation.
    pub handle_p: f64,
    /// Width of the invalid frame around the grid.
    pub border: usize,
}

impl EnvConfig {
    pub fn new(kind: EnvKind, grid: GridShape, orientations: usize) -> Self {
        Self {
            kind,
            grid,
            orientations,
            p_hi: 0.9,
            p_lo: 0.05,
            edge_band: (1.0, 2.0),
            n_objects: 1,
            handle_p: 0.95,
            border: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(0.0 <= self.p_lo && self.p_lo < self.p_hi && self.p_hi <= 1.0) {
            return fail(format!("need 0 <= p_lo < p_hi <= 1, got p_lo={} p_hi={}", self.p_lo, self.p_hi));
        }
        if !(0.0..=1.0).contains(&self.handle_p) {
            return fail(format!("handle_p must lie in [0, 1], got {}", self.handle_p));
        }
        if self.grid.height < 8 || self.grid.width < 8 {
            return fail(format!("grid {} is smaller than 8x8", self.grid));
        }
        if self.orientations == 0 {
            return fail("orientations must be at least 1".into());
        }
        if self.n_objects == 0 {
            return fail("n_objects must be at least 1".into());
        }
        let (lo, hi) = self.edge_band;
        if !(lo >= 0.0 && lo <= hi) {
            return fail(format!("edge_band must satisfy 0 <= lo <= hi, got {lo}..{hi}"));
        }
        if 2 * self.border + MIN_OBJECT > self.grid.height.min(self.grid.width) {
            return fail(format!("border {} leaves no room on a {} grid", self.border, self.grid));
        }
        Ok(())
    }

    fn max_object(&self) -> usize {
        (self.grid.height.min(self.grid.width) / 3).max(MIN_OBJECT)
    }

    /// Orientation whose bin is the drawer handle's pull direction.
    pub fn handle_orientation(&self) -> usize {
        self.orientations / 2
    }
}

/// One episode: a scene and its hidden success probabilities.
#[derive(Debug, Clone)]
pub struct EnvState {
    scene: Arc<Scene>,
    truth: ProbMap,
    episode: u64,
}

impl EnvState {
    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn ground_truth(&self) -> &ProbMap {
        &self.truth
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    /// Samples the outcome of `a`; exactly one uniform draw per call.
    pub fn step<R: Rng + ?Sized>(&self, a: ActionSpec, rng: &mut R) -> Result<Outcome> {
        a.check(self.scene.mask(), self.truth.shape().orientations)?;
        let p = self.truth.get(a);
        Ok(Outcome::from(rng.random::<f64>() < p))
    }
}

/// Draws a fresh scene; `episode` becomes the scene id.
pub fn reset<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R, episode: u64) -> Result<EnvState> {
    cfg.validate()?;
    let mask = Mask::with_border(cfg.grid, cfg.border);
    let (heights, truth) = match cfg.kind {
        EnvKind::ShapeGrasp => shape_grasp(cfg, rng)?,
        EnvKind::DrawerToy => drawer_toy(cfg, rng)?,
    };
    let truth = mask_truth(truth, &mask, cfg.orientations);
    let scene = Scene::new(episode, heights, mask)?;
    let truth = ProbMap::new(MapShape::new(cfg.orientations, cfg.grid), truth)?;
    Ok(EnvState { scene: Arc::new(scene), truth, episode })
}

fn mask_truth(mut truth: Vec<f64>, mask: &Mask, q: usize) -> Vec<f64> {
    let cells = mask.cells();
    for o in 0..q {
        let slice = &mut truth[o * cells.len()..(o + 1) * cells.len()];
        for (v, &ok) in slice.iter_mut().zip(cells) {
            if !ok {
                *v = 0.0;
            }
        }
    }
    truth
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { r0: usize, c0: usize, h: usize, w: usize },
    Disk { r0: usize, c0: usize, d: usize },
}

impl Shape {
    /// Bounding box as `(r0, c0, h, w)`.
    fn bbox(&self) -> (usize, usize, usize, usize) {
        match *self {
            Shape::Rect { r0, c0, h, w } => (r0, c0, h, w),
            Shape::Disk { r0, c0, d } => (r0, c0, d, d),
        }
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        let (r0, c0, h, w) = self.bbox();
        if r < r0 || c < c0 || r >= r0 + h || c >= c0 + w {
            return false;
        }
        match *self {
            Shape::Rect { .. } => true,
            Shape::Disk { d, .. } => {
                let rad = d as f64 / 2.0;
                let dy = (r - r0) as f64 + 0.5 - rad;
                let dx = (c - c0) as f64 + 0.5 - rad;
                dy * dy + dx * dx <= rad * rad
            }
        }
    }

    /// True when the boxes, grown by `gap` cells, overlap.
    fn near(&self, other: &Shape, gap: usize) -> bool {
        let (a_r, a_c, a_h, a_w) = self.bbox();
        let (b_r, b_c, b_h, b_w) = other.bbox();
        a_r < b_r + b_h + gap && b_r < a_r + a_h + gap && a_c < b_c + b_w + gap && b_c < a_c + a_w + gap
    }
}

fn random_shape<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Shape {
    let max = cfg.max_object();
    let (lo_r, hi_r) = (cfg.border, cfg.grid.height - cfg.border);
    let (lo_c, hi_c) = (cfg.border, cfg.grid.width - cfg.border);
    let rect = rng.random_bool(0.5);
    let h = rng.random_range(MIN_OBJECT..=max);
    let w = if rect { rng.random_range(MIN_OBJECT..=max) } else { h };
    let r0 = rng.random_range(lo_r..=hi_r - h);
    let c0 = rng.random_range(lo_c..=hi_c - w);
    if rect {
        Shape::Rect { r0, c0, h, w }
    } else {
        Shape::Disk { r0, c0, d: h }
    }
}

fn place_objects<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<Vec<Shape>> {
    let mut shapes: Vec<Shape> = Vec::with_capacity(cfg.n_objects);
    let mut attempts = 0;
    while shapes.len() < cfg.n_objects {
        if attempts == PLACEMENT_ATTEMPTS {
            return Err(Error::Placement { objects: cfg.n_objects, attempts });
        }
        attempts += 1;
        let s = random_shape(cfg, rng);
        if shapes.iter().all(|o| !o.near(&s, 1)) {
            shapes.push(s);
        }
    }
    Ok(shapes)
}

/// Euclidean distance from each object cell to the nearest non-object cell
/// (cells beyond the grid count as non-object); zero off the object.
pub fn boundary_distance(silhouette: &[bool], grid: GridShape) -> Vec<f64> {
    let (h, w) = (grid.height as isize, grid.width as isize);
    let mut out = vec![0.0; silhouette.len()];
    for r in 0..h {
        for c in 0..w {
            if !silhouette[(r * w + c) as usize] {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut k = 1isize;
            // grow a square ring until it cannot contain anything closer
            while (k as f64) < best + 1.0 {
                for dr in -k..=k {
                    for dc in -k..=k {
                        if dr.abs() != k && dc.abs() != k {
                            continue;
                        }
                        let (rr, cc) = (r + dr, c + dc);
                        let off = rr < 0 || cc < 0 || rr >= h || cc >= w || !silhouette[(rr * w + cc) as usize];
                        if off {
                            best = best.min(((dr * dr + dc * dc) as f64).sqrt());
                        }
                    }
                }
                k += 1;
            }
            out[(r * w + c) as usize] = best;
        }
    }
    out
}

/// Nearest of `q` orientation bins to `theta` taken modulo pi.
pub fn orientation_bin(theta: f64, q: usize) -> usize {
    let t = theta.rem_euclid(PI);
    ((t / (PI / q as f64)).round() as usize) % q
}

/// Orientation bin of the inward boundary normal at every cell, from central
/// differences of the distance field. `None` where the gradient vanishes.
fn normal_bins(dist: &[f64], grid: GridShape, q: usize) -> Vec<Option<usize>> {
    let (h, w) = (grid.height, grid.width);
    let at = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            dist[r as usize * w + c as usize]
        }
    };
    let mut out = vec![None; dist.len()];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gy = (at(r + 1, c) - at(r - 1, c)) / 2.0;
            let gx = (at(r, c + 1) - at(r, c - 1)) / 2.0;
            if gx.abs() + gy.abs() > 1e-12 {
                out[r as usize * w + c as usize] = Some(orientation_bin(gy.atan2(gx), q));
            }
        }
    }
    out
}

fn shape_grasp<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = cfg.grid;
    let shapes = place_objects(cfg, rng)?;
    let silhouette: Vec<bool> = (0..grid.cells())
        .map(|i| shapes.iter().any(|s| s.contains(i / grid.width, i % grid.width)))
        .collect();
    let heights = silhouette.iter().map(|&s| if s { 1.0 } else { TABLE_HEIGHT }).collect();
    let dist = boundary_distance(&silhouette, grid);
    let bins = normal_bins(&dist, grid, cfg.orientations);
    let (lo, hi) = cfg.edge_band;
    let cells = grid.cells();
    let mut truth = vec![0.0; cfg.orientations * cells];
    for i in (0..cells).filter(|&i| silhouette[i]) {
        let edge = dist[i] >= lo && dist[i] <= hi;
        for o in 0..cfg.orientations {
            let aligned = edge && bins[i] == Some(o);
            truth[o * cells + i] = if aligned { cfg.p_hi } else { cfg.p_lo };
        }
    }
    Ok((heights, truth))
}

fn drawer_toy<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = cfg.grid;
    let cells = grid.cells();
    // bare handle on the table, nothing else raised
    let hr = rng.random_range(cfg.border..=grid.height - cfg.border - HANDLE);
    let hc = rng.random_range(cfg.border..=grid.width - cfg.border - HANDLE);
    let mut heights = vec![TABLE_HEIGHT; cells];
    let mut truth = vec![0.0; cfg.orientations * cells];
    let q = cfg.handle_orientation();
    for r in hr..hr + HANDLE {
        for c in hc..hc + HANDLE {
            heights[r * grid.width + c] = HANDLE_HEIGHT;
            truth[q * cells + r * grid.width + c] = cfg.handle_p;
        }
    }
    Ok((heights, truth))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::rng::Stream;

    fn cfg(kind: EnvKind) -> EnvConfig {
        EnvConfig::new(kind, GridShape::new(32, 32), 8)
    }

    #[test]
    fn defaults() {
        let c = cfg(EnvKind::ShapeGrasp);
        assert_eq!((c.p_hi, c.p_lo, c.edge_band, c.n_objects, c.border), (0.9, 0.05, (1.0, 2.0), 1, 2));
        assert_eq!("drawer_toy".parse::<EnvKind>().unwrap(), EnvKind::DrawerToy);
        assert!("door".parse::<EnvKind>().is_err());
    }

    #[test]
    fn validation() {
        let base = cfg(EnvKind::ShapeGrasp);
        assert!(EnvConfig { p_lo: 0.9, ..base.clone() }.validate().is_err());
        assert!(EnvConfig { p_hi: 1.1, ..base.clone() }.validate().is_err());
        assert!(EnvConfig { grid: GridShape::new(7, 32), ..base.clone() }.validate().is_err());
        assert!(EnvConfig { p_lo: 0.0, p_hi: 1.0, ..base }.validate().is_ok());
    }

    #[test]
    fn same_seed_same_scene() {
        for kind in EnvKind::ALL {
            let a = reset(&cfg(kind), &mut Stream::seed_from_u64(5), 0).unwrap();
            let b = reset(&cfg(kind), &mut Stream::seed_from_u64(5), 0).unwrap();
            assert_eq!(a.scene(), b.scene());
            assert_eq!(a.ground_truth(), b.ground_truth());
        }
    }

    #[test]
    fn mask_excludes_two_pixel_border() {
        let s = reset(&cfg(EnvKind::ShapeGrasp), &mut Stream::seed_from_u64(1), 0).unwrap();
        let m = s.scene().mask();
        for r in 0..32 {
            for c in 0..32 {
                let inside = (2..30).contains(&r) && (2..30).contains(&c);
                assert_eq!(m.get(r, c), inside, "({r},{c})");
            }
        }
    }

    #[test]
    fn unplaceable_objects_error() {
        let c = EnvConfig { n_objects: 40, ..cfg(EnvKind::ShapeGrasp) };
        let err = reset(&c, &mut Stream::seed_from_u64(0), 0).unwrap_err();
        assert!(matches!(err, Error::Placement { attempts: 100, .. }));
    }

    #[test]
    fn distance_of_a_square() {
        let grid = GridShape::new(9, 9);
        let sil: Vec<bool> = (0..81).map(|i| (2..7).contains(&(i / 9)) && (2..7).contains(&(i % 9))).collect();
        let d = boundary_distance(&sil, grid);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[2 * 9 + 4], 1.0);
        assert_eq!(d[2 * 9 + 2], 1.0);
        assert_eq!(d[3 * 9 + 4], 2.0);
        assert_eq!(d[3 * 9 + 3], 2.0);
        assert_eq!(d[4 * 9 + 4], 3.0);
    }

    #[test]
    fn orientation_bins_wrap_modulo_pi() {
        assert_eq!(orientation_bin(0.0, 8), 0);
        assert_eq!(orientation_bin(PI, 8), 0);
        assert_eq!(orientation_bin(PI / 2.0, 8), 4);
        assert_eq!(orientation_bin(-PI / 2.0, 8), 4);
        assert_eq!(orientation_bin(PI / 8.0 + 0.01, 8), 1);
        assert_eq!(orientation_bin(PI - 0.01, 8), 0);
    }

    /// Independent re-derivation of one rectangle's ground truth.
    #[test]
    fn rectangle_edge_band_truth() {
        let c = EnvConfig { edge_band: (1.0, 2.0), ..cfg(EnvKind::ShapeGrasp) };
        let mut rng = Stream::seed_from_u64(0);
        let s = loop {
            let s = reset(&c, &mut rng, 0).unwrap();
            let n = s.scene().heights().iter().filter(|&&h| h == 1.0).count();
            // a full rectangle fills its bounding box
            let rows: Vec<usize> = (0..32).filter(|&r| (0..32).any(|c| s.scene().height(r, c) == 1.0)).collect();
            let cols: Vec<usize> = (0..32).filter(|&cc| (0..32).any(|r| s.scene().height(r, cc) == 1.0)).collect();
            if rows.len() * cols.len() == n && rows.len() >= 6 && cols.len() >= 6 {
                break s;
            }
        };
        let gt = s.ground_truth();
        let sc = s.scene();
        let on: Vec<(usize, usize)> =
            (0..32).flat_map(|r| (0..32).map(move |c| (r, c))).filter(|&(r, c)| sc.height(r, c) == 1.0).collect();
        let (top, left) = on[0];
        let (bottom, right) = *on.last().unwrap();
        // middle of the top edge: normal points down the rows, bin Q/2
        let mid = (left + right) / 2;
        assert_eq!(gt.get(ActionSpec::new(4, top, mid)), 0.9);
        assert_eq!(gt.get(ActionSpec::new(0, top, mid)), 0.05);
        assert_eq!(gt.get(ActionSpec::new(4, top + 1, mid)), 0.9);
        // middle of the left edge: normal along the columns, bin 0
        let midr = (top + bottom) / 2;
        assert_eq!(gt.get(ActionSpec::new(0, midr, left)), 0.9);
        assert_eq!(gt.get(ActionSpec::new(4, midr, left)), 0.05);
        // one cell off the object
        assert_eq!(gt.get(ActionSpec::new(0, midr, left - 1)), 0.0);
        // deep interior cells are never in the band
        if right - left >= 6 && bottom - top >= 6 {
            for o in 0..8 {
                assert_eq!(gt.get(ActionSpec::new(o, top + 3, left + 3)), 0.05);
            }
        }
    }

    #[test]
    fn drawer_handle_support() {
        let c = cfg(EnvKind::DrawerToy);
        for seed in 0..20 {
            let s = reset(&c, &mut Stream::seed_from_u64(seed), 0).unwrap();
            let vals = s.ground_truth().values();
            let support: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.0).collect();
            assert_eq!(support.len(), 4);
            for &i in &support {
                assert_eq!(vals[i], 0.95);
                assert_eq!(i / 1024, 4);
                assert_eq!(s.scene().heights()[i % 1024], 1.0);
            }
            assert_eq!(s.scene().heights().iter().filter(|&&h| h == 1.0).count(), 4);
            assert_eq!(s.scene().heights().iter().filter(|&&h| h == TABLE_HEIGHT).count(), 1020);
        }
    }

    #[test]
    fn drawer_handle_success_rate() {
        let c = cfg(EnvKind::DrawerToy);
        let mut rng = Stream::seed_from_u64(3);
        let s = reset(&c, &mut rng, 0).unwrap();
        let i = s.ground_truth().values().iter().position(|&v| v > 0.0).unwrap() % 1024;
        let a = ActionSpec::new(4, i / 32, i % 32);
        let wins = (0..10_000).filter(|_| s.step(a, &mut rng).unwrap().is_success()).count();
        let rate = wins as f64 / 10_000.0;
        assert!((rate - 0.95).abs() <= 0.01, "{rate}");
    }

    #[test]
    fn certain_outcomes() {
        let mut c = cfg(EnvKind::DrawerToy);
        c.handle_p = 1.0;
        let mut rng = Stream::seed_from_u64(8);
        let s = reset(&c, &mut rng, 0).unwrap();
        let i = s.ground_truth().values().iter().position(|&v| v > 0.0).unwrap() % 1024;
        for _ in 0..100 {
            assert!(s.step(ActionSpec::new(4, i / 32, i % 32), &mut rng).unwrap().is_success());
            assert!(!s.step(ActionSpec::new(3, i / 32, i % 32), &mut rng).unwrap().is_success());
            assert!(!s.step(ActionSpec::new(4, 2, 2), &mut rng).unwrap().is_success() || i == 2 * 32 + 2);
        }
    }

    #[test]
    fn step_rejects_invalid_action() {
        let s = reset(&cfg(EnvKind::DrawerToy), &mut Stream::seed_from_u64(0), 0).unwrap();
        let mut rng = Stream::seed_from_u64(0);
        assert!(s.step(ActionSpec::new(0, 0, 0), &mut rng).is_err());
        assert!(s.step(ActionSpec::new(8, 5, 5), &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn ground_truth_invariants(seed in any::<u64>(), kind in 0usize..2, n in 1usize..3, q in 1usize..9) {
            let mut c = EnvConfig::new(EnvKind::ALL[kind], GridShape::new(32, 32), q);
            c.n_objects = n;
            let s = match reset(&c, &mut Stream::seed_from_u64(seed), 7) {
                Ok(s) => s,
                Err(Error::Placement { .. }) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            prop_assert_eq!(s.scene().id(), 7);
            prop_assert!(s.scene().mask().count_valid() > 0);
            let cells = 1024;
            for (i, &v) in s.ground_truth().values().iter().enumerate() {
                let cell = i % cells;
                let (r, col) = (cell / 32, cell % 32);
                prop_assert!((0.0..=1.0).contains(&v));
                if !s.scene().mask().get(r, col) {
                    prop_assert_eq!(v, 0.0);
                }
                // off-object cells (table height) never succeed
                if s.scene().heights()[cell] == TABLE_HEIGHT {
                    prop_assert_eq!(v, 0.0);
                }
                if c.kind == EnvKind::ShapeGrasp && s.scene().heights()[cell] == 1.0 {
                    prop_assert!(v == c.p_hi || v == c.p_lo);
                }
            }
        }

        #[test]
        fn step_is_stationary(seed in any::<u64>()) {
            let mut rng = Stream::seed_from_u64(seed);
            let s = reset(&cfg(EnvKind::ShapeGrasp), &mut rng, 0).unwrap();
            let before = s.ground_truth().clone();
            for _ in 0..20 {
                s.step(ActionSpec::new(rng.random_range(0..8), rng.random_range(2..30), rng.random_range(2..30)), &mut rng).unwrap();
            }
            prop_assert_eq!(&before, s.ground_truth());
        }
    }
}
