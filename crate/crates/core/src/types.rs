//! Domain types shared by every module: scenes (the bandit context),
//! actions, outcomes, transitions and the per-orientation probability maps.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial size of a scene grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub const fn cells(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Shape of an orientation-major `Q x H x W` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MapShape {
    pub orientations: usize,
    pub grid: GridShape,
}

impl MapShape {
    pub const fn new(orientations: usize, grid: GridShape) -> Self {
        Self { orientations, grid }
    }

    pub const fn len(&self) -> usize {
        self.orientations * self.grid.cells()
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index in `(orient, row, col)` order.
    #[inline]
    pub const fn index(&self, orient: usize, row: usize, col: usize) -> usize {
        (orient * self.grid.height + row) * self.grid.width + col
    }

    #[inline]
    pub const fn action_at(&self, flat: usize) -> ActionSpec {
        let cells = self.grid.cells();
        let orient = flat / cells;
        let rem = flat % cells;
        ActionSpec {
            orient,
            row: rem / self.grid.width,
            col: rem % self.grid.width,
        }
    }
}

impl fmt::Display for MapShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.orientations, self.grid)
    }
}

/// Which pixels of a scene may be acted upon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    grid: GridShape,
    cells: Vec<bool>,
}

impl Mask {
    pub fn new(grid: GridShape, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != grid.cells() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} mask cells", grid.cells()),
                actual: cells.len().to_string(),
            });
        }
        Ok(Self { grid, cells })
    }

    pub fn full(grid: GridShape) -> Self {
        Self {
            grid,
            cells: vec![true; grid.cells()],
        }
    }

    /// Mask with a `border`-pixel frame excluded.
    pub fn with_border(grid: GridShape, border: usize) -> Self {
        let mut cells = vec![false; grid.cells()];
        for r in border..grid.height.saturating_sub(border) {
            for c in border..grid.width.saturating_sub(border) {
                cells[r * grid.width + c] = true;
            }
        }
        Self { grid, cells }
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.grid.width + col]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count_valid(&self) -> usize {
        self.cells.iter().filter(|&&v| v).count()
    }

    pub fn valid_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.grid.width;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i / w, i % w))
    }
}

/// The bandit context: normalized heights plus the actionable-pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    id: u64,
    heights: Vec<f64>,
    valid: Mask,
}

impl Scene {
    pub fn new(id: u64, heights: Vec<f64>, valid: Mask) -> Result<Self> {
        let grid = valid.grid();
        if heights.len() != grid.cells() {
            return Err(Error::InvalidScene(format!(
                "{} heights for a {grid} grid",
                heights.len()
            )));
        }
        if let Some(bad) = heights.iter().find(|h| !(0.0..=1.0).contains(*h)) {
            return Err(Error::InvalidScene(format!(
                "height {bad} outside [0, 1]"
            )));
        }
        Ok(Self { id, heights, valid })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn grid(&self) -> GridShape {
        self.valid.grid()
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    #[inline]
    pub fn height(&self, row: usize, col: usize) -> f64 {
        self.heights[row * self.grid().width + col]
    }

    pub fn mask(&self) -> &Mask {
        &self.valid
    }
}

/// `a = [p, q]`: a pixel position and a discrete orientation index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSpec {
    pub orient: usize,
    pub row: usize,
    pub col: usize,
}

impl ActionSpec {
    pub const fn new(orient: usize, row: usize, col: usize) -> Self {
        Self { orient, row, col }
    }

    /// Checks bounds against `orientations` and the scene grid, and that the
    /// pixel is actionable.
    pub fn check(&self, mask: &Mask, orientations: usize) -> Result<()> {
        let grid = mask.grid();
        let reason = if self.orient >= orientations {
            "orientation out of range"
        } else if self.row >= grid.height || self.col >= grid.width {
            "pixel out of bounds"
        } else if !mask.get(self.row, self.col) {
            "pixel is not actionable"
        } else {
            return Ok(());
        };
        Err(Error::InvalidAction {
            action: self.to_string(),
            reason,
        })
    }
}

impl fmt::Display for ActionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(q={}, r={}, c={})", self.orient, self.row, self.col)
    }
}

/// Binary affordance outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Fail,
    Success,
}

impl Outcome {
    pub fn from_bit(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Self::Fail),
            1 => Ok(Self::Success),
            other => Err(Error::InvalidMap(format!("outcome {other} is not 0 or 1"))),
        }
    }

    pub const fn bit(self) -> u8 {
        match self {
            Self::Fail => 0,
            Self::Success => 1,
        }
    }

    pub const fn target(self) -> f64 {
        self.bit() as f64
    }

    pub const fn is_success(self) -> bool {
        matches!(self, Self::Success)
    }
}

impl From<bool> for Outcome {
    fn from(success: bool) -> Self {
        if success {
            Self::Success
        } else {
            Self::Fail
        }
    }
}

/// One interaction record `(x, a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub scene: Arc<Scene>,
    pub action: ActionSpec,
    pub outcome: Outcome,
    pub step_index: u64,
}

impl Transition {
    pub fn new(scene: Arc<Scene>, action: ActionSpec, outcome: Outcome, step_index: u64) -> Self {
        Self {
            scene,
            action,
            outcome,
            step_index,
        }
    }
}

fn check_len(shape: MapShape, values: &[f64]) -> Result<()> {
    if values.len() != shape.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values for {shape}", shape.len()),
            actual: values.len().to_string(),
        });
    }
    Ok(())
}

/// Per-pixel, per-orientation Bernoulli success parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    shape: MapShape,
    values: Vec<f64>,
}

impl ProbMap {
    pub fn new(shape: MapShape, values: Vec<f64>) -> Result<Self> {
        check_len(shape, &values)?;
        if let Some(bad) = values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidMap(format!("probability {bad} outside [0, 1]")));
        }
        Ok(Self { shape, values })
    }

    pub fn constant(shape: MapShape, p: f64) -> Result<Self> {
        Self::new(shape, vec![p; shape.len()])
    }

    pub fn shape(&self) -> MapShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, a: ActionSpec) -> f64 {
        self.values[self.shape.index(a.orient, a.row, a.col)]
    }

    /// Per-pixel maximum over orientations, row-major `H x W`.
    pub fn max_over_orientations(&self) -> Vec<f64> {
        max_over_orientations(self.shape, &self.values)
    }
}

/// Information-radius values in nats, optionally min-max normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMap {
    shape: MapShape,
    values: Vec<f64>,
    normalized: bool,
}

impl InfoMap {
    pub fn new(shape: MapShape, values: Vec<f64>, normalized: bool) -> Result<Self> {
        check_len(shape, &values)?;
        let upper = if normalized { 1.0 } else { std::f64::consts::LN_2 };
        // allow rounding slack on the ln 2 ceiling
        if let Some(bad) = values
            .iter()
            .find(|v| !(**v >= 0.0 && **v <= upper + 1e-12))
        {
            return Err(Error::InvalidMap(format!(
                "information value {bad} outside [0, {upper}]"
            )));
        }
        Ok(Self {
            shape,
            values,
            normalized,
        })
    }

    pub fn zeros(shape: MapShape, normalized: bool) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
            normalized,
        }
    }

    pub fn shape(&self) -> MapShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn get(&self, a: ActionSpec) -> f64 {
        self.values[self.shape.index(a.orient, a.row, a.col)]
    }

    pub fn max_over_orientations(&self) -> Vec<f64> {
        max_over_orientations(self.shape, &self.values)
    }
}

/// Action scores used by the argmax selectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    shape: MapShape,
    values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(shape: MapShape, values: Vec<f64>) -> Result<Self> {
        check_len(shape, &values)?;
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> MapShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, a: ActionSpec) -> f64 {
        self.values[self.shape.index(a.orient, a.row, a.col)]
    }
}

fn max_over_orientations(shape: MapShape, values: &[f64]) -> Vec<f64> {
    let cells = shape.grid.cells();
    let mut out = vec![f64::NEG_INFINITY; cells];
    for slice in values.chunks_exact(cells) {
        for (o, &v) in out.iter_mut().zip(slice) {
            *o = o.max(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> GridShape {
        GridShape::new(4, 5)
    }

    #[test]
    fn flat_index_roundtrip() {
        let shape = MapShape::new(3, grid());
        for flat in 0..shape.len() {
            let a = shape.action_at(flat);
            assert_eq!(shape.index(a.orient, a.row, a.col), flat);
        }
    }

    #[test]
    fn border_mask_excludes_frame() {
        let m = Mask::with_border(GridShape::new(8, 8), 2);
        assert_eq!(m.count_valid(), 16);
        assert!(!m.get(1, 4));
        assert!(m.get(2, 2));
        assert!(!m.get(6, 5));
    }

    #[test]
    fn action_check_reports_reason() {
        let m = Mask::with_border(GridShape::new(8, 8), 2);
        assert!(ActionSpec::new(0, 3, 3).check(&m, 2).is_ok());
        assert!(ActionSpec::new(2, 3, 3).check(&m, 2).is_err());
        assert!(ActionSpec::new(0, 8, 3).check(&m, 2).is_err());
        assert!(ActionSpec::new(0, 0, 3).check(&m, 2).is_err());
    }

    #[test]
    fn max_over_orientations_takes_pixelwise_max() {
        let shape = MapShape::new(2, GridShape::new(1, 2));
        let m = ProbMap::new(shape, vec![0.1, 0.9, 0.5, 0.2]).unwrap();
        assert_eq!(m.max_over_orientations(), vec![0.5, 0.9]);
    }

    proptest! {
        #[test]
        fn scene_accepts_unit_interval_only(h in -1.0f64..2.0, r in 0usize..4, c in 0usize..5) {
            let mut heights = vec![0.5; grid().cells()];
            heights[r * 5 + c] = h;
            let res = Scene::new(0, heights, Mask::full(grid()));
            prop_assert_eq!(res.is_ok(), (0.0..=1.0).contains(&h));
        }

        #[test]
        fn probmap_accepts_unit_interval_only(p in -0.5f64..1.5) {
            let shape = MapShape::new(2, grid());
            let mut v = vec![0.3; shape.len()];
            v[7] = p;
            prop_assert_eq!(ProbMap::new(shape, v).is_ok(), (0.0..=1.0).contains(&p));
        }

        #[test]
        fn infomap_bounds_depend_on_normalization(v in 0.0f64..1.2) {
            let shape = MapShape::new(1, grid());
            let mut vals = vec![0.0; shape.len()];
            vals[3] = v;
            prop_assert_eq!(InfoMap::new(shape, vals.clone(), true).is_ok(), v <= 1.0);
            prop_assert_eq!(
                InfoMap::new(shape, vals, false).is_ok(),
                v <= std::f64::consts::LN_2 + 1e-12
            );
        }
    }

    #[test]
    fn nan_rejected_everywhere() {
        let shape = MapShape::new(1, grid());
        let mut v = vec![0.0; shape.len()];
        v[0] = f64::NAN;
        assert!(ProbMap::new(shape, v.clone()).is_err());
        assert!(InfoMap::new(shape, v.clone(), true).is_err());
        assert!(Scene::new(0, v, Mask::full(grid())).is_err());
    }
}
