//! Uniform grids and the node-sampled fields that live on them.
//!
//! A grid is a box `[origin, origin + (shape-1)*h]^dim` sampled at
//! `shape[a]` nodes per axis with one spacing `h` shared by all axes.
//! Values are stored flat in row-major order: axis 0 varies slowest, the
//! last axis fastest, and for vector fields the component index is fastest
//! of all. All reductions over a grid walk that flat order, which pins the
//! floating-point result bit for bit.

use crate::error::{Error, Result};

/// Highest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Index arithmetic uses fixed-size arrays; axes beyond `dim` stay at the
/// neutral values (shape 1, coordinate 0).
pub type Idx = [usize; MAX_DIM];

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    shape: Idx,
    origin: [f64; MAX_DIM],
    spacing: f64,
}

impl Grid {
    /// A uniform grid. Every shape entry must be at least 4 so that the
    /// one-sided boundary stencils have room.
    pub fn new(shape: &[usize], origin: &[f64], spacing: f64) -> Result<Grid> {
        let dim = shape.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        if origin.len() != dim {
            return Err(Error::BadMultiIndex { expected: dim, got: origin.len() });
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::BadSpacing(spacing));
        }
        let mut s = [1usize; MAX_DIM];
        let mut o = [0f64; MAX_DIM];
        for a in 0..dim {
            if shape[a] < 4 {
                return Err(Error::ShapeTooSmall { axis: a, got: shape[a] });
            }
            s[a] = shape[a];
            o[a] = origin[a];
        }
        Ok(Grid { dim, shape: s, origin: o, spacing })
    }

    /// Grid over `[lo, hi]^dim` with `nodes` nodes per axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, nodes: usize) -> Result<Grid> {
        if !(hi > lo) {
            return Err(Error::InvalidParameter(format!("empty extent [{lo}, {hi}]")));
        }
        if nodes < 4 {
            return Err(Error::ShapeTooSmall { axis: 0, got: nodes });
        }
        let shape = vec![nodes; dim];
        let origin = vec![lo; dim];
        let spacing = (hi - lo) / (nodes - 1) as f64;
        Grid::new(&shape, &origin, spacing)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.dim]
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Raw shape padded with trailing ones; handy for fixed-arity loops.
    pub fn shape_padded(&self) -> Idx {
        self.shape
    }

    pub fn flat(&self, idx: Idx) -> usize {
        debug_assert!((0..self.dim).all(|a| idx[a] < self.shape[a]));
        (idx[0] * self.shape[1] + idx[1]) * self.shape[2] + idx[2]
    }

    pub fn multi(&self, flat: usize) -> Idx {
        debug_assert!(flat < self.len());
        let i2 = flat % self.shape[2];
        let rest = flat / self.shape[2];
        let i1 = rest % self.shape[1];
        let i0 = rest / self.shape[1];
        [i0, i1, i2]
    }

    /// Physical coordinate of a node, trailing axes fixed at 0.
    pub fn coord(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.multi(flat);
        let mut x = [0f64; MAX_DIM];
        for a in 0..self.dim {
            x[a] = self.origin[a] + idx[a] as f64 * self.spacing;
        }
        x
    }

    /// Euclidean diameter of the node box.
    pub fn diameter(&self) -> f64 {
        let mut d2 = 0.0;
        for a in 0..self.dim {
            let side = (self.shape[a] - 1) as f64 * self.spacing;
            d2 += side * side;
        }
        d2.sqrt()
    }

    /// Flat index of the node nearest to a physical point (clamped to the box).
    pub fn nearest_node(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.dim {
            return Err(Error::BadMultiIndex { expected: self.dim, got: point.len() });
        }
        let mut idx = [0usize; MAX_DIM];
        for a in 0..self.dim {
            let t = ((point[a] - self.origin[a]) / self.spacing).round();
            let t = t.clamp(0.0, (self.shape[a] - 1) as f64);
            idx[a] = t as usize;
        }
        Ok(self.flat(idx))
    }

    /// Squared Euclidean distance between two nodes.
    pub fn node_distance(&self, a: usize, b: usize) -> f64 {
        let ia = self.multi(a);
        let ib = self.multi(b);
        let mut d2 = 0.0;
        for ax in 0..self.dim {
            let d = ia[ax] as f64 - ib[ax] as f64;
            d2 += d * d;
        }
        d2.sqrt() * self.spacing
    }

    /// Cell volume `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> ScalarField {
        let n = grid.len();
        ScalarField { grid, values: vec![c; n] }
    }

    /// Sample a function of the physical coordinate at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let x = grid.coord(i);
            values.push(f(&x[..grid.dim()]));
        }
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Nodewise absolute value.
    pub fn abs(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.abs()).collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// max - min over all nodes.
    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }
}

/// Vector-valued field; component index varies fastest in storage.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: usize,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, components: usize, values: Vec<f64>) -> Result<VectorField> {
        if components == 0 {
            return Err(Error::InvalidParameter("vector field needs >= 1 component".into()));
        }
        if values.len() != grid.len() * components {
            return Err(Error::LengthMismatch {
                expected: grid.len() * components,
                got: values.len(),
            });
        }
        Ok(VectorField { grid, components, values })
    }

    pub fn from_fn(
        grid: Grid,
        components: usize,
        f: impl Fn(&[f64], usize) -> f64,
    ) -> VectorField {
        let mut values = Vec::with_capacity(grid.len() * components);
        for i in 0..grid.len() {
            let x = grid.coord(i);
            for c in 0..components {
                values.push(f(&x[..grid.dim()], c));
            }
        }
        VectorField { grid, components, values }
    }

    /// Stack scalar fields (all on one grid) into a vector field.
    pub fn from_components(fields: &[ScalarField]) -> Result<VectorField> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidParameter("no components given".into()))?;
        let grid = first.grid().clone();
        for f in fields {
            if f.grid() != &grid {
                return Err(Error::GridMismatch);
            }
        }
        let m = fields.len();
        let mut values = Vec::with_capacity(grid.len() * m);
        for i in 0..grid.len() {
            for f in fields {
                values.push(f.values()[i]);
            }
        }
        Ok(VectorField { grid, components: m, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn value(&self, node: usize, component: usize) -> f64 {
        self.values[node * self.components + component]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy one component out as a scalar field.
    pub fn component(&self, c: usize) -> ScalarField {
        let values = (0..self.grid.len()).map(|i| self.value(i, c)).collect();
        ScalarField { grid: self.grid.clone(), values }
    }
}

/// Node subset of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    grid: Grid,
    flags: Vec<bool>,
}

impl RegionMask {
    pub fn new(grid: Grid, flags: Vec<bool>) -> Result<RegionMask> {
        if flags.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: flags.len() });
        }
        Ok(RegionMask { grid, flags })
    }

    pub fn full(grid: Grid) -> RegionMask {
        let n = grid.len();
        RegionMask { grid, flags: vec![true; n] }
    }

    pub fn empty(grid: Grid) -> RegionMask {
        let n = grid.len();
        RegionMask { grid, flags: vec![false; n] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> bool) -> RegionMask {
        let mut flags = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let x = grid.coord(i);
            flags.push(f(&x[..grid.dim()]));
        }
        RegionMask { grid, flags }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn contains(&self, node: usize) -> bool {
        self.flags[node]
    }

    pub fn set(&mut self, node: usize, value: bool) {
        self.flags[node] = value;
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    /// Lebesgue stand-in: node count times cell volume.
    pub fn measure(&self) -> f64 {
        self.count() as f64 * self.grid.cell_volume()
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> Result<bool> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self.flags.iter().zip(&other.flags).all(|(a, b)| !*a || *b))
    }

    pub fn intersect(&self, other: &RegionMask) -> Result<RegionMask> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let flags = self.flags.iter().zip(&other.flags).map(|(a, b)| *a && *b).collect();
        Ok(RegionMask { grid: self.grid.clone(), flags })
    }

    pub fn union(&self, other: &RegionMask) -> Result<RegionMask> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let flags = self.flags.iter().zip(&other.flags).map(|(a, b)| *a || *b).collect();
        Ok(RegionMask { grid: self.grid.clone(), flags })
    }

    pub fn complement(&self) -> RegionMask {
        RegionMask {
            grid: self.grid.clone(),
            flags: self.flags.iter().map(|f| !*f).collect(),
        }
    }

    pub fn minus(&self, other: &RegionMask) -> Result<RegionMask> {
        self.intersect(&other.complement())
    }

    /// Flat indices of member nodes, ascending.
    pub fn nodes(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, f)| if *f { Some(i) } else { None })
            .collect()
    }
}

/// Closed axis-aligned box in physical coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxRegion {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BoxRegion {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<BoxRegion> {
        if min.len() != max.len() || min.is_empty() || min.len() > MAX_DIM {
            return Err(Error::UnsupportedDimension(min.len()));
        }
        for a in 0..min.len() {
            if !(min[a] < max[a]) {
                return Err(Error::InvalidParameter(format!(
                    "box is empty along axis {a}: [{}, {}]",
                    min[a], max[a]
                )));
            }
        }
        Ok(BoxRegion { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|a| self.min[a] <= x[a] && x[a] <= self.max[a])
    }

    /// Strict containment of `inner` in `self` on every side.
    pub fn strictly_contains(&self, inner: &BoxRegion) -> bool {
        self.dim() == inner.dim()
            && (0..self.dim()).all(|a| self.min[a] < inner.min[a] && inner.max[a] < self.max[a])
    }

    /// Mask of grid nodes lying in the closed box.
    pub fn mask(&self, grid: &Grid) -> Result<RegionMask> {
        if self.dim() != grid.dim() {
            return Err(Error::UnsupportedDimension(self.dim()));
        }
        Ok(RegionMask::from_fn(grid.clone(), |x| self.contains_point(x)))
    }
}
