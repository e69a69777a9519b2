//! Both sides of the weighted area identity for grid mappings: the domain
//! integral of weight times the Jacobian determinant, and the image
//! integral of the weighted fiber count. Fibers are located in the
//! piecewise multilinear interpolant of the sampled map, so both sides
//! refer to the same discrete object and converge together.

use serde::Serialize;

use crate::calculus::gradient;
use crate::error::{Error, Result};
use crate::field::{Grid, RegionMask, ScalarField, VectorField};

/// A mapping between equal-dimensional spaces, a nonnegative weight on the
/// domain grid, and the node set the identity is restricted to.
#[derive(Clone, Debug)]
pub struct MappingProblem {
    map: VectorField,
    weight: ScalarField,
    domain: RegionMask,
}

impl MappingProblem {
    pub fn new(map: VectorField, weight: ScalarField, domain: RegionMask) -> Result<Self> {
        let grid = map.grid();
        if map.components() != grid.dim() {
            return Err(Error::InvalidParameter(format!(
                "map must have one component per axis, got {} on a {}-d grid",
                map.components(),
                grid.dim()
            )));
        }
        if weight.grid() != grid || domain.grid() != grid {
            return Err(Error::GridMismatch);
        }
        if weight.values().iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "weight must be nonnegative and finite".into(),
            ));
        }
        Ok(Self { map, weight, domain })
    }

    /// Unit weight over the full grid.
    pub fn with_unit_weight(map: VectorField) -> Result<Self> {
        let grid = map.grid().clone();
        let weight = ScalarField::constant(grid.clone(), 1.0);
        let domain = RegionMask::full(grid);
        Self::new(map, weight, domain)
    }

    pub fn map(&self) -> &VectorField {
        &self.map
    }

    pub fn weight(&self) -> &ScalarField {
        &self.weight
    }

    pub fn domain(&self) -> &RegionMask {
        &self.domain
    }

    pub fn grid(&self) -> &Grid {
        self.map.grid()
    }
}

/// Nested certified pieces and the leftover region excluded from both
/// sides, as produced by the truncation exhaustion.
#[derive(Clone, Debug)]
pub struct ExhaustionMasks {
    /// Nondecreasing chain of node sets; the identity is accumulated piece
    /// by piece.
    pub pieces: Vec<RegionMask>,
    /// Nodes excluded from the identity entirely.
    pub residual: RegionMask,
}

/// Knobs for the image-side sampling.
#[derive(Clone, Debug)]
pub struct AreaOptions {
    /// Target spacing of the image sample lattice; the map grid spacing
    /// when unset.
    pub y_spacing: Option<f64>,
    /// Fraction of each image-axis span added on both sides of the
    /// sampling box. Fibers cannot leave the interpolant's range, so 0 is
    /// exact; a margin only adds empty samples.
    pub y_margin: f64,
    /// Fiber points closer than this merge into one; `None` means a
    /// quarter of the grid spacing, 0 disables merging.
    pub merge_radius: Option<f64>,
    /// Smallest physical box size the fiber search subdivides to; `None`
    /// means a thousandth of the grid spacing.
    pub subdivision_floor: Option<f64>,
    /// Fiber points per sample beyond which the fiber is treated as
    /// degenerate (a continuum, not isolated points) and the sample is
    /// excluded.
    pub multiplicity_cap: usize,
    /// Restrict both sides to the exhaustion pieces and record partial
    /// sums along the chain.
    pub exhaustion: Option<ExhaustionMasks>,
    /// Worker threads for the two-dimensional image sampling. Sample rows
    /// are split into one contiguous band per worker and reduced in band
    /// order, so the value depends on the band count alone, never on
    /// scheduling.
    pub threads: usize,
}

impl Default for AreaOptions {
    fn default() -> Self {
        Self {
            y_spacing: None,
            y_margin: 0.0,
            merge_radius: None,
            subdivision_floor: None,
            multiplicity_cap: 64,
            exhaustion: None,
            threads: 1,
        }
    }
}

/// Weighted fiber data of one image point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Multiplicity {
    /// Sum of interpolated weights over the fiber points kept.
    pub value: f64,
    /// Number of distinct fiber points kept.
    pub count: usize,
    /// Set when the fiber is not a finite point set at the working
    /// resolution; `value` and `count` are then unreliable.
    pub degenerate: bool,
}

/// Image-side integral together with its sampling diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct RhsIntegral {
    pub value: f64,
    /// `histogram[m]` counts samples with fiber size `m`; the last bin
    /// collects everything at or beyond it.
    pub histogram: Vec<usize>,
    pub degenerate_samples: usize,
    pub total_samples: usize,
}

/// Both sides of the identity and the gap between them.
#[derive(Clone, Debug, Serialize)]
pub struct AreaFormulaReport {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    /// Running domain-side sums over the exhaustion pieces; empty without
    /// an exhaustion. Nondecreasing by construction.
    pub lhs_partials: Vec<f64>,
    /// Running image-side sums gated by the cumulative exhaustion pieces,
    /// from the same sampling pass as `rhs`. Nondecreasing by
    /// construction; the last entry matches `rhs` when the pieces exhaust
    /// the effective domain.
    pub rhs_partials: Vec<f64>,
    pub histogram: Vec<usize>,
    pub degenerate_samples: usize,
    pub total_samples: usize,
    /// Set when more than 1% of the image samples had degenerate fibers;
    /// the right side is then not trustworthy.
    pub invalid: bool,
}

const HISTOGRAM_BINS: usize = 10;

/// Jacobian determinant of the map from the same difference stencils the
/// rest of the crate uses. Supports dimensions 1 through 3.
pub fn jacobian(map: &VectorField) -> Result<ScalarField> {
    let grid = map.grid();
    let n = grid.dim();
    if map.components() != n {
        return Err(Error::InvalidParameter(format!(
            "map must have one component per axis, got {} on a {}-d grid",
            map.components(),
            n
        )));
    }
    let grads: Vec<VectorField> = (0..n).map(|c| gradient(&map.component(c))).collect();
    let j = |node: usize, c: usize, a: usize| grads[c].value(node, a);
    let mut det = vec![0.0; grid.len()];
    for (node, out) in det.iter_mut().enumerate() {
        *out = match n {
            1 => j(node, 0, 0),
            2 => j(node, 0, 0) * j(node, 1, 1) - j(node, 0, 1) * j(node, 1, 0),
            3 => {
                let m = |c: usize, a: usize| j(node, c, a);
                m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                    - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                    + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
            }
            d => return Err(Error::UnsupportedDimension(d)),
        };
    }
    ScalarField::new(grid.clone(), det)
}

/// Per-node quadrature terms weight * |det| * cell volume, with half
/// weight for each grid-boundary axis so the full-box sum is the
/// trapezoid rule.
fn node_terms(problem: &MappingProblem) -> Result<Vec<f64>> {
    let grid = problem.grid();
    let jac = jacobian(problem.map())?;
    let vol = grid.cell_volume();
    let mut terms = Vec::with_capacity(grid.len());
    for node in 0..grid.len() {
        let idx = grid.multi(node);
        let mut t = problem.weight.values()[node] * jac.values()[node].abs() * vol;
        for (a, s) in grid.shape().iter().enumerate() {
            if idx[a] == 0 || idx[a] == s - 1 {
                t *= 0.5;
            }
        }
        terms.push(t);
    }
    Ok(terms)
}

/// Domain-side integral over the problem domain, optionally intersected
/// with one more mask.
pub fn lhs_integral(problem: &MappingProblem, extra: Option<&RegionMask>) -> Result<f64> {
    if let Some(mask) = extra {
        if mask.grid() != problem.grid() {
            return Err(Error::GridMismatch);
        }
    }
    let terms = node_terms(problem)?;
    let mut sum = 0.0;
    for (node, t) in terms.iter().enumerate() {
        let keep = problem.domain.contains(node)
            && extra.map_or(true, |mask| mask.contains(node));
        if keep {
            sum += t;
        }
    }
    Ok(sum)
}

fn effective_mask(problem: &MappingProblem, opts: &AreaOptions) -> Result<RegionMask> {
    match &opts.exhaustion {
        None => Ok(problem.domain.clone()),
        Some(ex) => {
            if ex.residual.grid() != problem.grid() {
                return Err(Error::GridMismatch);
            }
            if ex.pieces.is_empty() {
                return Err(Error::InvalidParameter(
                    "exhaustion must provide at least one piece".into(),
                ));
            }
            for piece in &ex.pieces {
                if piece.grid() != problem.grid() {
                    return Err(Error::GridMismatch);
                }
            }
            problem.domain.minus(&ex.residual)
        }
    }
}

/// Shared state of the fiber search: the interpolated map, the weight to
/// integrate, and the search knobs resolved to absolute lengths.
struct FiberScan<'a> {
    map: &'a VectorField,
    weight: &'a ScalarField,
    merge_radius: f64,
    floor: f64,
    cap: usize,
}

/// Fiber points of one image sample after merging: each survivor resolved
/// to its nearest node and interpolated weight.
struct FiberTally {
    kept: Vec<(usize, f64)>,
    raw_count: usize,
    over_cap: bool,
}

impl FiberTally {
    /// Weighted count over the fiber points whose nearest node lies in the
    /// given node set.
    fn restricted(&self, mask: &RegionMask) -> Multiplicity {
        if self.over_cap {
            return Multiplicity { value: 0.0, count: self.raw_count, degenerate: true };
        }
        let mut value = 0.0;
        let mut count = 0usize;
        for &(node, w) in &self.kept {
            if mask.contains(node) {
                value += w;
                count += 1;
            }
        }
        Multiplicity { value, count, degenerate: false }
    }
}

impl FiberScan<'_> {
    fn grid(&self) -> &Grid {
        self.map.grid()
    }

    /// Fiber of one image point in 1 dimension: exact node hits counted
    /// once, plus one linearly interpolated root per strict sign change.
    /// Returns positions, or None when a whole cell sits on the level.
    fn roots_1d(&self, y: f64, out: &mut Vec<f64>) -> bool {
        let grid = self.grid();
        let v = self.map.values();
        let h = grid.spacing();
        let x0 = grid.origin()[0];
        let n = grid.len();
        for i in 0..n {
            if v[i] == y {
                if i + 1 < n && v[i + 1] == y {
                    return false;
                }
                out.push(x0 + i as f64 * h);
            }
        }
        for i in 0..n - 1 {
            let a = v[i] - y;
            let b = v[i + 1] - y;
            if a * b < 0.0 {
                let t = a / (a - b);
                out.push(x0 + (i as f64 + t) * h);
            }
        }
        true
    }

    /// Fiber points of one image point inside one grid cell in 2
    /// dimensions, by quadrisection of the bilinear interpolant. Interval
    /// bounds come from the corner values, exact for bilinear maps.
    /// Returns false when the leaf count blows past the cap.
    fn cell_roots_2d(&self, i0: usize, i1: usize, y: &[f64], out: &mut Vec<[f64; 2]>) -> bool {
        let grid = self.grid();
        let h = grid.spacing();
        let s1 = grid.shape()[1];
        let base = i0 * s1 + i1;
        let corner = |di0: usize, di1: usize, c: usize| {
            self.map.value(base + di0 * s1 + di1, c)
        };
        let bilin = |s: f64, t: f64, c: usize| {
            (1.0 - s) * (1.0 - t) * corner(0, 0, c)
                + s * (1.0 - t) * corner(1, 0, c)
                + (1.0 - s) * t * corner(0, 1, c)
                + s * t * corner(1, 1, c)
        };
        let mut found = 0usize;
        let mut stack = vec![(0.0f64, 0.0f64, 1.0f64)];
        while let Some((s0, t0, size)) = stack.pop() {
            let mut hit = true;
            for c in 0..2 {
                let vals = [
                    bilin(s0, t0, c),
                    bilin(s0 + size, t0, c),
                    bilin(s0, t0 + size, c),
                    bilin(s0 + size, t0 + size, c),
                ];
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if y[c] < lo || y[c] > hi {
                    hit = false;
                    break;
                }
            }
            if !hit {
                continue;
            }
            if size * h <= self.floor {
                found += 1;
                if found > self.cap {
                    return false;
                }
                let o = grid.origin();
                out.push([
                    o[0] + (i0 as f64 + s0 + 0.5 * size) * h,
                    o[1] + (i1 as f64 + t0 + 0.5 * size) * h,
                ]);
                continue;
            }
            let half = 0.5 * size;
            stack.push((s0, t0, half));
            stack.push((s0 + half, t0, half));
            stack.push((s0, t0 + half, half));
            stack.push((s0 + half, t0 + half, half));
        }
        true
    }

    /// Merge nearby fiber points and resolve each survivor to its nearest
    /// node and interpolated weight. Mask filtering happens later so the
    /// same scan can serve several node sets.
    fn tally(&self, points: &[Vec<f64>]) -> Result<FiberTally> {
        let grid = self.grid();
        let mut merged: Vec<&Vec<f64>> = Vec::new();
        'next: for p in points {
            for q in &merged {
                let d2: f64 =
                    p.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2.sqrt() < self.merge_radius {
                    continue 'next;
                }
            }
            merged.push(p);
        }
        if merged.len() > self.cap {
            return Ok(FiberTally { kept: Vec::new(), raw_count: merged.len(), over_cap: true });
        }
        let mut kept = Vec::with_capacity(merged.len());
        for p in merged {
            let node = grid.nearest_node(p)?;
            kept.push((node, self.interp_weight(p)));
        }
        let raw_count = kept.len();
        Ok(FiberTally { kept, raw_count, over_cap: false })
    }

    /// Multilinear interpolation of the weight at a physical point.
    fn interp_weight(&self, p: &[f64]) -> f64 {
        let grid = self.grid();
        let h = grid.spacing();
        let o = grid.origin();
        let shape = grid.shape();
        match grid.dim() {
            1 => {
                let u = ((p[0] - o[0]) / h).clamp(0.0, (shape[0] - 1) as f64);
                let i = (u.floor() as usize).min(shape[0] - 2);
                let t = u - i as f64;
                let w = self.weight.values();
                (1.0 - t) * w[i] + t * w[i + 1]
            }
            2 => {
                let u0 = ((p[0] - o[0]) / h).clamp(0.0, (shape[0] - 1) as f64);
                let u1 = ((p[1] - o[1]) / h).clamp(0.0, (shape[1] - 1) as f64);
                let i0 = (u0.floor() as usize).min(shape[0] - 2);
                let i1 = (u1.floor() as usize).min(shape[1] - 2);
                let s = u0 - i0 as f64;
                let t = u1 - i1 as f64;
                let w = self.weight.values();
                let at = |a: usize, b: usize| w[(i0 + a) * shape[1] + (i1 + b)];
                (1.0 - s) * (1.0 - t) * at(0, 0)
                    + s * (1.0 - t) * at(1, 0)
                    + (1.0 - s) * t * at(0, 1)
                    + s * t * at(1, 1)
            }
            _ => unreachable!("fiber search is limited to 1 and 2 dimensions"),
        }
    }
}

fn scan_knobs(grid: &Grid, opts: &AreaOptions) -> (f64, f64) {
    let h = grid.spacing();
    let merge = opts.merge_radius.unwrap_or(0.25 * h);
    let floor = opts.subdivision_floor.unwrap_or(1e-3 * h);
    (merge, floor)
}

/// Weighted fiber data of the image point `y`, restricted to the problem
/// domain (minus the exhaustion residual when one is set).
pub fn multiplicity(
    problem: &MappingProblem,
    y: &[f64],
    opts: &AreaOptions,
) -> Result<Multiplicity> {
    let grid = problem.grid();
    let dim = grid.dim();
    if dim > 2 {
        return Err(Error::UnsupportedDimension(dim));
    }
    if y.len() != dim {
        return Err(Error::LengthMismatch { expected: dim, got: y.len() });
    }
    let eff = effective_mask(problem, opts)?;
    let (merge_radius, floor) = scan_knobs(grid, opts);
    let scan = FiberScan {
        map: &problem.map,
        weight: &problem.weight,
        merge_radius,
        floor,
        cap: opts.multiplicity_cap,
    };
    let tally = match dim {
        1 => {
            let mut roots = Vec::new();
            if !scan.roots_1d(y[0], &mut roots) {
                return Ok(Multiplicity { value: 0.0, count: 0, degenerate: true });
            }
            let points: Vec<Vec<f64>> = roots.into_iter().map(|x| vec![x]).collect();
            scan.tally(&points)?
        }
        _ => {
            let shape = grid.shape();
            let mut points = Vec::new();
            for i0 in 0..shape[0] - 1 {
                for i1 in 0..shape[1] - 1 {
                    let mut cell = Vec::new();
                    if !scan.cell_roots_2d(i0, i1, y, &mut cell) {
                        return Ok(Multiplicity { value: 0.0, count: 0, degenerate: true });
                    }
                    points.extend(cell.into_iter().map(|p| p.to_vec()));
                }
            }
            scan.tally(&points)?
        }
    };
    Ok(tally.restricted(&eff))
}

/// Accumulators for one contiguous band of image samples. Bands are
/// reduced in index order, so splitting the rows differently (never the
/// scheduling) is the only thing that can move a result.
struct BandAcc {
    histogram: Vec<usize>,
    degenerate_samples: usize,
    total_samples: usize,
    value: f64,
    partials: Vec<f64>,
}

impl BandAcc {
    fn new(masks: usize) -> BandAcc {
        BandAcc {
            histogram: vec![0; HISTOGRAM_BINS],
            degenerate_samples: 0,
            total_samples: 0,
            value: 0.0,
            partials: vec![0.0; masks],
        }
    }

    fn absorb(
        &mut self,
        t: &FiberTally,
        eff: &RegionMask,
        cumulative: &[RegionMask],
        cell_measure: f64,
    ) {
        let m = t.restricted(eff);
        if m.degenerate {
            self.degenerate_samples += 1;
            return;
        }
        self.histogram[m.count.min(HISTOGRAM_BINS - 1)] += 1;
        self.value += m.value * cell_measure;
        for (running, cum) in self.partials.iter_mut().zip(cumulative) {
            *running += t.restricted(cum).value * cell_measure;
        }
    }

    fn merge(&mut self, other: BandAcc) {
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
        self.degenerate_samples += other.degenerate_samples;
        self.total_samples += other.total_samples;
        self.value += other.value;
        for (a, b) in self.partials.iter_mut().zip(&other.partials) {
            *a += b;
        }
    }
}

/// Midpoint lattice over one axis of the image bounding box.
struct AxisSamples {
    lo: f64,
    step: f64,
    count: usize,
}

impl AxisSamples {
    fn build(lo: f64, hi: f64, margin: f64, target: f64) -> Self {
        let span = hi - lo;
        let lo = lo - margin * span;
        let span = span * (1.0 + 2.0 * margin);
        if span <= 0.0 || target <= 0.0 {
            return Self { lo, step: 0.0, count: 1 };
        }
        let count = ((span / target).round() as usize).max(1);
        Self { lo, step: span / count as f64, count }
    }

    fn at(&self, j: usize) -> f64 {
        self.lo + (j as f64 + 0.5) * self.step
    }
}

/// Image-side integral: midpoint sampling of the weighted fiber count
/// over the image bounding box. Degenerate samples are excluded and
/// counted.
pub fn rhs_integral(problem: &MappingProblem, opts: &AreaOptions) -> Result<RhsIntegral> {
    Ok(rhs_scan(problem, opts, &[])?.0)
}

/// One sampling pass serving several node sets at once: the main value is
/// gated by the effective mask, and one running sum per entry of
/// `cumulative` is gated by that mask. Every accumulator sees the samples
/// in the same order, so nested masks yield exactly ordered sums.
fn rhs_scan(
    problem: &MappingProblem,
    opts: &AreaOptions,
    cumulative: &[RegionMask],
) -> Result<(RhsIntegral, Vec<f64>)> {
    let grid = problem.grid();
    let dim = grid.dim();
    if dim > 2 {
        return Err(Error::UnsupportedDimension(dim));
    }
    let eff = effective_mask(problem, opts)?;
    let (merge_radius, floor) = scan_knobs(grid, opts);
    let scan = FiberScan {
        map: &problem.map,
        weight: &problem.weight,
        merge_radius,
        floor,
        cap: opts.multiplicity_cap,
    };
    let target = opts.y_spacing.unwrap_or(grid.spacing());
    if !(target > 0.0) {
        return Err(Error::BadSpacing(target));
    }
    if !(opts.y_margin >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "image margin must be nonnegative, got {}",
            opts.y_margin
        )));
    }

    let axes: Vec<AxisSamples> = (0..dim)
        .map(|c| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for node in 0..grid.len() {
                let v = problem.map.value(node, c);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            AxisSamples::build(lo, hi, opts.y_margin, target)
        })
        .collect();
    let cell_measure: f64 = axes.iter().map(|a| a.step).product();

    let acc = match dim {
        1 => {
            let mut acc = BandAcc::new(cumulative.len());
            for j in 0..axes[0].count {
                let y = axes[0].at(j);
                acc.total_samples += 1;
                let mut roots = Vec::new();
                if !scan.roots_1d(y, &mut roots) {
                    acc.degenerate_samples += 1;
                    continue;
                }
                let points: Vec<Vec<f64>> = roots.into_iter().map(|x| vec![x]).collect();
                let t = scan.tally(&points)?;
                acc.absorb(&t, &eff, cumulative, cell_measure);
            }
            acc
        }
        _ => {
            let shape = grid.shape();
            let cells0 = shape[0] - 1;
            let cells1 = shape[1] - 1;
            // Bucket cells by their image bounding boxes so each sample
            // only visits candidates.
            let nb = ((cells0 * cells1) as f64).sqrt().ceil() as usize;
            let nb = nb.clamp(8, 256);
            let bucket_of = |c: usize, v: f64| -> usize {
                let a = &axes[c];
                let span = a.step * a.count as f64;
                if span <= 0.0 {
                    return 0;
                }
                (((v - a.lo) / span * nb as f64).floor() as isize)
                    .clamp(0, nb as isize - 1) as usize
            };
            let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); nb * nb];
            let s1 = shape[1];
            for i0 in 0..cells0 {
                for i1 in 0..cells1 {
                    let base = i0 * s1 + i1;
                    let mut lo = [f64::INFINITY; 2];
                    let mut hi = [f64::NEG_INFINITY; 2];
                    for (d0, d1) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        for c in 0..2 {
                            let v = problem.map.value(base + d0 * s1 + d1, c);
                            lo[c] = lo[c].min(v);
                            hi[c] = hi[c].max(v);
                        }
                    }
                    let b0 = bucket_of(0, lo[0])..=bucket_of(0, hi[0]);
                    for b in b0 {
                        for bb in bucket_of(1, lo[1])..=bucket_of(1, hi[1]) {
                            buckets[b * nb + bb].push((i0 * cells1 + i1) as u32);
                        }
                    }
                }
            }
            let scan_rows = |rows: std::ops::Range<usize>| -> Result<BandAcc> {
                let mut acc = BandAcc::new(cumulative.len());
                for j0 in rows {
                    for j1 in 0..axes[1].count {
                        let y = [axes[0].at(j0), axes[1].at(j1)];
                        acc.total_samples += 1;
                        let candidates =
                            &buckets[bucket_of(0, y[0]) * nb + bucket_of(1, y[1])];
                        let mut points: Vec<Vec<f64>> = Vec::new();
                        let mut degenerate = false;
                        for &cell in candidates {
                            let i0 = cell as usize / cells1;
                            let i1 = cell as usize % cells1;
                            let mut found = Vec::new();
                            if !scan.cell_roots_2d(i0, i1, &y, &mut found) {
                                degenerate = true;
                                break;
                            }
                            points.extend(found.into_iter().map(|p| p.to_vec()));
                        }
                        if degenerate {
                            acc.degenerate_samples += 1;
                            continue;
                        }
                        let t = scan.tally(&points)?;
                        acc.absorb(&t, &eff, cumulative, cell_measure);
                    }
                }
                Ok(acc)
            };
            let rows = axes[0].count;
            let workers = opts.threads.max(1).min(rows.max(1));
            if workers <= 1 {
                scan_rows(0..rows)?
            } else {
                let per = rows.div_ceil(workers);
                let bands = rows.div_ceil(per);
                let sr = &scan_rows;
                let results: Vec<Result<BandAcc>> = std::thread::scope(|s| {
                    let handles: Vec<_> = (0..bands)
                        .map(|b| {
                            let lo = b * per;
                            let hi = ((b + 1) * per).min(rows);
                            s.spawn(move || sr(lo..hi))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("image sampling worker panicked"))
                        .collect()
                });
                let mut acc = BandAcc::new(cumulative.len());
                for band in results {
                    acc.merge(band?);
                }
                acc
            }
        }
    };

    let BandAcc { histogram, degenerate_samples, total_samples, value, partials } = acc;
    Ok((RhsIntegral { value, histogram, degenerate_samples, total_samples }, partials))
}

/// Evaluate both sides of the identity and package the comparison.
pub fn verify_area_formula(
    problem: &MappingProblem,
    opts: &AreaOptions,
) -> Result<AreaFormulaReport> {
    let terms = node_terms(problem)?;
    let eff = effective_mask(problem, opts)?;

    let mut lhs_partials = Vec::new();
    let mut cumulative = Vec::new();
    if let Some(ex) = &opts.exhaustion {
        let mut counted = RegionMask::empty(problem.grid().clone());
        let mut running = 0.0;
        for piece in &ex.pieces {
            let fresh = problem.domain.intersect(piece)?.minus(&counted)?;
            for node in fresh.nodes() {
                running += terms[node];
            }
            counted = counted.union(&fresh)?;
            lhs_partials.push(running);
            cumulative.push(counted.clone());
        }
    }

    let mut lhs = 0.0;
    for node in 0..terms.len() {
        if eff.contains(node) {
            lhs += terms[node];
        }
    }

    let (rhs_part, rhs_partials) = rhs_scan(problem, opts, &cumulative)?;
    let rhs = rhs_part.value;
    let abs_error = (lhs - rhs).abs();
    let scale = lhs.abs().max(rhs.abs()).max(1e-300);
    let invalid = rhs_part.degenerate_samples * 100 > rhs_part.total_samples;

    Ok(AreaFormulaReport {
        lhs,
        rhs,
        abs_error,
        rel_error: abs_error / scale,
        lhs_partials,
        rhs_partials,
        histogram: rhs_part.histogram,
        degenerate_samples: rhs_part.degenerate_samples,
        total_samples: rhs_part.total_samples,
        invalid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BoxRegion;
    use crate::synth;

    #[test]
    fn jacobian_of_a_linear_map_is_its_determinant() {
        let g = Grid::cube(2, -1.0, 1.0, 33).unwrap();
        let map = synth::linear_map(&g, &[2.0, 1.0, 0.5, 3.0]).unwrap();
        let jac = jacobian(&map).unwrap();
        // Central and one-sided second-order stencils are exact on
        // linear data, boundaries included.
        for v in jac.values() {
            assert!((v - 5.5).abs() < 1e-12, "det {v}");
        }
    }

    #[test]
    fn identity_in_one_dimension_balances_exactly() {
        let g = Grid::cube(1, 0.0, 1.0, 65).unwrap();
        let problem = MappingProblem::with_unit_weight(synth::identity_map(&g)).unwrap();
        let report = verify_area_formula(&problem, &AreaOptions::default()).unwrap();
        assert!((report.lhs - 1.0).abs() < 1e-12, "lhs {}", report.lhs);
        assert!((report.rhs - 1.0).abs() < 1e-12, "rhs {}", report.rhs);
        assert_eq!(report.degenerate_samples, 0);
        assert!(!report.invalid);
        assert_eq!(report.histogram[1], report.total_samples);
    }

    #[test]
    fn identity_in_two_dimensions_balances_exactly() {
        let g = Grid::cube(2, 0.0, 1.0, 33).unwrap();
        let problem = MappingProblem::with_unit_weight(synth::identity_map(&g)).unwrap();
        let report = verify_area_formula(&problem, &AreaOptions::default()).unwrap();
        assert!((report.lhs - 1.0).abs() < 1e-12, "lhs {}", report.lhs);
        assert!((report.rhs - 1.0).abs() < 1e-12, "rhs {}", report.rhs);
        assert!(!report.invalid);
    }

    #[test]
    fn one_dimensional_fold_counts_two_preimages() {
        let g = Grid::cube(1, -1.0, 1.0, 1001).unwrap();
        let map = VectorField::from_fn(g.clone(), 1, |x, _| x[0] * x[0]);
        let problem = MappingProblem::with_unit_weight(map).unwrap();
        let report = verify_area_formula(&problem, &AreaOptions::default()).unwrap();
        assert!((report.lhs - 2.0).abs() < 0.02, "lhs {}", report.lhs);
        assert!((report.rhs - 2.0).abs() < 0.02, "rhs {}", report.rhs);
        assert!(report.rel_error < 0.01, "rel {}", report.rel_error);
    }

    #[test]
    fn fold_multiplicity_is_two_inside_and_zero_outside() {
        let g = Grid::cube(2, -1.0, 1.0, 65).unwrap();
        let problem = MappingProblem::with_unit_weight(synth::fold2d(&g).unwrap()).unwrap();
        let opts = AreaOptions::default();
        let inside = multiplicity(&problem, &[0.25, 0.3], &opts).unwrap();
        assert_eq!(inside.count, 2);
        assert!(!inside.degenerate);
        assert!((inside.value - 2.0).abs() < 1e-9, "value {}", inside.value);
        let outside = multiplicity(&problem, &[-0.25, 0.3], &opts).unwrap();
        assert_eq!(outside.count, 0);
    }

    #[test]
    fn node_aligned_image_point_is_counted_once() {
        let g = Grid::cube(1, 0.0, 1.0, 65).unwrap();
        let problem = MappingProblem::with_unit_weight(synth::identity_map(&g)).unwrap();
        let y = g.coord(42)[0];
        let m = multiplicity(&problem, &[y], &AreaOptions::default()).unwrap();
        assert_eq!(m.count, 1);
        assert!((m.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_map_is_degenerate_but_balanced() {
        let g = Grid::cube(1, 0.0, 1.0, 65).unwrap();
        let map = VectorField::from_fn(g.clone(), 1, |_, _| 0.7);
        let problem = MappingProblem::with_unit_weight(map).unwrap();
        let m = multiplicity(&problem, &[0.7], &AreaOptions::default()).unwrap();
        assert!(m.degenerate);
        let report = verify_area_formula(&problem, &AreaOptions::default()).unwrap();
        // One-sided boundary stencils of a constant leave rounding dust.
        assert!(report.lhs.abs() < 1e-12, "lhs {}", report.lhs);
        assert_eq!(report.rhs, 0.0);
        assert!(report.invalid);
    }

    #[test]
    fn problem_construction_validates() {
        let g = Grid::cube(2, 0.0, 1.0, 17).unwrap();
        let other = Grid::cube(2, 0.0, 1.0, 33).unwrap();
        let map = synth::identity_map(&g);
        let bad_weight = ScalarField::constant(g.clone(), -1.0);
        assert!(MappingProblem::new(
            map.clone(),
            bad_weight,
            RegionMask::full(g.clone())
        )
        .is_err());
        let mismatched = ScalarField::constant(other, 1.0);
        assert!(matches!(
            MappingProblem::new(map.clone(), mismatched, RegionMask::full(g.clone())),
            Err(Error::GridMismatch)
        ));
        let scalar = VectorField::from_fn(g.clone(), 1, |x, _| x[0]);
        assert!(MappingProblem::new(
            scalar,
            ScalarField::constant(g.clone(), 1.0),
            RegionMask::full(g)
        )
        .is_err());
    }

    #[test]
    fn weighted_identity_integrates_the_weight() {
        let g = Grid::cube(1, 0.0, 1.0, 257).unwrap();
        let map = synth::identity_map(&g);
        let weight = ScalarField::from_fn(g.clone(), |x| 1.0 + x[0]);
        let problem =
            MappingProblem::new(map, weight, RegionMask::full(g.clone())).unwrap();
        let report = verify_area_formula(&problem, &AreaOptions::default()).unwrap();
        // Both sides integrate 1 + x over the unit interval.
        assert!((report.lhs - 1.5).abs() < 1e-6, "lhs {}", report.lhs);
        assert!(report.rel_error < 1e-3, "rel {}", report.rel_error);
    }

    #[test]
    fn exhaustion_partials_accumulate_to_the_direct_sum() {
        let g = Grid::cube(1, -1.0, 1.0, 257).unwrap();
        let problem = MappingProblem::with_unit_weight(synth::identity_map(&g)).unwrap();
        let boxes: Vec<RegionMask> = [0.3, 0.6, 0.9]
            .iter()
            .map(|half| {
                BoxRegion::new(vec![-half], vec![*half])
                    .unwrap()
                    .mask(&g)
                    .unwrap()
            })
            .collect();
        let residual = boxes.last().unwrap().complement();
        let opts = AreaOptions {
            exhaustion: Some(ExhaustionMasks { pieces: boxes, residual }),
            ..AreaOptions::default()
        };
        let report = verify_area_formula(&problem, &opts).unwrap();
        assert_eq!(report.lhs_partials.len(), 3);
        assert_eq!(report.rhs_partials.len(), 3);
        for w in report.lhs_partials.windows(2) {
            assert!(w[0] <= w[1]);
        }
        for w in report.rhs_partials.windows(2) {
            assert!(w[0] <= w[1]);
        }
        let last = *report.lhs_partials.last().unwrap();
        assert!(
            (last - report.lhs).abs() <= 1e-12 * report.lhs.abs().max(1.0),
            "partial {last} vs direct {}",
            report.lhs
        );
        // The pieces exhaust the effective domain, so the final image-side
        // partial is the full image-side value, bit for bit.
        assert_eq!(*report.rhs_partials.last().unwrap(), report.rhs);
        // Identity restricted to [-0.9, 0.9]: both sides near 1.8.
        assert!((report.lhs - 1.8).abs() < 0.02, "lhs {}", report.lhs);
        assert!(report.rel_error < 0.02, "rel {}", report.rel_error);
    }

    #[test]
    fn banded_sampling_matches_the_sequential_scan() {
        let g = Grid::cube(2, -1.0, 1.0, 41).unwrap();
        let problem = MappingProblem::with_unit_weight(synth::fold2d(&g).unwrap()).unwrap();
        let sequential = rhs_integral(&problem, &AreaOptions::default()).unwrap();
        let banded = rhs_integral(
            &problem,
            &AreaOptions { threads: 3, ..AreaOptions::default() },
        )
        .unwrap();
        assert_eq!(banded.total_samples, sequential.total_samples);
        assert_eq!(banded.degenerate_samples, sequential.degenerate_samples);
        assert_eq!(banded.histogram, sequential.histogram);
        // Only the reduction order differs between band counts.
        let rel = (banded.value - sequential.value).abs() / sequential.value.abs();
        assert!(rel < 1e-12, "rel {rel}");
    }

    #[test]
    fn three_dimensional_fibers_are_not_supported() {
        let g = Grid::cube(3, 0.0, 1.0, 5).unwrap();
        let problem = MappingProblem::with_unit_weight(synth::identity_map(&g)).unwrap();
        assert!(matches!(
            rhs_integral(&problem, &AreaOptions::default()),
            Err(Error::UnsupportedDimension(3))
        ));
        // The domain side still works in three dimensions.
        let lhs = lhs_integral(&problem, None).unwrap();
        assert!((lhs - 1.0).abs() < 1e-12, "lhs {lhs}");
    }
}
