//! Precise representatives from descending ball averages, truncation
//! sublevel sets of the maximal gradient, the pointwise estimate chain for
//! averaged differences, Lipschitz moduli on truncation sets, and the
//! cutoff-based exhaustion that decomposes a box into nested pieces where
//! the function is certifiably Lipschitz, plus a capacity estimate of the
//! leftover residual.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calculus::{ball_average, for_ball_nodes, gradient, sobolev_norm};
use crate::capacity::{estimate_capacity, CapacityEstimate, CapacityProblem, SolverOptions};
use crate::error::{Error, Result};
use crate::field::{BoxRegion, Grid, RegionMask, ScalarField};
use crate::maximal::{maximal_at, maximal_function, sublevel_set, vector_magnitude, RadiusLadder};

/// Ball-average limit at every node, with the set of nodes where the
/// average sequence fails the Cauchy test. Those nodes carry value 0.
#[derive(Clone, Debug)]
pub struct PreciseRepresentative {
    pub values: ScalarField,
    pub nonconvergent: RegionMask,
    /// Cauchy tolerance used for the convergence test, recorded for reports.
    pub tolerance: f64,
}

fn check_rep_inputs(ladder: &RadiusLadder, eps_c: f64) -> Result<()> {
    if ladder.len() < 4 {
        return Err(Error::BadLadder(format!(
            "average ladder needs at least 4 radii, got {}",
            ladder.len()
        )));
    }
    if !(eps_c > 0.0 && eps_c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "convergence tolerance must be positive, got {eps_c}"
        )));
    }
    Ok(())
}

/// Walk the ladder downward at one node; converged when the last three
/// successive average differences all stay below `eps_c`. Neighboring
/// rungs whose balls hold the same node set are collapsed first: their
/// averages are identical by construction, and counting those zero
/// differences would certify convergence the data does not show.
pub fn precise_representative_at(
    f: &ScalarField,
    ladder: &RadiusLadder,
    eps_c: f64,
    node: usize,
) -> Result<(f64, bool)> {
    check_rep_inputs(ladder, eps_c)?;
    let grid = f.grid();
    let mut prev: Option<(f64, usize)> = None;
    let mut diffs = Vec::with_capacity(ladder.len() - 1);
    let mut last = 0.0;
    for &r in ladder.radii().iter().rev() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for_ball_nodes(grid, node, r, |m| {
            sum += f.values()[m];
            count += 1;
        });
        let avg = sum / count as f64;
        if let Some((pavg, pcount)) = prev {
            if count != pcount {
                diffs.push((avg - pavg).abs());
            }
        }
        prev = Some((avg, count));
        last = avg;
    }
    let tail_len = diffs.len().min(3);
    let converged = diffs[diffs.len() - tail_len..].iter().all(|d| *d < eps_c);
    Ok(if converged { (last, true) } else { (0.0, false) })
}

/// Precise representative on the whole grid.
pub fn precise_representative(
    f: &ScalarField,
    ladder: &RadiusLadder,
    eps_c: f64,
) -> Result<PreciseRepresentative> {
    check_rep_inputs(ladder, eps_c)?;
    let grid = f.grid();
    let mut values = vec![0.0; grid.len()];
    let mut flags = vec![false; grid.len()];
    for node in 0..grid.len() {
        let (v, ok) = precise_representative_at(f, ladder, eps_c, node)?;
        values[node] = v;
        flags[node] = !ok;
    }
    Ok(PreciseRepresentative {
        values: ScalarField::new(grid.clone(), values)?,
        nonconvergent: RegionMask::new(grid.clone(), flags)?,
        tolerance: eps_c,
    })
}

/// Sublevel sets of the maximal gradient magnitude, one mask per level,
/// nested by construction.
pub fn truncation_sets(
    f: &ScalarField,
    levels: &[f64],
    ladder: &RadiusLadder,
) -> Result<Vec<RegionMask>> {
    if levels.is_empty() {
        return Err(Error::InvalidParameter("need at least one truncation level".into()));
    }
    for w in levels.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidParameter(format!(
                "truncation levels must increase strictly, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if !(levels[0] > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation levels must be positive, got {}",
            levels[0]
        )));
    }
    let mag = vector_magnitude(&gradient(f));
    let maximal = maximal_function(&mag, ladder)?;
    Ok(levels.iter().map(|a| sublevel_set(&maximal, *a)).collect())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChainEstimate {
    pub lhs: f64,
    pub rhs_unit: f64,
}

impl ChainEstimate {
    /// `lhs / rhs_unit`, infinite when the unit vanishes but the lhs does not.
    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs_unit
        }
    }
}

/// The three averaged-difference estimates that certify a Lipschitz bound
/// on a truncation set, all with constants stripped.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChainChecks {
    /// Same center, two radii `s < r`:
    /// `|f_B(x,r) - f_B(x,s)|` against `(r/s)^n * r * alpha`.
    pub radius_change: ChainEstimate,
    /// Representative against one average:
    /// `|f*(x) - f_B(x,r)|` against `r * alpha`.
    pub representative_gap: ChainEstimate,
    /// Two centers, shared radius `d = |x - y|`:
    /// `|f_B(x,d) - f_B(y,d)|` against `d * alpha`.
    pub center_change: ChainEstimate,
}

/// Frozen ratio bounds for the three chain estimates, by dimension.
/// Calibrated once as 1.5x the maxima of a 200-case held-out suite of
/// seeded smooth fields (ladder ratio 2^(1/4), tolerance 1e-3 of the
/// field range, levels drawn in [1, 1.5) times the gradient sup) and
/// kept fixed; checks compare fresh ratios against these, never refit
/// them.
pub fn chain_constants(dim: usize) -> Result<[f64; 3]> {
    match dim {
        1 => Ok([0.12, 0.45, 1.4]),
        2 => Ok([0.06, 0.30, 0.85]),
        3 => Ok([0.012, 0.09, 0.32]),
        _ => Err(Error::UnsupportedDimension(dim)),
    }
}

/// Evaluate the three chain estimates at nodes `x`, `y` that must lie in
/// the truncation set of level `alpha` with a convergent representative
/// at `x`.
pub fn chain_estimate_check(
    f: &ScalarField,
    x: usize,
    y: usize,
    r: f64,
    s: f64,
    alpha: f64,
    ladder: &RadiusLadder,
    eps_c: f64,
) -> Result<ChainChecks> {
    let grid = f.grid();
    let h = grid.spacing();
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("level must be positive, got {alpha}")));
    }
    if !(s >= h && s < r) {
        return Err(Error::PreconditionViolated(format!(
            "radii must satisfy h <= s < r, got s = {s}, r = {r}, h = {h}"
        )));
    }
    let d = grid.node_distance(x, y);
    if d < h {
        return Err(Error::PreconditionViolated(format!(
            "nodes must be at least one spacing apart, got |x - y| = {d}"
        )));
    }
    let mag = vector_magnitude(&gradient(f));
    for node in [x, y] {
        let m = maximal_at(&mag, ladder, node)?;
        if m > alpha {
            return Err(Error::PreconditionViolated(format!(
                "node {node} has maximal gradient {m} above the level {alpha}"
            )));
        }
    }
    let (star, converged) = precise_representative_at(f, ladder, eps_c, x)?;
    if !converged {
        return Err(Error::PreconditionViolated(format!(
            "ball averages do not settle at node {x}"
        )));
    }

    let n = grid.dim() as f64;
    let a_r = ball_average(f, x, r)?;
    let a_s = ball_average(f, x, s)?;
    let radius_change =
        ChainEstimate { lhs: (a_r - a_s).abs(), rhs_unit: (r / s).powf(n) * r * alpha };
    let representative_gap = ChainEstimate { lhs: (star - a_r).abs(), rhs_unit: r * alpha };
    let b_x = ball_average(f, x, d)?;
    let b_y = ball_average(f, y, d)?;
    let center_change = ChainEstimate { lhs: (b_x - b_y).abs(), rhs_unit: d * alpha };
    Ok(ChainChecks { radius_change, representative_gap, center_change })
}

/// Largest sampled difference quotient of the representative over pairs of
/// usable nodes (in `mask`, convergent). All pairs are visited when there
/// are at most `pairs` of them; otherwise `pairs` seeded draws.
pub fn lipschitz_modulus(
    rep: &PreciseRepresentative,
    mask: &RegionMask,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    if pairs == 0 {
        return Err(Error::InvalidParameter("need a positive pair budget".into()));
    }
    if mask.grid() != rep.values.grid() {
        return Err(Error::GridMismatch);
    }
    let usable: Vec<usize> = mask.minus(&rep.nonconvergent)?.nodes();
    if usable.len() < 2 {
        return Err(Error::InsufficientNodes { needed: 2 });
    }
    let grid = rep.values.grid();
    let vals = rep.values.values();
    let quotient = |a: usize, b: usize| -> f64 {
        (vals[a] - vals[b]).abs() / grid.node_distance(a, b)
    };
    let total_pairs = usable.len() * (usable.len() - 1) / 2;
    let mut modulus = 0.0f64;
    if total_pairs <= pairs {
        for i in 0..usable.len() {
            for j in i + 1..usable.len() {
                modulus = modulus.max(quotient(usable[i], usable[j]));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..pairs {
            let i = rng.random_range(0..usable.len());
            let mut j = rng.random_range(0..usable.len() - 1);
            if j >= i {
                j += 1;
            }
            modulus = modulus.max(quotient(usable[i], usable[j]));
        }
    }
    Ok(modulus)
}

fn smootherstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * u * (u * (6.0 * u - 15.0) + 10.0)
    }
}

/// Product-form cutoff: 1 on the closed inner box, 0 outside the outer
/// box, a per-axis quintic ramp in between with zero slope and curvature
/// at both ends, so twice-differencing the cutoff stays clean.
pub fn cutoff_field(grid: &Grid, inner: &BoxRegion, outer: &BoxRegion) -> Result<ScalarField> {
    if inner.dim() != grid.dim() || outer.dim() != grid.dim() {
        return Err(Error::UnsupportedDimension(inner.dim()));
    }
    if !outer.strictly_contains(inner) {
        return Err(Error::InvalidParameter(
            "cutoff needs the inner box strictly inside the outer box".into(),
        ));
    }
    let inner = inner.clone();
    let outer = outer.clone();
    Ok(ScalarField::from_fn(grid.clone(), move |x| {
        let mut prod = 1.0;
        for a in 0..x.len() {
            let up = smootherstep((x[a] - outer.min[a]) / (inner.min[a] - outer.min[a]));
            let down = smootherstep((outer.max[a] - x[a]) / (outer.max[a] - inner.max[a]));
            prod *= up * down;
        }
        prod
    }))
}

/// Configuration of the nested-box exhaustion. `boxes` lists the closed
/// boxes in strictly increasing order; level `j` (1-based) cuts off with
/// the ramp from `boxes[j-1]` to `boxes[j]`, so `boxes.len() - 1` levels.
#[derive(Clone, Debug)]
pub struct ExhaustionConfig {
    pub boxes: Vec<BoxRegion>,
    /// Derivative order of the Sobolev class the thresholds are built from.
    pub k: usize,
    pub p: f64,
    /// Hard cap on the per-level thresholds; exceeding it is an error
    /// rather than a silent truncation.
    pub alpha_cap: f64,
    /// Ratio of the radius ladder used for the maximal function.
    pub ladder_ratio: f64,
    /// Kernel order for the residual capacity; defaults to `k - 1`, which
    /// vanishes for k = 1 and must then be overridden explicitly.
    pub capacity_alpha: Option<f64>,
    pub capacity_opts: SolverOptions,
}

/// One level of the exhaustion: the cutoff window, the threshold picked by
/// the doubling rule, and the sublevel set it produces.
#[derive(Clone, Debug)]
pub struct ExhaustionLevel {
    pub inner: BoxRegion,
    pub outer: BoxRegion,
    /// `W^{k-1,p}`-style norm of the cut-off gradient the threshold rule uses.
    pub grad_norm: f64,
    /// Smallest power of two whose p-th power is at least `2^j` times the
    /// p-th power of `grad_norm`.
    pub threshold: f64,
    pub sublevel: RegionMask,
}

/// Output of the exhaustion: nested certified pieces, the residual, and
/// the residual's capacity estimate.
#[derive(Clone, Debug)]
pub struct TruncationDecomposition {
    pub levels: Vec<ExhaustionLevel>,
    /// `tail_sublevels[l]` intersects the sublevel sets of every level
    /// from `l` upward; nondecreasing in `l`.
    pub tail_sublevels: Vec<RegionMask>,
    /// `pieces[l] = tail_sublevels[l]` cut to the closed level-`l` inner
    /// box; nondecreasing in `l`.
    pub pieces: Vec<RegionMask>,
    /// Grid nodes in no piece.
    pub residual: RegionMask,
    pub residual_capacity: CapacityEstimate,
}

fn smallest_power_of_two_at_least(x: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    let mut c = 2f64.powi(x.log2().ceil() as i32);
    if c < x {
        c *= 2.0;
    }
    while c / 2.0 >= x {
        c /= 2.0;
    }
    c
}

/// Norm of the gradient in the order-(k-1) Sobolev scale: p-th-power sums
/// over all components and all derivative orders up to k-1.
fn gradient_norm(f: &ScalarField, k: usize, p: f64) -> Result<f64> {
    let grad = gradient(f);
    let mut acc = 0.0;
    for c in 0..grad.components() {
        acc += sobolev_norm(&grad.component(c), k - 1, p)?.powf(p);
    }
    Ok(acc.powf(1.0 / p))
}

pub fn exhaustion(f: &ScalarField, config: &ExhaustionConfig) -> Result<TruncationDecomposition> {
    let grid = f.grid();
    if config.boxes.len() < 2 {
        return Err(Error::InvalidParameter(
            "exhaustion needs at least two nested boxes".into(),
        ));
    }
    let level_count = config.boxes.len() - 1;
    if level_count > 6 {
        return Err(Error::InvalidParameter(format!(
            "at most 6 exhaustion levels are supported, got {level_count}"
        )));
    }
    for w in config.boxes.windows(2) {
        if !w[1].strictly_contains(&w[0]) {
            return Err(Error::InvalidParameter(
                "exhaustion boxes must increase strictly".into(),
            ));
        }
    }
    if config.k == 0 || config.k > 3 {
        return Err(Error::OrderTooHigh { got: config.k, max: 3 });
    }
    if !(config.p >= 1.0) {
        return Err(Error::BadExponent(config.p));
    }
    if !(config.alpha_cap > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold cap must be positive, got {}",
            config.alpha_cap
        )));
    }
    let capacity_alpha = match config.capacity_alpha {
        Some(a) => a,
        None if config.k >= 2 => (config.k - 1) as f64,
        None => {
            return Err(Error::InvalidParameter(
                "k - 1 vanishes for k = 1; set capacity_alpha explicitly".into(),
            ))
        }
    };

    let ladder = RadiusLadder::geometric(grid, config.ladder_ratio)?;
    let mut levels = Vec::with_capacity(level_count);
    for j in 1..=level_count {
        let inner = &config.boxes[j - 1];
        let outer = &config.boxes[j];
        let zeta = cutoff_field(grid, inner, outer)?;
        let cut: Vec<f64> =
            f.values().iter().zip(zeta.values()).map(|(a, b)| a * b).collect();
        let fj = ScalarField::new(grid.clone(), cut)?;
        let grad_norm = gradient_norm(&fj, config.k, config.p)?;
        let target = 2f64.powi(j as i32).powf(1.0 / config.p) * grad_norm;
        let threshold = smallest_power_of_two_at_least(target);
        if threshold > config.alpha_cap {
            return Err(Error::ThresholdUnachievable {
                level: j,
                required: threshold,
                cap: config.alpha_cap,
            });
        }
        let mag = vector_magnitude(&gradient(&fj));
        let maximal = maximal_function(&mag, &ladder)?;
        let sublevel = sublevel_set(&maximal, threshold);
        levels.push(ExhaustionLevel {
            inner: inner.clone(),
            outer: outer.clone(),
            grad_norm,
            threshold,
            sublevel,
        });
    }

    let mut tail_rev: Vec<RegionMask> = Vec::with_capacity(level_count);
    for level in levels.iter().rev() {
        let next = match tail_rev.last() {
            None => level.sublevel.clone(),
            Some(prev) => prev.intersect(&level.sublevel)?,
        };
        tail_rev.push(next);
    }
    tail_rev.reverse();
    let tail_sublevels = tail_rev;

    let mut pieces = Vec::with_capacity(level_count);
    for (l, tail) in tail_sublevels.iter().enumerate() {
        pieces.push(tail.intersect(&config.boxes[l].mask(grid)?)?);
    }

    let mut covered = pieces[0].clone();
    for piece in &pieces[1..] {
        covered = covered.union(piece)?;
    }
    let residual = covered.complement();
    let problem = CapacityProblem::new(&residual, capacity_alpha, config.p)?;
    let residual_capacity = estimate_capacity(&problem, &config.capacity_opts)?;

    Ok(TruncationDecomposition {
        levels,
        tail_sublevels,
        pieces,
        residual,
        residual_capacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn short_ladder(grid: &Grid, top: f64) -> RadiusLadder {
        RadiusLadder::geometric_up_to(grid, RadiusLadder::default_ratio(), top).unwrap()
    }

    #[test]
    fn smooth_field_converges_everywhere() {
        // Fine enough that the curvature drift f'' h^2 of the bottom-rung
        // averages sits well inside the tolerance.
        let g = Grid::cube(1, -1.0, 1.0, 1025).unwrap();
        let f = synth::bump(&g, &[0.0], 0.6).unwrap();
        let ladder = short_ladder(&g, 16.0 * g.spacing());
        let rep = precise_representative(&f, &ladder, 1e-3 * f.range()).unwrap();
        assert_eq!(rep.nonconvergent.count(), 0);
        // Slope of the bump is bounded by 2, so averages sit within
        // 2 * r_min of the value.
        let tol = 2.0 * ladder.min_radius() + 1e-9;
        for (a, b) in rep.values.values().iter().zip(f.values()) {
            assert!((a - b).abs() <= tol, "{a} vs {b}");
        }
    }

    #[test]
    fn jump_node_averages_to_one_half() {
        let g = Grid::cube(1, -1.0, 1.0, 513).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| {
            if x[0] > 0.0 {
                1.0
            } else if x[0] == 0.0 {
                0.5
            } else {
                0.0
            }
        });
        let ladder = short_ladder(&g, 32.0 * g.spacing());
        let node = g.nearest_node(&[0.0]).unwrap();
        let (v, ok) = precise_representative_at(&f, &ladder, 1e-3, node).unwrap();
        assert!(ok);
        assert!((v - 0.5).abs() < 1e-12, "value {v}");
    }

    #[test]
    fn oscillatory_origin_is_flagged() {
        let g = Grid::cube(1, -1.0, 1.0, 1025).unwrap();
        let f = synth::oscillatory(&g);
        let ladder = short_ladder(&g, 64.0 * g.spacing());
        let eps = 1e-3 * f.range();
        let origin = g.nearest_node(&[0.0]).unwrap();
        let (v, ok) = precise_representative_at(&f, &ladder, eps, origin).unwrap();
        assert!(!ok);
        assert_eq!(v, 0.0);
        // Far from the origin the sign is locally constant and converges.
        let calm = g.nearest_node(&[0.5]).unwrap();
        let (v, ok) = precise_representative_at(&f, &ladder, eps, calm).unwrap();
        assert!(ok);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn ladder_must_have_four_rungs() {
        let g = Grid::cube(1, 0.0, 1.0, 65).unwrap();
        let f = ScalarField::constant(g.clone(), 1.0);
        let ladder = RadiusLadder::geometric_up_to(&g, 2.0, 2.5 * g.spacing()).unwrap();
        assert!(ladder.len() < 4);
        assert!(matches!(
            precise_representative(&f, &ladder, 1e-3),
            Err(Error::BadLadder(_))
        ));
    }

    #[test]
    fn truncation_sets_nest_and_validate() {
        let g = Grid::cube(1, -1.0, 1.0, 513).unwrap();
        let f = synth::singular_profile(&g, 0.5, 2.0 * g.spacing()).unwrap();
        let ladder = short_ladder(&g, 0.5);
        let masks = truncation_sets(&f, &[0.5, 1.0, 2.0, 4.0], &ladder).unwrap();
        for w in masks.windows(2) {
            assert!(w[0].is_subset_of(&w[1]).unwrap());
        }
        assert!(truncation_sets(&f, &[2.0, 1.0], &ladder).is_err());
        assert!(truncation_sets(&f, &[], &ladder).is_err());
        assert!(truncation_sets(&f, &[-1.0, 1.0], &ladder).is_err());
    }

    #[test]
    fn singular_origin_leaves_low_truncation_sets() {
        let g = Grid::cube(1, -1.0, 1.0, 2049).unwrap();
        let h = g.spacing();
        let f = synth::singular_profile(&g, 0.5, 2.0 * h).unwrap();
        let ladder = short_ladder(&g, 0.5);
        let origin = g.nearest_node(&[0.0]).unwrap();
        let mag = vector_magnitude(&gradient(&f));
        let peak = maximal_at(&mag, &ladder, origin).unwrap();
        let masks = truncation_sets(&f, &[peak / 8.0, peak / 4.0, peak / 2.0], &ladder).unwrap();
        for mask in &masks {
            assert!(!mask.contains(origin));
        }
    }

    #[test]
    fn lebesgue_decay_of_the_unturncated_set() {
        // Gradient of the mollified square-root profile behaves like
        // |x|^(-1/2), so the measure above level a scales like a^(-2):
        // the products a^2 * measure stay within one constant band.
        let g = Grid::cube(1, -1.0, 1.0, 2049).unwrap();
        let f = synth::singular_profile(&g, 0.5, 2.0 * g.spacing()).unwrap();
        let ladder = short_ladder(&g, 0.5);
        let levels = [0.7, 1.4, 2.8, 5.6];
        let masks = truncation_sets(&f, &levels, &ladder).unwrap();
        let mut products = Vec::new();
        for (a, mask) in levels.iter().zip(&masks) {
            let left_out = mask.complement().measure();
            assert!(left_out > 0.0, "level {a} truncates nothing");
            products.push(a * a * left_out);
        }
        let max = products.iter().cloned().fold(f64::MIN, f64::max);
        let min = products.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min <= 4.0, "products {products:?}");
    }

    #[test]
    fn chain_estimates_vanish_for_constants() {
        let g = Grid::cube(1, -1.0, 1.0, 257).unwrap();
        let f = ScalarField::constant(g.clone(), 3.0);
        let ladder = short_ladder(&g, 0.5);
        let x = g.nearest_node(&[-0.25]).unwrap();
        let y = g.nearest_node(&[0.25]).unwrap();
        let checks =
            chain_estimate_check(&f, x, y, 0.25, 0.1, 1.0, &ladder, 1e-3).unwrap();
        assert_eq!(checks.radius_change.lhs, 0.0);
        assert_eq!(checks.representative_gap.lhs, 0.0);
        assert_eq!(checks.center_change.lhs, 0.0);
    }

    #[test]
    fn linear_field_center_change_is_exact() {
        let g = Grid::cube(1, -1.0, 1.0, 257).unwrap();
        let a = 1.5;
        let f = ScalarField::from_fn(g.clone(), move |x| a * x[0]);
        let ladder = short_ladder(&g, 0.5);
        let x = g.nearest_node(&[-0.25]).unwrap();
        let y = g.nearest_node(&[0.25]).unwrap();
        let checks = chain_estimate_check(&f, x, y, 0.3, 0.1, a, &ladder, 1e-3).unwrap();
        // Averages of a linear field over matching truncated balls shift
        // exactly with the center while both balls stay interior.
        let d = g.node_distance(x, y);
        assert!((checks.center_change.lhs - a * d).abs() < 1e-10);
        assert!((checks.center_change.rhs_unit - a * d).abs() < 1e-12);
        assert!(checks.center_change.ratio() <= 1.0 + 1e-9);
    }

    #[test]
    fn chain_check_rejects_nodes_above_the_level() {
        let g = Grid::cube(1, -1.0, 1.0, 257).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| 2.0 * x[0]);
        let ladder = short_ladder(&g, 0.5);
        let x = g.nearest_node(&[-0.25]).unwrap();
        let y = g.nearest_node(&[0.25]).unwrap();
        let err = chain_estimate_check(&f, x, y, 0.25, 0.1, 0.5, &ladder, 1e-3);
        assert!(matches!(err, Err(Error::PreconditionViolated(_))));
        let bad_radii = chain_estimate_check(&f, x, y, 0.1, 0.25, 4.0, &ladder, 1e-3);
        assert!(matches!(bad_radii, Err(Error::PreconditionViolated(_))));
    }

    #[test]
    fn randomized_chain_suite_respects_frozen_constants() {
        // Seed 1009 is disjoint from the calibration seed (4001).
        for dim in 1..=3 {
            let suite = chain_suite_ratios(dim, 1009, 40);
            let bounds = chain_constants(dim).unwrap();
            for (i, max_ratio) in suite.iter().enumerate() {
                assert!(
                    max_ratio <= &bounds[i],
                    "dim {dim} estimate {i}: observed {max_ratio}, bound {}",
                    bounds[i]
                );
            }
        }
    }

    // Shared by the frozen-constant test above and the (ignored)
    // calibration probe below. The level is drawn at or above the
    // gradient sup, which dominates the maximal function everywhere, so
    // both probe nodes always sit inside the truncation set.
    pub(crate) fn chain_suite_ratios(dim: usize, seed: u64, checks: usize) -> [f64; 3] {
        let nodes = match dim {
            1 => 513,
            2 => 129,
            _ => 33,
        };
        let g = Grid::cube(dim, -1.0, 1.0, nodes).unwrap();
        let ladder = short_ladder(&g, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut maxes = [0.0f64; 3];
        let mut done = 0usize;
        while done < checks {
            let f = synth::random_smooth(&g, rng.random(), 4).unwrap();
            let mag = vector_magnitude(&gradient(&f));
            let alpha = mag.max() * rng.random_range(1.0..1.5);
            let x = rng.random_range(0..g.len());
            let y = rng.random_range(0..g.len());
            if g.node_distance(x, y) < g.spacing() {
                continue;
            }
            let r = rng.random_range(4.0 * g.spacing()..0.4);
            let s = rng.random_range(g.spacing()..0.5 * r);
            let eps = 1e-3 * f.range();
            match chain_estimate_check(&f, x, y, r, s, alpha, &ladder, eps) {
                Ok(c) => {
                    maxes[0] = maxes[0].max(c.radius_change.ratio());
                    maxes[1] = maxes[1].max(c.representative_gap.ratio());
                    maxes[2] = maxes[2].max(c.center_change.ratio());
                    done += 1;
                }
                Err(Error::PreconditionViolated(_)) => continue,
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        maxes
    }

    #[test]
    #[ignore = "calibration probe; prints held-out suite maxima per dimension"]
    fn calibration_probe_for_chain_constants() {
        for dim in 1..=3 {
            let maxes = chain_suite_ratios(dim, 4001, 200);
            println!("dim {dim} held-out chain ratio maxima: {maxes:?}");
        }
    }

    #[test]
    fn modulus_of_linear_field_is_its_slope() {
        let g = Grid::cube(1, -1.0, 1.0, 257).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| -2.5 * x[0]);
        let ladder = short_ladder(&g, 16.0 * g.spacing());
        let rep = precise_representative(&f, &ladder, 1e-3 * f.range()).unwrap();
        let m = lipschitz_modulus(&rep, &RegionMask::full(g), 2000, 7).unwrap();
        assert!((m - 2.5).abs() < 1e-10, "modulus {m}");
    }

    #[test]
    fn modulus_needs_two_usable_nodes() {
        let g = Grid::cube(1, 0.0, 1.0, 65).unwrap();
        let f = ScalarField::constant(g.clone(), 1.0);
        let ladder = short_ladder(&g, 16.0 * g.spacing());
        let rep = precise_representative(&f, &ladder, 1e-3).unwrap();
        let mut lonely = RegionMask::empty(g);
        lonely.set(10, true);
        assert!(matches!(
            lipschitz_modulus(&rep, &lonely, 100, 0),
            Err(Error::InsufficientNodes { needed: 2 })
        ));
    }

    #[test]
    fn cutoff_is_one_inside_zero_outside_and_c2_smooth() {
        let g = Grid::cube(1, -1.0, 1.0, 513).unwrap();
        let inner = BoxRegion::new(vec![-0.4], vec![0.4]).unwrap();
        let outer = BoxRegion::new(vec![-0.8], vec![0.8]).unwrap();
        let z = cutoff_field(&g, &inner, &outer).unwrap();
        assert_eq!(z.values()[g.nearest_node(&[0.0]).unwrap()], 1.0);
        assert_eq!(z.values()[g.nearest_node(&[0.3]).unwrap()], 1.0);
        assert_eq!(z.values()[g.nearest_node(&[0.9]).unwrap()], 0.0);
        // Second difference stays bounded through the ramp ends.
        let h = g.spacing();
        let v = z.values();
        let mut max_dd = 0.0f64;
        for i in 1..v.len() - 1 {
            max_dd = max_dd.max((v[i + 1] - 2.0 * v[i] + v[i - 1]).abs() / (h * h));
        }
        // Quintic ramp of width 0.4 has curvature bounded near 5.8 / 0.16.
        assert!(max_dd < 60.0, "max second difference {max_dd}");
        assert!(cutoff_field(&g, &outer, &inner).is_err());
    }

    #[test]
    fn power_of_two_rounding() {
        assert_eq!(smallest_power_of_two_at_least(4.0), 4.0);
        assert_eq!(smallest_power_of_two_at_least(4.1), 8.0);
        assert_eq!(smallest_power_of_two_at_least(0.3), 0.5);
        assert_eq!(smallest_power_of_two_at_least(0.0), 1.0);
    }

    fn exhaustion_boxes_1d(levels: usize) -> Vec<BoxRegion> {
        // Nested intervals growing toward, then past, the box ends.
        (0..=levels)
            .map(|i| {
                let half = 0.5 + 0.6 * i as f64 / levels as f64;
                BoxRegion::new(vec![-half], vec![half]).unwrap()
            })
            .collect()
    }

    #[test]
    fn calm_field_is_covered_by_the_first_piece() {
        let g = Grid::cube(1, -1.0, 1.0, 257).unwrap();
        let f = synth::bump(&g, &[0.0], 0.9).unwrap();
        let config = ExhaustionConfig {
            boxes: exhaustion_boxes_1d(3),
            k: 1,
            p: 2.0,
            alpha_cap: 1e6,
            ladder_ratio: RadiusLadder::default_ratio(),
            capacity_alpha: Some(0.4),
            capacity_opts: SolverOptions::default(),
        };
        let d = exhaustion(&f, &config).unwrap();
        let omega1 = config.boxes[0].mask(&g).unwrap();
        assert!(omega1.is_subset_of(&d.pieces[0]).unwrap());
        for w in d.pieces.windows(2) {
            assert!(w[0].is_subset_of(&w[1]).unwrap());
        }
        for piece in &d.pieces {
            assert_eq!(piece.intersect(&d.residual).unwrap().count(), 0);
        }
    }

    #[test]
    fn exhaustion_validates_inputs() {
        let g = Grid::cube(1, -1.0, 1.0, 65).unwrap();
        let f = ScalarField::constant(g, 1.0);
        let good_boxes = exhaustion_boxes_1d(2);
        let base = ExhaustionConfig {
            boxes: good_boxes.clone(),
            k: 1,
            p: 1.0,
            alpha_cap: 1e6,
            ladder_ratio: RadiusLadder::default_ratio(),
            capacity_alpha: Some(0.5),
            capacity_opts: SolverOptions::default(),
        };
        let mut no_alpha = base.clone();
        no_alpha.capacity_alpha = None;
        assert!(matches!(exhaustion(&f, &no_alpha), Err(Error::InvalidParameter(_))));
        let mut single = base.clone();
        single.boxes = good_boxes[..1].to_vec();
        assert!(exhaustion(&f, &single).is_err());
        let mut reversed = base.clone();
        reversed.boxes.reverse();
        assert!(exhaustion(&f, &reversed).is_err());
        let mut many = base.clone();
        many.boxes = exhaustion_boxes_1d(7);
        assert!(exhaustion(&f, &many).is_err());
    }

    #[test]
    fn steep_field_hits_the_threshold_cap() {
        let g = Grid::cube(1, -1.0, 1.0, 513).unwrap();
        let f = synth::singular_map_1d(&g, 0.5, g.spacing()).unwrap();
        let config = ExhaustionConfig {
            boxes: exhaustion_boxes_1d(3),
            k: 1,
            p: 1.0,
            alpha_cap: 1.0,
            ladder_ratio: RadiusLadder::default_ratio(),
            capacity_alpha: Some(0.5),
            capacity_opts: SolverOptions::default(),
        };
        assert!(matches!(
            exhaustion(&f, &config),
            Err(Error::ThresholdUnachievable { level: 1, .. })
        ));
    }

    #[test]
    fn sharp_singularity_leaves_a_residual_that_shrinks_with_more_levels() {
        let g = Grid::cube(1, -1.0, 1.0, 4097).unwrap();
        let f = synth::singular_map_1d(&g, 0.5, 0.5 * g.spacing()).unwrap();
        let mut config = ExhaustionConfig {
            boxes: exhaustion_boxes_1d(3),
            k: 1,
            p: 1.0,
            alpha_cap: 1e9,
            ladder_ratio: RadiusLadder::default_ratio(),
            capacity_alpha: Some(0.5),
            capacity_opts: SolverOptions::default(),
        };
        let three = exhaustion(&f, &config).unwrap();
        config.boxes = exhaustion_boxes_1d(5);
        let five = exhaustion(&f, &config).unwrap();
        assert!(five.residual.is_subset_of(&three.residual).unwrap());
    }
}
