//! Riesz capacity as a discrete convex program: minimize the p-th power of
//! the Lp norm over nonnegative densities whose potential dominates 1 on a
//! target set. The solver is penalty-based projected descent with a final
//! feasibility rescaling, so every reported value is a certified upper
//! bound of the discrete optimum.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fft::{FftConvolver, WeightTable};
use crate::field::{Grid, RegionMask, ScalarField, MAX_DIM};
use crate::maximal::{maximal_function, sublevel_set, RadiusLadder};
use crate::riesz::{ConvMode, KernelSpec};

/// Target set, kernel, and exponent for one capacity estimate. The density
/// lives on a support grid that pads the target's grid box by half the box
/// side on every side; mass for the constraint concentrates near the
/// target, so the padding loss is a reported diagnostic, not a failure.
#[derive(Clone, Debug)]
pub struct CapacityProblem {
    target: RegionMask,
    spec: KernelSpec,
    p: f64,
}

/// Embed a mask into a grid padded by `frac` of the node span per side.
fn pad_mask(mask: &RegionMask, frac: f64) -> Result<RegionMask> {
    let g = mask.grid();
    let h = g.spacing();
    let mut shape = Vec::with_capacity(g.dim());
    let mut origin = Vec::with_capacity(g.dim());
    let mut extra = [0usize; MAX_DIM];
    for a in 0..g.dim() {
        let e = ((g.shape()[a] - 1) as f64 * frac).ceil() as usize;
        extra[a] = e;
        shape.push(g.shape()[a] + 2 * e);
        origin.push(g.origin()[a] - e as f64 * h);
    }
    let big = Grid::new(&shape, &origin, h)?;
    let mut flags = vec![false; big.len()];
    for node in mask.nodes() {
        let mut mi = g.multi(node);
        for a in 0..g.dim() {
            mi[a] += extra[a];
        }
        flags[big.flat(mi)] = true;
    }
    RegionMask::new(big, flags)
}

impl CapacityProblem {
    /// Pad the target's grid by 50% per side and solve there.
    pub fn new(target: &RegionMask, alpha: f64, p: f64) -> Result<CapacityProblem> {
        CapacityProblem::with_padding(target, alpha, p, 0.5)
    }

    /// Pad the target's grid by the given fraction of the node span per
    /// side and solve there. Zero keeps the target's own grid.
    pub fn with_padding(
        target: &RegionMask,
        alpha: f64,
        p: f64,
        padding: f64,
    ) -> Result<CapacityProblem> {
        if !(padding >= 0.0 && padding.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "padding must be a nonnegative fraction, got {padding}"
            )));
        }
        CapacityProblem::with_support(pad_mask(target, padding)?, alpha, p)
    }

    /// Use the target's own grid as the candidate support. Callers that
    /// compare several sets should embed them in one shared grid first so
    /// all estimates search the same feasible family.
    pub fn with_support(target: RegionMask, alpha: f64, p: f64) -> Result<CapacityProblem> {
        let spec = KernelSpec::new(target.grid().dim(), alpha)?;
        if !(p >= 1.0) {
            return Err(Error::BadExponent(p));
        }
        let n = target.grid().dim() as f64;
        if alpha * p >= n {
            return Err(Error::InvalidParameter(format!(
                "capacity exponents need alpha * p < n, got {alpha} * {p} with n = {n}"
            )));
        }
        Ok(CapacityProblem { target, spec, p })
    }

    pub fn grid(&self) -> &Grid {
        self.target.grid()
    }

    pub fn target(&self) -> &RegionMask {
        &self.target
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// Penalty-solver knobs. The penalty weight grows on a fixed schedule until
/// the pre-rescale feasibility margin reaches `-margin_tol`; the final
/// rescaling then forces exact feasibility regardless.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolverOptions {
    pub mode: ConvMode,
    pub margin_tol: f64,
    pub max_outer: usize,
    pub inner_iters: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
}

impl Default for SolverOptions {
    fn default() -> SolverOptions {
        SolverOptions {
            mode: ConvMode::Auto,
            margin_tol: 1e-4,
            max_outer: 8,
            inner_iters: 120,
            initial_penalty: 16.0,
            penalty_growth: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CapacityEstimate {
    /// `||phi||_p^p` of the returned feasible density; an upper bound of
    /// the discrete optimum.
    pub value: f64,
    /// `min over the target of (potential - 1)`, recomputed by a fresh
    /// convolution of the rescaled density.
    pub feasibility_margin: f64,
    pub iterations: usize,
    pub converged: bool,
}

enum Engine {
    Direct(WeightTable),
    Fft(FftConvolver),
}

impl Engine {
    fn new(grid: &Grid, spec: &KernelSpec, mode: ConvMode) -> Engine {
        let h = grid.spacing();
        if mode.use_fft(grid.len()) {
            Engine::Fft(FftConvolver::new(grid, |d| spec.offset_weight(d, h)))
        } else {
            Engine::Direct(WeightTable::new(grid, |d| spec.offset_weight(d, h)))
        }
    }

    fn apply(&self, grid: &Grid, input: &[f64]) -> Vec<f64> {
        match self {
            Engine::Direct(t) => t.convolve_direct(grid, input),
            Engine::Fft(c) => c.apply(input),
        }
    }
}

fn power_sum(values: &[f64], p: f64) -> f64 {
    if p == 1.0 {
        values.iter().sum()
    } else if p == 2.0 {
        values.iter().map(|v| v * v).sum()
    } else {
        values.iter().map(|v| v.powf(p)).sum()
    }
}

fn power_grad(v: f64, p: f64) -> f64 {
    if p == 1.0 {
        1.0
    } else if p == 2.0 {
        2.0 * v
    } else {
        p * v.powf(p - 1.0)
    }
}

pub fn estimate_capacity(problem: &CapacityProblem, opts: &SolverOptions) -> Result<CapacityEstimate> {
    estimate_capacity_with_density(problem, opts).map(|(est, _)| est)
}

/// Run the penalty solver and also return the feasible density it found.
pub fn estimate_capacity_with_density(
    problem: &CapacityProblem,
    opts: &SolverOptions,
) -> Result<(CapacityEstimate, ScalarField)> {
    let grid = problem.grid();
    let e_nodes = problem.target.nodes();
    if e_nodes.is_empty() {
        let zero = ScalarField::constant(grid.clone(), 0.0);
        let est = CapacityEstimate {
            value: 0.0,
            feasibility_margin: 0.0,
            iterations: 0,
            converged: true,
        };
        return Ok((est, zero));
    }

    let engine = Engine::new(grid, &problem.spec, opts.mode);
    let hn = grid.cell_volume();
    let p = problem.p;
    let min_on = |pot: &[f64]| -> f64 {
        let mut m = f64::INFINITY;
        for &i in &e_nodes {
            m = m.min(pot[i]);
        }
        m
    };

    // Feasible start: constant multiple of the all-ones density. Every
    // kernel weight is positive, so the base potential is positive on E.
    let ones_pot = engine.apply(grid, &vec![1.0; grid.len()]);
    let base = min_on(&ones_pot);
    let start = 1.0 / base;
    let mut phi = vec![start; grid.len()];
    let mut pot: Vec<f64> = ones_pot.iter().map(|v| v / base).collect();

    let penalty_sum = |pot: &[f64]| -> f64 {
        let mut s = 0.0;
        for &i in &e_nodes {
            let r = 1.0 - pot[i];
            if r > 0.0 {
                s += r * r;
            }
        }
        s
    };

    let mut mu = opts.initial_penalty;
    let mut iterations = 0usize;
    let mut converged = false;
    let mut step = start.powf(2.0 - p) / (p * hn);

    for _round in 0..opts.max_outer {
        let mut objective = power_sum(&phi, p) * hn + mu * penalty_sum(&pot) * hn;
        let mut stall = 0usize;
        for _ in 0..opts.inner_iters {
            let mut residual = vec![0.0; grid.len()];
            for &i in &e_nodes {
                let r = 1.0 - pot[i];
                if r > 0.0 {
                    residual[i] = r;
                }
            }
            let kres = engine.apply(grid, &residual);
            let grad: Vec<f64> = phi
                .iter()
                .zip(&kres)
                .map(|(v, k)| hn * (power_grad(*v, p) - 2.0 * mu * k))
                .collect();

            let mut t = step * 2.0;
            let mut accepted = false;
            for _trial in 0..40 {
                let cand: Vec<f64> =
                    phi.iter().zip(&grad).map(|(v, g)| (v - t * g).max(0.0)).collect();
                let moved: f64 = grad
                    .iter()
                    .zip(phi.iter().zip(&cand))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum();
                if moved <= 0.0 {
                    break;
                }
                let cand_pot = engine.apply(grid, &cand);
                let cand_obj = power_sum(&cand, p) * hn + mu * penalty_sum(&cand_pot) * hn;
                if cand_obj <= objective - 1e-4 * moved {
                    let drop = objective - cand_obj;
                    if drop <= 1e-12 * objective.abs().max(1e-300) {
                        stall += 1;
                    } else {
                        stall = 0;
                    }
                    phi = cand;
                    pot = cand_pot;
                    objective = cand_obj;
                    step = t;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            iterations += 1;
            if !accepted || stall >= 3 {
                break;
            }
        }
        if min_on(&pot) - 1.0 >= -opts.margin_tol {
            converged = true;
            break;
        }
        mu *= opts.penalty_growth;
    }

    let mut scale = min_on(&pot);
    if !(scale > 0.0) {
        // Descent collapsed the density entirely; fall back to the scaled
        // all-ones start, which is feasible by construction.
        phi = vec![start; grid.len()];
        scale = 1.0;
        converged = false;
    }
    for v in &mut phi {
        *v /= scale;
    }
    let final_pot = engine.apply(grid, &phi);
    let margin = min_on(&final_pot) - 1.0;
    let value = power_sum(&phi, p) * hn;
    let density = ScalarField::new(grid.clone(), phi)?;
    let est = CapacityEstimate { value, feasibility_margin: margin, iterations, converged };
    Ok((est, density))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WeakTypeRow {
    pub lambda: f64,
    /// Node count of the superlevel set `{Mf > lambda}`.
    pub set_nodes: usize,
    pub capacity: f64,
    /// `lambda^p * capacity`; bounded above when the weak-type decay holds.
    pub product: f64,
}

/// Capacity of the maximal-function superlevel sets `{Mf > lambda}` with
/// the kernel order equal to `k`, one row per threshold.
pub fn weak_type_table(
    f: &ScalarField,
    k: usize,
    p: f64,
    lambdas: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<WeakTypeRow>> {
    if k == 0 {
        return Err(Error::InvalidParameter("kernel order k must be at least 1".into()));
    }
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("need at least one threshold".into()));
    }
    for l in lambdas {
        if !(*l > 0.0) {
            return Err(Error::InvalidParameter(format!("thresholds must be positive, got {l}")));
        }
    }
    let ladder = RadiusLadder::geometric(f.grid(), RadiusLadder::default_ratio())?;
    let mf = maximal_function(f, &ladder)?;
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let set = sublevel_set(&mf, lambda).complement();
        let set_nodes = set.count();
        let capacity = if set_nodes == 0 {
            0.0
        } else {
            let problem = CapacityProblem::new(&set, k as f64, p)?;
            estimate_capacity(&problem, opts)?.value
        };
        rows.push(WeakTypeRow { lambda, set_nodes, capacity, product: lambda.powf(p) * capacity });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct SubadditivityReport {
    pub whole: CapacityEstimate,
    pub parts: Vec<CapacityEstimate>,
    /// Sum of the part values; countable subadditivity predicts
    /// `whole.value <= parts_total` up to solver tolerance.
    pub parts_total: f64,
    /// Feasibility margin on the whole target of the nodewise supremum of
    /// the part densities. The supremum construction is feasible whenever
    /// the parts cover the whole, so this should sit at or above zero.
    pub sup_margin: f64,
}

/// Estimate the whole set and each part of a cover on one shared support
/// grid, and check the supremum-density combination.
pub fn subadditivity_check(
    whole: &RegionMask,
    parts: &[RegionMask],
    alpha: f64,
    p: f64,
    opts: &SolverOptions,
) -> Result<SubadditivityReport> {
    if parts.is_empty() {
        return Err(Error::InvalidParameter("cover needs at least one part".into()));
    }
    for part in parts {
        if part.grid() != whole.grid() {
            return Err(Error::GridMismatch);
        }
    }
    let missing = whole
        .nodes()
        .into_iter()
        .filter(|node| !parts.iter().any(|part| part.contains(*node)))
        .count();
    if missing > 0 {
        return Err(Error::CoverViolation { missing });
    }

    let whole_problem = CapacityProblem::new(whole, alpha, p)?;
    let (whole_est, _) = estimate_capacity_with_density(&whole_problem, opts)?;

    let support = whole_problem.grid();
    let mut part_ests = Vec::with_capacity(parts.len());
    let mut sup_density = vec![0.0; support.len()];
    for part in parts {
        let problem = CapacityProblem::new(part, alpha, p)?;
        debug_assert_eq!(problem.grid(), support);
        let (est, density) = estimate_capacity_with_density(&problem, opts)?;
        for (s, v) in sup_density.iter_mut().zip(density.values()) {
            *s = f64::max(*s, *v);
        }
        part_ests.push(est);
    }

    let engine = Engine::new(support, whole_problem.spec(), opts.mode);
    let sup_pot = engine.apply(support, &sup_density);
    let mut sup_margin = f64::INFINITY;
    for node in whole_problem.target().nodes() {
        sup_margin = sup_margin.min(sup_pot[node] - 1.0);
    }

    let parts_total = part_ests.iter().map(|e| e.value).sum();
    Ok(SubadditivityReport { whole: whole_est, parts: part_ests, parts_total, sup_margin })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MeasureCapacityCheck {
    /// Lebesgue measure of the target, `count * h^n`.
    pub measure: f64,
    /// The comparison exponent `(n - alpha p) / n`; for p > 1 this equals
    /// `p / p*` with the critical exponent `p* = n p / (n - alpha p)`.
    pub exponent: f64,
    /// `measure^exponent`, the quantity capacity dominates up to a constant.
    pub measure_power: f64,
    /// Critical exponent, reported for p > 1 only.
    pub p_star: Option<f64>,
    pub capacity: CapacityEstimate,
}

/// Measure-versus-capacity comparison: the measure power that capacity
/// dominates, alongside the capacity estimate itself.
pub fn measure_capacity_check(
    target: &RegionMask,
    alpha: f64,
    p: f64,
    opts: &SolverOptions,
) -> Result<MeasureCapacityCheck> {
    let problem = CapacityProblem::new(target, alpha, p)?;
    let capacity = estimate_capacity(&problem, opts)?;
    let n = target.grid().dim() as f64;
    let exponent = (n - alpha * p) / n;
    let measure = target.measure();
    let measure_power = if measure == 0.0 { 0.0 } else { measure.powf(exponent) };
    let p_star = if p > 1.0 { Some(n * p / (n - alpha * p)) } else { None };
    Ok(MeasureCapacityCheck { measure, exponent, measure_power, p_star, capacity })
}
