//! Node calculus on uniform grids: ball averages, iterated difference
//! quotients, Lebesgue and Sobolev norms, and a Poincare-quotient probe.

use crate::error::{Error, Result};
use crate::field::{Grid, Idx, RegionMask, ScalarField, VectorField, MAX_DIM};

/// Highest total derivative order the stencils support.
pub const MAX_DERIVATIVE_ORDER: usize = 3;

/// Visit all grid nodes of the closed ball `B(center, r)` intersected with
/// the grid box, in ascending flat-index order. Membership uses the exact
/// integer lattice distance: `|d|^2 * h^2 <= r^2`.
pub(crate) fn for_ball_nodes(grid: &Grid, center: usize, r: f64, mut visit: impl FnMut(usize)) {
    let h = grid.spacing();
    let c = grid.multi(center);
    let dim = grid.dim();
    let shape = grid.shape_padded();
    let rad = (r / h).floor() as i64 + 1;
    let r2 = r * r;
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    for a in 0..dim {
        lo[a] = -rad.min(c[a] as i64);
        hi[a] = rad.min((shape[a] - 1 - c[a]) as i64);
    }
    let hh = h * h;
    for d0 in lo[0]..=hi[0] {
        for d1 in lo[1]..=hi[1] {
            for d2 in lo[2]..=hi[2] {
                let dd = (d0 * d0 + d1 * d1 + d2 * d2) as f64;
                if dd * hh <= r2 {
                    let idx: Idx = [
                        (c[0] as i64 + d0) as usize,
                        (c[1] as i64 + d1) as usize,
                        (c[2] as i64 + d2) as usize,
                    ];
                    visit(grid.flat(idx));
                }
            }
        }
    }
}

/// Sum and node count over the ball; `absolute` folds in `|.|`.
pub(crate) fn ball_stats(
    grid: &Grid,
    values: &[f64],
    center: usize,
    r: f64,
    absolute: bool,
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0usize;
    for_ball_nodes(grid, center, r, |node| {
        let v = values[node];
        sum += if absolute { v.abs() } else { v };
        count += 1;
    });
    (sum, count)
}

/// Count-weighted average of `f` over `B(center, r)` intersected with the
/// grid box. The center node always belongs to the ball, so the average is
/// defined whenever `r >= h`.
pub fn ball_average(f: &ScalarField, center: usize, r: f64) -> Result<f64> {
    let h = f.grid().spacing();
    if r < h {
        return Err(Error::DegenerateBall { radius: r, spacing: h });
    }
    let (sum, count) = ball_stats(f.grid(), f.values(), center, r, false);
    Ok(sum / count as f64)
}

fn derivative_axis(f: &ScalarField, axis: usize) -> ScalarField {
    let grid = f.grid();
    let shape = grid.shape_padded();
    let n = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let v = f.values();
    let inv2h = 1.0 / (2.0 * grid.spacing());
    let mut out = vec![0.0; v.len()];
    for (flat, slot) in out.iter_mut().enumerate() {
        let ia = grid.multi(flat)[axis];
        *slot = if ia == 0 {
            (-3.0 * v[flat] + 4.0 * v[flat + stride] - v[flat + 2 * stride]) * inv2h
        } else if ia == n - 1 {
            (3.0 * v[flat] - 4.0 * v[flat - stride] + v[flat - 2 * stride]) * inv2h
        } else {
            (v[flat + stride] - v[flat - stride]) * inv2h
        };
    }
    ScalarField::new(grid.clone(), out).expect("same length")
}

/// Iterated difference quotient `D^orders f`. Each application is a
/// second-order central stencil, with second-order one-sided stencils on the
/// two boundary layers; `orders[a]` applications run along axis `a`, axis 0
/// first. Exact on quadratics, boundary included.
pub fn derivative(f: &ScalarField, orders: &[usize]) -> Result<ScalarField> {
    let dim = f.grid().dim();
    if orders.len() != dim {
        return Err(Error::BadMultiIndex { expected: dim, got: orders.len() });
    }
    let total: usize = orders.iter().sum();
    if total > MAX_DERIVATIVE_ORDER {
        return Err(Error::OrderTooHigh { got: total, max: MAX_DERIVATIVE_ORDER });
    }
    let mut out = f.clone();
    for (axis, &k) in orders.iter().enumerate() {
        for _ in 0..k {
            out = derivative_axis(&out, axis);
        }
    }
    Ok(out)
}

/// All first partials as a vector field.
pub fn gradient(f: &ScalarField) -> VectorField {
    let dim = f.grid().dim();
    let parts: Vec<ScalarField> = (0..dim).map(|a| derivative_axis(f, a)).collect();
    VectorField::from_components(&parts).expect("components share the grid")
}

/// Multi-indices of length `dim` with total order exactly `j`, in
/// lexicographic order (first axis weighted heaviest first).
pub fn multi_indices(dim: usize, j: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, j: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if dim == 1 {
            prefix.push(j);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for head in (0..=j).rev() {
            prefix.push(head);
            rec(dim - 1, j - head, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, j, &mut Vec::new(), &mut out);
    out
}

/// Multi-indices with total order `0..=k`, grouped by ascending order.
pub fn multi_indices_up_to(dim: usize, k: usize) -> Vec<Vec<usize>> {
    (0..=k).flat_map(|j| multi_indices(dim, j)).collect()
}

/// `(sum_{mask} |f|^p h^n)^(1/p)` with the sum in flat index order.
pub fn lp_norm(f: &ScalarField, p: f64, mask: Option<&RegionMask>) -> Result<f64> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::BadExponent(p));
    }
    if let Some(m) = mask {
        if m.grid() != f.grid() {
            return Err(Error::GridMismatch);
        }
    }
    let mut sum = 0.0;
    for (i, v) in f.values().iter().enumerate() {
        if mask.map_or(true, |m| m.contains(i)) {
            sum += v.abs().powf(p);
        }
    }
    Ok((sum * f.grid().cell_volume()).powf(1.0 / p))
}

/// `( sum_{|a| <= k} ||D^a f||_p^p )^(1/p)` over the whole box.
pub fn sobolev_norm(f: &ScalarField, k: usize, p: f64) -> Result<f64> {
    if k > MAX_DERIVATIVE_ORDER {
        return Err(Error::OrderTooHigh { got: k, max: MAX_DERIVATIVE_ORDER });
    }
    let mut sum = 0.0;
    for alpha in multi_indices_up_to(f.grid().dim(), k) {
        let d = derivative(f, &alpha)?;
        sum += lp_norm(&d, p, None)?.powf(p);
    }
    Ok(sum.powf(1.0 / p))
}

#[derive(Clone, Copy, Debug)]
pub struct PoincareCheck {
    /// Mean oscillation: average of `|f - f_B|` over the ball.
    pub lhs: f64,
    /// `r` times the ball average of `|grad f|`; the inequality reads
    /// `lhs <= C(n) * rhs_unit`.
    pub rhs_unit: f64,
}

/// Evaluate both sides of the ball Poincare inequality at one node.
pub fn poincare_check(f: &ScalarField, center: usize, r: f64) -> Result<PoincareCheck> {
    let grid = f.grid();
    let mean = ball_average(f, center, r)?;
    let mut osc = 0.0;
    let mut count = 0usize;
    for_ball_nodes(grid, center, r, |node| {
        osc += (f.values()[node] - mean).abs();
        count += 1;
    });
    let lhs = osc / count as f64;

    let grad = gradient(f);
    let mut gsum = 0.0;
    for_ball_nodes(grid, center, r, |node| {
        let mut s = 0.0;
        for c in 0..grad.components() {
            let g = grad.value(node, c);
            s += g * g;
        }
        gsum += s.sqrt();
    });
    let rhs_unit = r * gsum / count as f64;
    Ok(PoincareCheck { lhs, rhs_unit })
}
