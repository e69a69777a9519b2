//! Riesz kernels `I_a(x) = |x|^(a-n) / gamma(a)`, their lattice potentials,
//! and two identity checks for averaged integral estimates.

use serde::Serialize;

use crate::calculus::{ball_average, derivative, for_ball_nodes, gradient, multi_indices};
use crate::error::{Error, Result};
use crate::fft::{FftConvolver, WeightTable};
use crate::field::{RegionMask, ScalarField, MAX_DIM};

/// Volume of the unit ball in `R^dim`.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        _ => unreachable!("dimension checked at grid construction"),
    }
}

/// Riesz kernel of order `alpha` in dimension `dim`, with the classical
/// normalization `gamma(a) = pi^(n/2) 2^a Gamma(a/2) / Gamma((n-a)/2)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct KernelSpec {
    dim: usize,
    alpha: f64,
    gamma: f64,
}

impl KernelSpec {
    pub fn new(dim: usize, alpha: f64) -> Result<KernelSpec> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        if !(alpha > 0.0 && alpha < dim as f64) {
            return Err(Error::BadKernelOrder { alpha, dim });
        }
        let n = dim as f64;
        let gamma = std::f64::consts::PI.powf(n / 2.0) * 2f64.powf(alpha)
            * libm::tgamma(alpha / 2.0)
            / libm::tgamma((n - alpha) / 2.0);
        Ok(KernelSpec { dim, alpha, gamma })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The normalization constant `gamma(alpha)`.
    pub fn normalization(&self) -> f64 {
        self.gamma
    }

    /// `I_alpha` at distance `dist > 0`.
    pub fn kernel_value(&self, dist: f64) -> Result<f64> {
        if !(dist > 0.0) {
            return Err(Error::KernelSingularity);
        }
        Ok(dist.powf(self.alpha - self.dim as f64) / self.gamma)
    }

    /// Exact integral of `I_alpha` over the ball centered at the origin
    /// whose volume equals one grid cell `h^n`; used as the weight of the
    /// diagonal term in lattice convolutions.
    pub fn self_cell_weight(&self, h: f64) -> f64 {
        let n = self.dim as f64;
        let omega = unit_ball_volume(self.dim);
        let r_eq = h * omega.powf(-1.0 / n);
        n * omega * r_eq.powf(self.alpha) / (self.alpha * self.gamma)
    }

    /// Lattice convolution weight for an integer node offset.
    pub(crate) fn offset_weight(&self, d: &[i64; MAX_DIM], h: f64) -> f64 {
        let dd = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64;
        let hn = h.powi(self.dim as i32);
        if dd == 0.0 {
            self.self_cell_weight(h)
        } else {
            let dist = dd.sqrt() * h;
            dist.powf(self.alpha - self.dim as f64) / self.gamma * hn
        }
    }
}

/// Which convolution engine evaluates a potential.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConvMode {
    /// Quadratic-cost summation; the reference path.
    Direct,
    /// Zero-padded cyclic FFT; must agree with `Direct` to 1e-8 relative.
    Fft,
    /// `Direct` on small grids, `Fft` once the node count passes 4096.
    Auto,
}

impl ConvMode {
    pub(crate) fn use_fft(self, nodes: usize) -> bool {
        match self {
            ConvMode::Direct => false,
            ConvMode::Fft => true,
            ConvMode::Auto => nodes > 4096,
        }
    }
}

fn check_nonnegative(phi: &ScalarField) -> Result<()> {
    for (node, v) in phi.values().iter().enumerate() {
        if *v < 0.0 {
            return Err(Error::NegativeDensity { node });
        }
    }
    Ok(())
}

/// Discrete Riesz potential `(I_alpha * phi)(x) = sum_y w(x-y) phi(y)` with
/// `w` the cell-weighted kernel and the diagonal handled by
/// [`KernelSpec::self_cell_weight`].
pub fn riesz_potential(phi: &ScalarField, spec: &KernelSpec, mode: ConvMode) -> Result<ScalarField> {
    let grid = phi.grid();
    if spec.dim != grid.dim() {
        return Err(Error::UnsupportedDimension(spec.dim));
    }
    check_nonnegative(phi)?;
    let h = grid.spacing();
    let values = if mode.use_fft(grid.len()) {
        FftConvolver::new(grid, |d| spec.offset_weight(d, h)).apply(phi.values())
    } else {
        WeightTable::new(grid, |d| spec.offset_weight(d, h)).convolve_direct(grid, phi.values())
    };
    ScalarField::new(grid.clone(), values)
}

/// Potential at a single node by direct summation in flat index order.
pub fn riesz_potential_at(phi: &ScalarField, spec: &KernelSpec, node: usize) -> Result<f64> {
    let grid = phi.grid();
    if spec.dim != grid.dim() {
        return Err(Error::UnsupportedDimension(spec.dim));
    }
    check_nonnegative(phi)?;
    let h = grid.spacing();
    let xi = grid.multi(node);
    let shape = grid.shape_padded();
    let mut acc = 0.0;
    let mut y = 0usize;
    for y0 in 0..shape[0] {
        for y1 in 0..shape[1] {
            for y2 in 0..shape[2] {
                let d = [
                    xi[0] as i64 - y0 as i64,
                    xi[1] as i64 - y1 as i64,
                    xi[2] as i64 - y2 as i64,
                ];
                acc += spec.offset_weight(&d, h) * phi.values()[y];
                y += 1;
            }
        }
    }
    Ok(acc)
}

/// `g = sum over |a| = j of |D^a f|`, nodewise.
pub fn derivative_aggregate(f: &ScalarField, j: usize) -> Result<ScalarField> {
    let mut out = ScalarField::constant(f.grid().clone(), 0.0);
    for alpha in multi_indices(f.grid().dim(), j) {
        let d = derivative(f, &alpha)?;
        for (o, v) in out.values_mut().iter_mut().zip(d.values()) {
            *o += v.abs();
        }
    }
    Ok(out)
}

/// Nodes where the potential `I_(k-1) * g` of the order-(k-1) derivative
/// aggregate exceeds the threshold `t`; the grid stand-in for the set where
/// the potential diverges.
pub fn bad_point_mask(f: &ScalarField, k: usize, spec: &KernelSpec, t: f64) -> Result<RegionMask> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "bad-point mask needs k >= 2, got {k}"
        )));
    }
    let want = (k - 1) as f64;
    if (spec.alpha - want).abs() > 1e-12 {
        return Err(Error::PreconditionViolated(format!(
            "kernel order {} must equal k - 1 = {want}",
            spec.alpha
        )));
    }
    let g = derivative_aggregate(f, k - 1)?;
    let pot = riesz_potential(&g, spec, ConvMode::Auto)?;
    let flags = pot.values().iter().map(|v| *v > t).collect();
    RegionMask::new(f.grid().clone(), flags)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TelescopingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Both sides of the two-radius telescoping identity
/// `omega_n (f_B(x,r) - f_B(x,d))
///    = (1/n) [ d^-n int_{B(x,d)} grad f . (y-x)
///            - r^-n int_{B(x,r)} grad f . (y-x)
///            + int_{B(x,r) \ B(x,d)} |y-x|^-n grad f . (y-x) ]`,
/// obtained by integrating the radial derivative of the ball average from
/// `d` to `r` and swapping the order of integration. Both balls must fit
/// inside the box. Ball terms are evaluated as `omega_n` times
/// count-weighted node averages, which makes both sides vanish exactly
/// for constants; the annulus term is a plain `h^n`-weighted node sum.
pub fn telescoping_identity_check(
    f: &ScalarField,
    center: usize,
    r: f64,
    delta: f64,
) -> Result<TelescopingCheck> {
    let grid = f.grid();
    let h = grid.spacing();
    if !(delta >= h && delta < r) {
        return Err(Error::PreconditionViolated(format!(
            "need h <= delta < r, got h = {h}, delta = {delta}, r = {r}"
        )));
    }
    let x = grid.coord(center);
    for a in 0..grid.dim() {
        let lo = grid.origin()[a];
        let hi = lo + (grid.shape()[a] - 1) as f64 * h;
        if x[a] - r < lo || x[a] + r > hi {
            return Err(Error::PreconditionViolated(format!(
                "ball of radius {r} around node {center} leaves the box on axis {a}"
            )));
        }
    }
    let n = grid.dim() as f64;
    let omega = unit_ball_volume(grid.dim());

    let avg_r = ball_average(f, center, r)?;
    let avg_d = ball_average(f, center, delta)?;
    let lhs = omega * (avg_r - avg_d);

    let grad = gradient(f);
    let radial = |node: usize| -> f64 {
        let y = grid.coord(node);
        let mut s = 0.0;
        for a in 0..grid.dim() {
            s += grad.value(node, a) * (y[a] - x[a]);
        }
        s
    };

    let mean_radial = |rad: f64| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for_ball_nodes(grid, center, rad, |node| {
            sum += radial(node);
            count += 1;
        });
        sum / count as f64
    };
    let m_r = mean_radial(r);
    let m_d = mean_radial(delta);

    // Annulus delta < |y - x| <= r, h^n-weighted.
    let hn = grid.cell_volume();
    let d2 = delta * delta;
    let mut annulus = 0.0;
    for_ball_nodes(grid, center, r, |node| {
        let dist = grid.node_distance(center, node);
        if dist * dist > d2 {
            annulus += dist.powf(-n) * radial(node) * hn;
        }
    });

    let rhs = (omega * m_d - omega * m_r + annulus) / n;
    Ok(TelescopingCheck { lhs, rhs, residual: (lhs - rhs).abs() })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KernelDomination {
    pub lhs: f64,
    pub rhs_unit: f64,
}

/// `sum_y |y-x|^beta |g(y)| h^n` over the whole box, with the singular
/// diagonal replaced by the exact integral of `|.|^beta` over the
/// cell-volume-equivalent ball (requires `beta > -n`).
fn power_kernel_sum(g: &ScalarField, x: usize, beta: f64) -> f64 {
    let grid = g.grid();
    let h = grid.spacing();
    let hn = grid.cell_volume();
    let n = grid.dim() as f64;
    let omega = unit_ball_volume(grid.dim());
    let r_eq = h * omega.powf(-1.0 / n);
    let diag = n * omega * r_eq.powf(beta + n) / (beta + n);

    let mut acc = 0.0;
    for node in 0..grid.len() {
        let v = g.values()[node].abs();
        if node == x {
            acc += diag * v;
        } else {
            acc += grid.node_distance(x, node).powf(beta) * v * hn;
        }
    }
    acc
}

/// Kernel domination probe: `lhs = int |y-x|^(l-n) |f|` against
/// `rhs_unit = sum_{|a|=k} int |y-x|^(l-n+k) |D^a f|`; the estimate asserts
/// `lhs <= C * rhs_unit` for compactly supported `f`.
pub fn kernel_inequality_check(
    f: &ScalarField,
    k: usize,
    ell: f64,
    x: usize,
) -> Result<KernelDomination> {
    if !(ell > 0.0) {
        return Err(Error::InvalidParameter(format!("ell must be positive, got {ell}")));
    }
    if k == 0 || k > 3 {
        return Err(Error::OrderTooHigh { got: k, max: 3 });
    }
    let n = f.grid().dim() as f64;
    let lhs = power_kernel_sum(f, x, ell - n);
    let agg = derivative_aggregate(f, k)?;
    let rhs_unit = power_kernel_sum(&agg, x, ell - n + k as f64);
    Ok(KernelDomination { lhs, rhs_unit })
}
