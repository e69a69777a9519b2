//! Synthetic fields and mappings used by experiments and tests: smooth
//! bumps, indicators, mollified power singularities, fold maps, and seeded
//! band-limited noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{BoxRegion, Grid, ScalarField, VectorField};

/// The identity mapping sampled on the grid.
pub fn identity_map(grid: &Grid) -> VectorField {
    VectorField::from_fn(grid.clone(), grid.dim(), |x, a| x[a])
}

/// Linear map `x -> M x` with `matrix` given row-major, `dim x dim`.
pub fn linear_map(grid: &Grid, matrix: &[f64]) -> Result<VectorField> {
    let n = grid.dim();
    if matrix.len() != n * n {
        return Err(Error::LengthMismatch { expected: n * n, got: matrix.len() });
    }
    Ok(VectorField::from_fn(grid.clone(), n, |x, a| {
        (0..n).map(|b| matrix[a * n + b] * x[b]).sum()
    }))
}

/// The line fold `x -> x^2`. Every positive image value inside the folded
/// interval has exactly two preimages.
pub fn fold1d(grid: &Grid) -> Result<VectorField> {
    if grid.dim() != 1 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    Ok(VectorField::from_fn(grid.clone(), 1, |x, _| x[0] * x[0]))
}

/// The planar fold `(x, y) -> (x^2, y)`. Every image point with positive
/// first coordinate inside the folded box has exactly two preimages.
pub fn fold2d(grid: &Grid) -> Result<VectorField> {
    if grid.dim() != 2 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    Ok(VectorField::from_fn(grid.clone(), 2, |x, a| if a == 0 { x[0] * x[0] } else { x[1] }))
}

/// Solve a 3x3 linear system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|i, j| a[*i][col].abs().partial_cmp(&a[*j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let t = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= t * a[col][k];
            }
            b[row] -= t * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

fn check_power_profile(gamma: f64, scale: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "power exponent must lie in (0, 1), got {gamma}"
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("mollification scale must be positive, got {scale}")));
    }
    Ok(2.0 * scale)
}

/// Radial profile `|x|^gamma` about the coordinate origin, replaced inside
/// radius `2 * scale` by the even quartic `a + b r^2 + c r^4` matched to
/// value, slope, and curvature at the seam. The result is C^2 everywhere
/// with the gradient blow-up capped near the origin.
pub fn singular_profile(grid: &Grid, gamma: f64, scale: f64) -> Result<ScalarField> {
    let r1 = check_power_profile(gamma, scale)?;
    let s = r1;
    let coef = solve3(
        [
            [1.0, s * s, s.powi(4)],
            [0.0, 2.0 * s, 4.0 * s.powi(3)],
            [0.0, 2.0, 12.0 * s * s],
        ],
        [
            s.powf(gamma),
            gamma * s.powf(gamma - 1.0),
            gamma * (gamma - 1.0) * s.powf(gamma - 2.0),
        ],
    );
    Ok(ScalarField::from_fn(grid.clone(), |x| {
        let r = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        if r >= r1 {
            r.powf(gamma)
        } else {
            coef[0] + coef[1] * r * r + coef[2] * r.powi(4)
        }
    }))
}

/// Odd 1D map `sign(t) |t|^gamma`, replaced on `[-2 scale, 2 scale]` by the
/// odd quintic `b t + c t^3 + d t^5` matched to value, slope, and curvature
/// at the seam; C^2 on the whole line.
pub fn singular_map_1d(grid: &Grid, gamma: f64, scale: f64) -> Result<ScalarField> {
    if grid.dim() != 1 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    let r1 = check_power_profile(gamma, scale)?;
    let s = r1;
    let coef = solve3(
        [
            [s, s.powi(3), s.powi(5)],
            [1.0, 3.0 * s * s, 5.0 * s.powi(4)],
            [0.0, 6.0 * s, 20.0 * s.powi(3)],
        ],
        [
            s.powf(gamma),
            gamma * s.powf(gamma - 1.0),
            gamma * (gamma - 1.0) * s.powf(gamma - 2.0),
        ],
    );
    Ok(ScalarField::from_fn(grid.clone(), |x| {
        let t = x[0];
        let r = t.abs();
        if r >= r1 {
            t.signum() * r.powf(gamma)
        } else {
            coef[0] * t + coef[1] * t.powi(3) + coef[2] * t.powi(5)
        }
    }))
}

/// Smooth bump supported on the open ball `B(center, radius)`, equal to 1
/// at the center: `exp(1 - 1/(1 - t^2))` with `t = |x - center| / radius`.
pub fn bump(grid: &Grid, center: &[f64], radius: f64) -> Result<ScalarField> {
    if center.len() != grid.dim() {
        return Err(Error::LengthMismatch { expected: grid.dim(), got: center.len() });
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("bump radius must be positive, got {radius}")));
    }
    let c = center.to_vec();
    Ok(ScalarField::from_fn(grid.clone(), move |x| {
        let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
        let t2 = r2 / (radius * radius);
        if t2 < 1.0 {
            (1.0 - 1.0 / (1.0 - t2)).exp()
        } else {
            0.0
        }
    }))
}

/// Indicator of the closed ball `B(center, radius)`.
pub fn ball_indicator(grid: &Grid, center: &[f64], radius: f64) -> Result<ScalarField> {
    if center.len() != grid.dim() {
        return Err(Error::LengthMismatch { expected: grid.dim(), got: center.len() });
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("ball radius must be positive, got {radius}")));
    }
    let c = center.to_vec();
    Ok(ScalarField::from_fn(grid.clone(), move |x| {
        let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
        if r2.sqrt() <= radius {
            1.0
        } else {
            0.0
        }
    }))
}

/// Indicator of a closed axis-aligned box.
pub fn box_indicator(grid: &Grid, region: &BoxRegion) -> Result<ScalarField> {
    if region.dim() != grid.dim() {
        return Err(Error::UnsupportedDimension(region.dim()));
    }
    let region = region.clone();
    Ok(ScalarField::from_fn(grid.clone(), move |x| {
        if region.contains_point(x) {
            1.0
        } else {
            0.0
        }
    }))
}

/// `sign(sin(1 / |x|))` with value 0 at the origin: bounded, discontinuous
/// on a sequence of spheres accumulating at the origin. The origin is the
/// one point where no ball-average limit exists.
pub fn oscillatory(grid: &Grid) -> ScalarField {
    ScalarField::from_fn(grid.clone(), |x| {
        let r = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        if r == 0.0 {
            0.0
        } else {
            (1.0 / r).sin().signum()
        }
    })
}

/// Seeded band-limited field: a sum of `modes` cosine products with integer
/// wave numbers in `1..=4` per axis, random phases, and amplitudes damped
/// by `1 / (1 + |k|^2)`. Deterministic for a given seed and grid.
pub fn random_smooth(grid: &Grid, seed: u64, modes: usize) -> Result<ScalarField> {
    if modes == 0 {
        return Err(Error::InvalidParameter("need at least one mode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = grid.dim();
    let mut waves = Vec::with_capacity(modes);
    for _ in 0..modes {
        let k: Vec<f64> = (0..dim).map(|_| rng.random_range(1..=4) as f64).collect();
        let phase: Vec<f64> =
            (0..dim).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let k2: f64 = k.iter().map(|t| t * t).sum();
        let amp = rng.random_range(-1.0..1.0) / (1.0 + k2);
        waves.push((k, phase, amp));
    }
    let origin: Vec<f64> = (0..dim).map(|a| grid.origin()[a]).collect();
    let extent: Vec<f64> =
        (0..dim).map(|a| (grid.shape()[a] - 1) as f64 * grid.spacing()).collect();
    Ok(ScalarField::from_fn(grid.clone(), move |x| {
        let mut acc = 0.0;
        for (k, phase, amp) in &waves {
            let mut prod = *amp;
            for a in 0..x.len() {
                let t = (x[a] - origin[a]) / extent[a];
                prod *= (std::f64::consts::PI * k[a] * t + phase[a]).cos();
            }
            acc += prod;
        }
        acc
    }))
}
