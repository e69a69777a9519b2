//! Discrete Hardy-Littlewood maximal function over a geometric radius
//! ladder, plus the sublevel-set machinery built on it.

use rayon::prelude::*;

use crate::calculus::ball_stats;
use crate::error::{Error, Result};
use crate::field::{Grid, RegionMask, ScalarField, VectorField};

/// Finite set of ball radii, strictly increasing, first entry at least the
/// grid spacing it was built for. The maximal function takes its sup over
/// exactly these radii.
#[derive(Clone, Debug, PartialEq)]
pub struct RadiusLadder {
    radii: Vec<f64>,
}

impl RadiusLadder {
    /// Default geometric ratio, `2^(1/4)`.
    pub fn default_ratio() -> f64 {
        2f64.powf(0.25)
    }

    /// Geometric ladder `h, h*rho, h*rho^2, ...` stopping at the first
    /// radius that reaches the diameter of the grid box.
    pub fn geometric(grid: &Grid, rho: f64) -> Result<RadiusLadder> {
        Self::geometric_up_to(grid, rho, grid.diameter())
    }

    /// Geometric ladder from the grid spacing up to (and including one rung
    /// at or above) `r_max`.
    pub fn geometric_up_to(grid: &Grid, rho: f64, r_max: f64) -> Result<RadiusLadder> {
        if !(rho > 1.0 && rho <= 2.0) {
            return Err(Error::BadLadder(format!("ratio {rho} outside (1, 2]")));
        }
        let h = grid.spacing();
        if !(r_max >= h) {
            return Err(Error::BadLadder(format!(
                "top radius {r_max} below grid spacing {h}"
            )));
        }
        let mut radii = vec![h];
        let mut r = h;
        while r < r_max {
            r *= rho;
            radii.push(r);
        }
        Ok(RadiusLadder { radii })
    }

    /// Insert the geometric midpoint between consecutive rungs. Original
    /// radii are kept bitwise, so sups over the refined ladder can only
    /// grow.
    pub fn refine(&self) -> RadiusLadder {
        let mut radii = Vec::with_capacity(self.radii.len() * 2);
        for w in self.radii.windows(2) {
            radii.push(w[0]);
            radii.push((w[0] * w[1]).sqrt());
        }
        radii.push(*self.radii.last().expect("ladder is never empty"));
        RadiusLadder { radii }
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn min_radius(&self) -> f64 {
        self.radii[0]
    }

    pub fn max_radius(&self) -> f64 {
        *self.radii.last().expect("ladder is never empty")
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    fn check_against(&self, grid: &Grid) -> Result<()> {
        if self.radii[0] < grid.spacing() {
            return Err(Error::BadLadder(format!(
                "smallest rung {} is below the grid spacing {}",
                self.radii[0],
                grid.spacing()
            )));
        }
        if !self.radii.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::BadLadder("radii are not strictly increasing".into()));
        }
        Ok(())
    }
}

/// `Mf(x) = max over ladder radii of the ball average of |f|`, balls
/// truncated at the box boundary. Nodes are independent, so the result does
/// not depend on the number of worker threads.
pub fn maximal_function(f: &ScalarField, ladder: &RadiusLadder) -> Result<ScalarField> {
    ladder.check_against(f.grid())?;
    let grid = f.grid();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|node| maximal_value(grid, f.values(), ladder, node))
        .collect();
    ScalarField::new(grid.clone(), values)
}

/// Maximal value at a single node; same sums as [`maximal_function`].
pub fn maximal_at(f: &ScalarField, ladder: &RadiusLadder, node: usize) -> Result<f64> {
    ladder.check_against(f.grid())?;
    Ok(maximal_value(f.grid(), f.values(), ladder, node))
}

fn maximal_value(grid: &Grid, values: &[f64], ladder: &RadiusLadder, node: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for &r in ladder.radii() {
        let (sum, count) = ball_stats(grid, values, node, r, true);
        best = best.max(sum / count as f64);
    }
    best
}

/// Euclidean magnitude of a vector field, nodewise.
pub fn vector_magnitude(f: &VectorField) -> ScalarField {
    let m = f.components();
    let values = (0..f.grid().len())
        .map(|node| {
            let mut s = 0.0;
            for c in 0..m {
                let v = f.value(node, c);
                s += v * v;
            }
            s.sqrt()
        })
        .collect();
    ScalarField::new(f.grid().clone(), values).expect("same length")
}

/// `{ x : f(x) <= lambda }` as a mask.
pub fn sublevel_set(f: &ScalarField, lambda: f64) -> RegionMask {
    let flags = f.values().iter().map(|v| *v <= lambda).collect();
    RegionMask::new(f.grid().clone(), flags).expect("same length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::ball_average;
    use crate::field::Grid;

    #[test]
    fn ladder_requires_ratio_in_range() {
        let g = Grid::cube(1, 0.0, 1.0, 16).unwrap();
        assert!(RadiusLadder::geometric(&g, 1.0).is_err());
        assert!(RadiusLadder::geometric(&g, 2.5).is_err());
        assert!(RadiusLadder::geometric(&g, 2.0).is_ok());
    }

    #[test]
    fn ladder_spans_spacing_to_diameter() {
        let g = Grid::cube(2, 0.0, 1.0, 33).unwrap();
        let ladder = RadiusLadder::geometric(&g, RadiusLadder::default_ratio()).unwrap();
        assert_eq!(ladder.min_radius(), g.spacing());
        assert!(ladder.max_radius() >= g.diameter());
        assert!(ladder.radii().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn refine_keeps_original_radii_bitwise() {
        let g = Grid::cube(1, 0.0, 1.0, 64).unwrap();
        let ladder = RadiusLadder::geometric(&g, 2.0).unwrap();
        let fine = ladder.refine();
        assert_eq!(fine.len(), 2 * ladder.len() - 1);
        for r in ladder.radii() {
            assert!(fine.radii().contains(r));
        }
    }

    #[test]
    fn maximal_of_constant_is_constant() {
        let g = Grid::cube(2, 0.0, 1.0, 9).unwrap();
        let f = ScalarField::constant(g.clone(), -1.5);
        let ladder = RadiusLadder::geometric(&g, 2.0).unwrap();
        let m = maximal_function(&f, &ladder).unwrap();
        for v in m.values() {
            assert_eq!(*v, 1.5);
        }
    }

    #[test]
    fn maximal_dominates_smallest_ball_average() {
        let g = Grid::cube(2, -1.0, 1.0, 17).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| (5.0 * x[0]).sin() * (3.0 * x[1]).cos());
        let ladder = RadiusLadder::geometric(&g, RadiusLadder::default_ratio()).unwrap();
        let m = maximal_function(&f, &ladder).unwrap();
        let fa = f.abs();
        for node in 0..g.len() {
            let a = ball_average(&fa, node, ladder.min_radius()).unwrap();
            assert!(m.values()[node] >= a);
        }
    }

    #[test]
    fn maximal_is_monotone_in_the_field() {
        let g = Grid::cube(1, -1.0, 1.0, 65).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| (9.0 * x[0]).sin());
        let bigger = ScalarField::new(
            g.clone(),
            f.values().iter().map(|v| v.abs() + 0.25).collect(),
        )
        .unwrap();
        let ladder = RadiusLadder::geometric(&g, RadiusLadder::default_ratio()).unwrap();
        let mf = maximal_function(&f, &ladder).unwrap();
        let mg = maximal_function(&bigger, &ladder).unwrap();
        for (a, b) in mf.values().iter().zip(mg.values()) {
            assert!(a <= b);
        }
    }

    #[test]
    fn ladder_refinement_never_decreases() {
        let g = Grid::cube(1, -1.0, 1.0, 65).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| if x[0].abs() < 0.3 { 1.0 } else { 0.0 });
        let ladder = RadiusLadder::geometric(&g, 2.0).unwrap();
        let coarse = maximal_function(&f, &ladder).unwrap();
        let fine = maximal_function(&f, &ladder.refine()).unwrap();
        for (c, fv) in coarse.values().iter().zip(fine.values()) {
            assert!(fv >= c);
        }
    }

    #[test]
    fn unit_interval_indicator_at_distance_two() {
        // Box wide enough that the optimal ball is not clipped.
        let g = Grid::new(&[1537], &[-1.0], 6.0 / 1536.0).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| {
            if (0.0..=1.0).contains(&x[0]) {
                1.0
            } else {
                0.0
            }
        });
        let rho = RadiusLadder::default_ratio();
        let ladder = RadiusLadder::geometric(&g, rho).unwrap();
        let node = g.nearest_node(&[2.0]).unwrap();
        let v = maximal_at(&f, &ladder, node).unwrap();
        let tol = 2.0 * g.spacing() + (rho - 1.0) / 4.0;
        assert!((v - 0.25).abs() <= tol, "M = {v}, tol = {tol}");
    }

    #[test]
    fn sublevel_sets_nest_exactly() {
        let g = Grid::cube(2, -1.0, 1.0, 33).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| x[0].hypot(x[1]));
        let ladder = RadiusLadder::geometric(&g, RadiusLadder::default_ratio()).unwrap();
        let m = maximal_function(&f, &ladder).unwrap();
        let lambdas = [0.2, 0.5, 0.9, 1.3];
        let masks: Vec<_> = lambdas.iter().map(|l| sublevel_set(&m, *l)).collect();
        for w in masks.windows(2) {
            assert!(w[0].is_subset_of(&w[1]).unwrap());
        }
    }

    proptest::proptest! {
        #[test]
        fn maximal_function_is_monotone_under_domination(
            seed in 0u64..1_000_000,
            scale in 1.0f64..3.0,
        ) {
            // |f| <= |g| pointwise forces Mf <= Mg pointwise.
            let grid = Grid::cube(1, -1.0, 1.0, 65).unwrap();
            let f = crate::synth::random_smooth(&grid, seed, 3).unwrap();
            let dominating: Vec<f64> =
                f.values().iter().map(|v| scale * v.abs()).collect();
            let g = ScalarField::new(grid.clone(), dominating).unwrap();
            let ladder = RadiusLadder::geometric(&grid, RadiusLadder::default_ratio()).unwrap();
            let mf = maximal_function(&f, &ladder).unwrap();
            let mg = maximal_function(&g, &ladder).unwrap();
            for (a, b) in mf.values().iter().zip(mg.values()) {
                proptest::prop_assert!(*a <= b + 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn vector_reduction_bound() {
        let g = Grid::cube(2, -1.0, 1.0, 21).unwrap();
        let vf = VectorField::from_fn(g.clone(), 2, |x, c| {
            if c == 0 {
                (3.0 * x[0]).sin()
            } else {
                x[1] * x[1] - 0.5
            }
        });
        let ladder = RadiusLadder::geometric(&g, RadiusLadder::default_ratio()).unwrap();
        let m_mag = maximal_function(&vector_magnitude(&vf), &ladder).unwrap();
        let m0 = maximal_function(&vf.component(0), &ladder).unwrap();
        let m1 = maximal_function(&vf.component(1), &ladder).unwrap();
        for i in 0..g.len() {
            let lhs = m_mag.values()[i];
            let rhs = m0.values()[i] + m1.values()[i];
            assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
