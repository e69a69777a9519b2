//! Fixture builders shared by the benches.

use arealab::{synth, Grid, MappingProblem, RegionMask, ScalarField};

/// Centered bump on [-1, 1]^2 with the given nodes per side.
pub fn bump_field(nodes: usize) -> ScalarField {
    let g = Grid::cube(2, -1.0, 1.0, nodes).unwrap();
    synth::bump(&g, &[0.0, 0.0], 0.6).unwrap()
}

/// Centered ball mask on [-1, 1]^2.
pub fn ball_mask(nodes: usize, radius: f64) -> RegionMask {
    let g = Grid::cube(2, -1.0, 1.0, nodes).unwrap();
    RegionMask::from_fn(g, move |x| (x[0].powi(2) + x[1].powi(2)).sqrt() <= radius)
}

/// Unit-weight fold map (x^2, y) over the full box.
pub fn fold_problem(nodes: usize) -> MappingProblem {
    let g = Grid::cube(2, -1.0, 1.0, nodes).unwrap();
    MappingProblem::with_unit_weight(synth::fold2d(&g).unwrap()).unwrap()
}
