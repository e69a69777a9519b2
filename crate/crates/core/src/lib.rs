//! Numerical laboratory for geometric measure theory experiments on uniform
//! grids: discrete area-formula verification with multiplicity counting,
//! Riesz potentials and variational capacity estimates, Hardy-Littlewood
//! maximal functions, and Lipschitz truncation decompositions.
//!
//! Everything operates on node-sampled fields over uniform boxes in
//! dimension 1, 2, or 3. Integrals are plain node sums weighted by the cell
//! volume `h^n`, accumulated in flat index order so that every result is
//! bitwise reproducible for a given input.

pub mod area;
pub mod calculus;
pub mod capacity;
pub mod error;
pub mod field;
mod fft;
pub mod io;
pub mod maximal;
pub mod riesz;
pub mod synth;
pub mod truncation;

pub use area::{
    jacobian, lhs_integral, multiplicity, rhs_integral, verify_area_formula, AreaFormulaReport,
    AreaOptions, ExhaustionMasks, MappingProblem, Multiplicity, RhsIntegral,
};
pub use calculus::{
    ball_average, derivative, gradient, lp_norm, multi_indices, multi_indices_up_to,
    poincare_check, sobolev_norm, PoincareCheck,
};
pub use capacity::{
    estimate_capacity, estimate_capacity_with_density, measure_capacity_check, subadditivity_check,
    weak_type_table, CapacityEstimate, CapacityProblem, MeasureCapacityCheck, SolverOptions,
    SubadditivityReport, WeakTypeRow,
};
pub use error::{Error, Result};
pub use field::{BoxRegion, Grid, RegionMask, ScalarField, VectorField, MAX_DIM};
pub use maximal::{maximal_at, maximal_function, sublevel_set, vector_magnitude, RadiusLadder};
pub use riesz::{
    bad_point_mask, derivative_aggregate, kernel_inequality_check, riesz_potential,
    riesz_potential_at, telescoping_identity_check, ConvMode, KernelDomination, KernelSpec,
    TelescopingCheck,
};
pub use truncation::{
    chain_constants, chain_estimate_check, cutoff_field, exhaustion, lipschitz_modulus,
    precise_representative, precise_representative_at, truncation_sets, ChainChecks,
    ChainEstimate, ExhaustionConfig, ExhaustionLevel, PreciseRepresentative,
    TruncationDecomposition,
};
