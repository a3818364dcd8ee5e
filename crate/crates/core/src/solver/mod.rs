//! Finite-difference Dirichlet solver for `L_A` on ℍ¹ and the experiment harnesses
//! built on it.

mod assemble;
mod grid;
pub mod harness;
pub mod linsolve;

pub use assemble::{
    apply_operator, assemble, euclidean_coefficients, max_error, semi_lagrangian_reach, solve, solve_many, Assembled,
    BoundaryFn, DirichletProblem, DmpReport, Scheme, Solution, SolveOptions,
};
pub use grid::{Grid, MIN_INTERIOR};
pub use harness::{
    critical_density_check, epsilon_bar, epsilon_critical, harnack_ratio, harnack_scan, holder_estimate,
    test_function_w, CriticalDensityReport, CriticalEpsilon, HarnackReport, HolderFit,
};
