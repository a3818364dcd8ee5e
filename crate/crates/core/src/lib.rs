//! Numerical toolkit for non-divergence operators `L_A = Σ aᵢⱼ XᵢXⱼ` built on the
//! Heisenberg vector fields: group calculus, symplectic coefficient classes,
//! barrier kernels, gauge-ball quadrature and a finite-difference Dirichlet solver
//! with Harnack, Hölder and critical-density harnesses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barriers;
pub mod coefficients;
pub mod error;
pub mod group;
pub mod quadrature;
pub mod solver;

pub use coefficients::{CoefficientField, CoefficientMatrix, ContinuityModulus, Region};
pub use error::{HeisError, Result};
pub use group::{DiffMode, GroupParams, HPoint, ScalarField};
pub use quadrature::{Estimate, QuadratureMethod, QuadratureSpec};
