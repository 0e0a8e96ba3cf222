//! Multi-step spectral sparse-grid solver for coupled forward-backward
//! stochastic differential equations.
//!
//! The backward sweep approximates `(Y, Z)` on nested Chebyshev-Gauss-Lobatto
//! sparse grids at every time level. Conditional expectations are evaluated
//! with a sparse Gauss-Hermite rule applied to hierarchical Chebyshev
//! interpolants of the future levels, and the forward-backward coupling is
//! resolved pointwise by Picard iteration.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod basis1d;
pub mod error;
pub mod experiment;
pub mod index;
pub mod multistep;
pub mod problems;
pub mod sparse_interp;
pub mod sparse_quad;

pub use error::{Error, Result};
pub use experiment::{run_experiment, ConvergenceRow, ExperimentResult, ExperimentSpec};
pub use index::BasisIndexSet;
pub use multistep::{measure_errors, solve, ErrorNorm, Solution, SolutionLevel, SolverConfig};
pub use problems::{problem_by_name, DomainSpec, FbsdeProblem, FnProblem};
pub use sparse_interp::{build_grid, fast_transform, DomainBox, SparseGrid, SparseInterpolant};
pub use sparse_quad::{build_gh_rule, conditional_expectation, ExpectationPair, GhSparseRule};
