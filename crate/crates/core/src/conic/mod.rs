//! Conic programs: a linear objective over zero, nonnegative, second-order
//! and PSD cones, a solver contract, and an interior-point backend.
//!
//! Constraints are stated as affine expressions in the decision variables
//! that must lie in a cone. Strict matrix inequalities `M ≻ 0` are realized as
//! `M ⪰ ε·I` with [`STRICT_EPS`].

mod expr;
mod program;
mod solver;

pub use expr::{AffExpr, AffMat, Var};
pub use program::{Cone, ConicProgram, Constraint, ConstraintId, MatVar, SymMatVar};
pub use solver::{
    constraint_violation, max_residual, ClarabelSolver, ConicSolution, ConicSolver, SolveStatus, SolverSettings,
};

/// Margin used for every strict LMI.
pub const STRICT_EPS: f64 = 1e-6;

/// Solves with the default backend.
pub fn solve(program: &ConicProgram) -> ConicSolution {
    ClarabelSolver::default().solve(program)
}
