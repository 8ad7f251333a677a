//! The only place that touches numerical optimisation engines: an LMI
//! container solved by an interior-point conic solver, and an LP
//! feasibility check with strict rows.

pub mod expr;
pub mod lmi;
pub mod lp;

pub use expr::{Affine, AffineMatrix};
pub use lmi::{
    solve_lmi, solve_lmi_with, LmiConstraint, LmiOutcome, LmiProblem, LmiSolution, MatrixVar, RowKind,
    SolveSettings,
};
pub use lp::{lp_feasible, LpOp, LpOutcome, LpProblem, LpRow};
