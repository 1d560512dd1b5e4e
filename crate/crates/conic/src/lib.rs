//! Desk-scale mixed-integer second-order cone programming.
//!
//! Programs are described with [`ConicProgram`]. [`solve_socp`] solves the
//! continuous relaxation with a homogeneous self-dual interior-point method;
//! [`branch_and_bound`] enforces integrality of the binaries.
//!
//! ```
//! use misocp::{branch_and_bound, ConicProgram, LinExpr, ObjectiveSense, Sense, SolveSettings, SolveStatus};
//!
//! // max x + y  s.t.  x + y ≤ 1.5,  x, y binary.
//! let mut p = ConicProgram::new("knap");
//! let x = p.add_binary("x");
//! let y = p.add_binary("y");
//! p.add_row("cap", "", LinExpr::var(x).term(y, 1.0), Sense::Le, 1.5);
//! p.objective.sense = ObjectiveSense::Maximize;
//! p.objective.linear = LinExpr::var(x).term(y, 1.0);
//! let report = branch_and_bound(&p, &SolveSettings::default()).unwrap();
//! assert_eq!(report.status, SolveStatus::Optimal);
//! assert!((report.objective.unwrap() - 1.0).abs() < 1e-6);
//! ```

mod bnb;
mod cone;
mod error;
mod ipm;
mod presolve;
mod program;
mod settings;
mod socp;

pub use bnb::branch_and_bound;
pub use error::ProgramError;
pub use program::{
    Cone, ConeConstraint, ConicProgram, LinExpr, Objective, ObjectiveSense, OneHotGroup, ProgramViolation, QuadRow, Row,
    Sense, VarId, Variable,
};
pub use settings::{relative_gap, BranchRule, SocpSolution, SocpStatus, SolveReport, SolveSettings, SolveStatus};
pub use socp::{solve_socp, solve_with_bounds};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/solver.md")]
mod solver_chapter {}
