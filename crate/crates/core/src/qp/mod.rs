//! Small dense convex-QP engine and exact projections used by the agent
//! best responses.

mod projection;
mod solver;

pub use projection::{project_box, project_box_budget};
pub use solver::{probe_psd, solve_qp, solve_qp_warm, QpProblem, QpSettings, QpSolution, QpStatus};
