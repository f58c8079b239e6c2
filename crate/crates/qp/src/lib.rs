//! Convex quadratic programming by operator splitting (ADMM).
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ xᵀ Q x + fᵀ x
//! subject to  row_lower ≤ A x ≤ row_upper
//!             lower ≤ x ≤ upper
//! ```
//!
//! Each solve equilibrates the data, iterates with a cached banded
//! factorization, detects primal infeasibility from the dual step, and
//! polishes the answer by an equality-constrained solve on the detected
//! active set.
//!
//! ```
//! use chloros_qp::{solve, CsrMatrix, QpProblem, QpStatus};
//!
//! // min x² - 2x  →  x = 1
//! let p = QpProblem::new(CsrMatrix::diagonal(&[2.0]), vec![-2.0]);
//! let r = solve(&p, 1e-6, 20_000).unwrap();
//! assert_eq!(r.status, QpStatus::Optimal);
//! assert!((r.x[0] - 1.0).abs() < 1e-6);
//! ```

mod admm;
mod csr;
mod feasibility;
mod problem;
mod skyline;
mod solver;

pub use csr::{CsrMatrix, TripletBuilder};
pub use feasibility::{check_feasible, Feasibility};
pub use problem::{QpError, QpProblem, QpResult, QpSettings, QpStatus};
pub use solver::{solve, solve_with, QpSolver};
