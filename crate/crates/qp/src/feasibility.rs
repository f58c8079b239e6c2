//! Phase-1 feasibility probe.

use crate::csr::{CsrMatrix, TripletBuilder};
use crate::problem::{QpError, QpProblem, QpSettings};
use crate::solver::solve_with;

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Total constraint violation `Σ max(0, aᵢx − bᵢ) + bound violations` at the witness.
    pub violation: f64,
    pub witness: Vec<f64>,
}

/// Minimizes the total violation of `A x ≤ b, lb ≤ x ≤ ub` and reports
/// whether it reaches zero within `tol`.
///
/// Every constraint, bounds included, receives its own nonnegative slack,
/// so even crossed bounds (`lb > ub`) yield a finite violation measure.
pub fn check_feasible(a: &CsrMatrix, b: &[f64], lb: &[f64], ub: &[f64], tol: f64) -> Result<Feasibility, QpError> {
    let n = a.ncols();
    if a.nrows() != b.len() || lb.len() != n || ub.len() != n {
        return Err(QpError::DimensionMismatch(format!(
            "A is {}x{}, b has {}, bounds {}/{}",
            a.nrows(),
            a.ncols(),
            b.len(),
            lb.len(),
            ub.len()
        )));
    }
    if b.iter().chain(lb).chain(ub).any(|v| v.is_nan()) {
        return Err(QpError::NonFinite("feasibility data"));
    }

    // Rows: original rows, then finite upper bounds, then finite lower bounds.
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for i in 0..a.nrows() {
        if b[i] == f64::INFINITY {
            continue;
        }
        let (cols, vals) = a.row(i);
        rows.push((cols.iter().copied().zip(vals.iter().copied()).collect(), b[i]));
    }
    for j in 0..n {
        if ub[j] < f64::INFINITY {
            rows.push((vec![(j, 1.0)], ub[j]));
        }
        if lb[j] > f64::NEG_INFINITY {
            rows.push((vec![(j, -1.0)], -lb[j]));
        }
    }
    let m = rows.len();
    let nv = n + m;
    let mut tb = TripletBuilder::new(m, nv);
    let mut rhs = Vec::with_capacity(m);
    for (r, (entries, bound)) in rows.iter().enumerate() {
        for &(j, v) in entries {
            tb.push(r, j, v);
        }
        tb.push(r, n + r, -1.0);
        rhs.push(*bound);
    }
    let mut linear = vec![0.0; nv];
    linear[n..].iter_mut().for_each(|v| *v = 1.0);
    let mut lower = vec![f64::NEG_INFINITY; nv];
    lower[n..].iter_mut().for_each(|v| *v = 0.0);
    let upper = vec![f64::INFINITY; nv];
    let problem = QpProblem::new(CsrMatrix::zeros(nv, nv), linear)
        .with_inequalities(tb.build(), rhs)
        .with_bounds(lower, upper);
    let settings = QpSettings {
        tol: tol.min(1e-6),
        max_iter: 50_000,
        ..QpSettings::default()
    };
    let result = solve_with(&problem, settings)?;
    let witness = result.x[..n].to_vec();
    let violation = total_violation(a, b, lb, ub, &witness);
    Ok(Feasibility {
        feasible: violation <= tol,
        violation,
        witness,
    })
}

fn total_violation(a: &CsrMatrix, b: &[f64], lb: &[f64], ub: &[f64], x: &[f64]) -> f64 {
    let ax = a.mul(x);
    let rows: f64 = ax.iter().zip(b).map(|(v, bi)| (v - bi).max(0.0)).sum();
    let bounds: f64 = x
        .iter()
        .zip(lb.iter().zip(ub))
        .map(|(&v, (&lo, &hi))| (lo - v).max(0.0) + (v - hi).max(0.0))
        .sum();
    rows + bounds
}
