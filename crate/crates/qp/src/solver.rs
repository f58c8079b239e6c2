//! Block-decomposing front end.
//!
//! Variables coupled through off-diagonal `Q` entries or shared rows form a
//! connected block; each block is equilibrated and solved on its own. A
//! block whose data did not change since its last solve returns the stored
//! answer, so re-solving after a local bound change costs only that block.

use crate::admm::{Kernel, Outcome};
use crate::problem::{QpError, QpProblem, QpResult, QpSettings, QpStatus};

#[derive(Debug, Clone)]
struct Block {
    vars: Vec<usize>,
    rows: Vec<usize>,
    kernel: Kernel,
    /// Bitwise key of the last solved data: linear term, row bounds, var bounds.
    key: Option<Vec<u64>>,
    last: Option<Outcome>,
}

/// Reusable solver for one problem structure. Bounds and the linear term may
/// be changed between solves; the matrices may not.
#[derive(Debug, Clone)]
pub struct QpSolver {
    problem: QpProblem,
    settings: QpSettings,
    blocks: Vec<Block>,
    empty_rows: Vec<usize>,
    ridge: f64,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

fn gather(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

impl QpSolver {
    pub fn new(problem: &QpProblem, settings: QpSettings) -> Result<QpSolver, QpError> {
        problem.validate()?;
        let n = problem.num_vars();
        let m = problem.num_rows();
        let mut parent: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for &j in problem.quadratic.row(i).0 {
                union(&mut parent, i, j);
            }
        }
        let mut empty_rows = Vec::new();
        for r in 0..m {
            let cols = problem.constraints.row(r).0;
            match cols.first() {
                None => empty_rows.push(r),
                Some(&c0) => cols.iter().for_each(|&j| union(&mut parent, c0, j)),
            }
        }
        // Blocks are numbered by their smallest variable.
        let mut block_of = vec![usize::MAX; n];
        let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            if block_of[root] == usize::MAX {
                block_of[root] = groups.len();
                groups.push((Vec::new(), Vec::new()));
            }
            block_of[i] = block_of[root];
            groups[block_of[i]].0.push(i);
        }
        for r in 0..m {
            if let Some(&c0) = problem.constraints.row(r).0.first() {
                groups[block_of[c0]].1.push(r);
            }
        }

        let mut blocks = Vec::with_capacity(groups.len());
        let mut ridge = 0.0f64;
        for (vars, rows) in groups {
            let mut col_map = vec![usize::MAX; n];
            for (k, &v) in vars.iter().enumerate() {
                col_map[v] = k;
            }
            let q = problem.quadratic.select(&vars, &col_map, vars.len());
            let a = problem.constraints.select(&rows, &col_map, vars.len());
            let kernel = Kernel::new(
                &q,
                &gather(&problem.linear, &vars),
                &a,
                &gather(&problem.row_lower, &rows),
                &gather(&problem.row_upper, &rows),
                &gather(&problem.lower, &vars),
                &gather(&problem.upper, &vars),
                settings,
            )
            .map_err(|e| match e {
                QpError::NotPsd { pivot } => QpError::NotPsd { pivot: vars[pivot.min(vars.len() - 1)] },
                other => other,
            })?;
            ridge = ridge.max(kernel.ridge);
            blocks.push(Block {
                vars,
                rows,
                kernel,
                key: None,
                last: None,
            });
        }
        Ok(QpSolver {
            problem: problem.clone(),
            settings,
            blocks,
            empty_rows,
            ridge,
        })
    }

    pub fn problem(&self) -> &QpProblem {
        &self.problem
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn update_linear(&mut self, linear: &[f64]) -> Result<(), QpError> {
        if linear.len() != self.problem.num_vars() {
            return Err(QpError::DimensionMismatch("linear term length".into()));
        }
        if linear.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("linear term"));
        }
        self.problem.linear.copy_from_slice(linear);
        Ok(())
    }

    pub fn update_row_bounds(&mut self, row_lower: &[f64], row_upper: &[f64]) -> Result<(), QpError> {
        let m = self.problem.num_rows();
        if row_lower.len() != m || row_upper.len() != m {
            return Err(QpError::DimensionMismatch("row bound length".into()));
        }
        self.problem.row_lower.copy_from_slice(row_lower);
        self.problem.row_upper.copy_from_slice(row_upper);
        self.problem.validate()
    }

    pub fn update_bounds(&mut self, lower: &[f64], upper: &[f64]) -> Result<(), QpError> {
        let n = self.problem.num_vars();
        if lower.len() != n || upper.len() != n {
            return Err(QpError::DimensionMismatch("bound length".into()));
        }
        self.problem.lower.copy_from_slice(lower);
        self.problem.upper.copy_from_slice(upper);
        self.problem.validate()
    }

    /// Seeds every block with the given primal/dual point and drops cached
    /// answers.
    pub fn warm_start(&mut self, x: &[f64], row_duals: &[f64], bound_duals: &[f64]) {
        for b in &mut self.blocks {
            let xb = gather(x, &b.vars);
            let yb: Vec<f64> = gather(row_duals, &b.rows)
                .into_iter()
                .chain(gather(bound_duals, &b.vars))
                .collect();
            b.kernel.warm_start(&xb, &yb);
            b.key = None;
            b.last = None;
        }
    }

    pub fn solve(&mut self) -> QpResult {
        let p = &self.problem;
        let n = p.num_vars();
        let m = p.num_rows();
        let tol = self.settings.tol;
        let mut x = vec![0.0; n];
        let mut row_duals = vec![0.0; m];
        let mut bound_duals = vec![0.0; n];
        let mut status = QpStatus::Optimal;
        let mut iterations = 0;
        let mut polished = !self.blocks.is_empty();
        let mut certificate: Option<Vec<f64>> = None;

        for &r in &self.empty_rows {
            if p.row_lower[r] > tol || p.row_upper[r] < -tol {
                let mut cert = vec![0.0; m + n];
                cert[r] = if p.row_lower[r] > 0.0 { -1.0 } else { 1.0 };
                status = QpStatus::Infeasible;
                certificate = Some(cert);
                break;
            }
        }

        for b in &mut self.blocks {
            let lin = gather(&p.linear, &b.vars);
            let rl = gather(&p.row_lower, &b.rows);
            let ru = gather(&p.row_upper, &b.rows);
            let lo = gather(&p.lower, &b.vars);
            let hi = gather(&p.upper, &b.vars);
            let key: Vec<u64> = lin.iter().chain(&rl).chain(&ru).chain(&lo).chain(&hi).map(|v| v.to_bits()).collect();
            if b.key.as_ref() != Some(&key) || b.last.is_none() {
                b.kernel.update_linear(&lin);
                b.kernel.update_bounds(&rl, &ru, &lo, &hi);
                b.last = Some(b.kernel.solve());
                b.key = Some(key);
            }
            let out = b.last.as_ref().expect("block solved");
            for (k, &v) in b.vars.iter().enumerate() {
                x[v] = out.x[k];
                bound_duals[v] = out.y[b.rows.len() + k];
            }
            for (k, &r) in b.rows.iter().enumerate() {
                row_duals[r] = out.y[k];
            }
            iterations = iterations.max(out.iterations);
            polished &= out.polished;
            match out.status {
                QpStatus::Infeasible => {
                    if status != QpStatus::Infeasible {
                        let mut cert = vec![0.0; m + n];
                        let c = out.certificate.as_ref().expect("infeasible block carries a certificate");
                        for (k, &r) in b.rows.iter().enumerate() {
                            cert[r] = c[k];
                        }
                        for (k, &v) in b.vars.iter().enumerate() {
                            cert[m + v] = c[b.rows.len() + k];
                        }
                        certificate = Some(cert);
                    }
                    status = QpStatus::Infeasible;
                }
                QpStatus::MaxIterations if status == QpStatus::Optimal => status = QpStatus::MaxIterations,
                _ => {}
            }
        }

        let primal_residual = p.max_violation(&x);
        let mut grad = p.quadratic.mul(&x);
        for j in 0..n {
            grad[j] += p.linear[j] + self.ridge * x[j] + bound_duals[j];
        }
        p.constraints.tmul_vec_add(&row_duals, &mut grad);
        let dual_residual = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        QpResult {
            status,
            objective: p.objective(&x),
            x,
            row_duals,
            bound_duals,
            primal_residual,
            dual_residual,
            iterations,
            ridge: self.ridge,
            polished: polished && status == QpStatus::Optimal,
            certificate,
        }
    }
}

/// One-shot solve with the given tolerance and iteration cap.
pub fn solve(problem: &QpProblem, tol: f64, max_iter: usize) -> Result<QpResult, QpError> {
    let settings = QpSettings {
        tol,
        max_iter,
        ..QpSettings::default()
    };
    solve_with(problem, settings)
}

pub fn solve_with(problem: &QpProblem, settings: QpSettings) -> Result<QpResult, QpError> {
    Ok(QpSolver::new(problem, settings)?.solve())
}
