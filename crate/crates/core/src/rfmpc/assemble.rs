//! Stacked-input QP of one MPC window.

use super::task::{MpcTask, SafetyZones};
use crate::error::{Error, Result};
use crate::ltv::LtvResponseModel;
use chloros_qp::{CsrMatrix, QpProblem, TripletBuilder};

/// What each constraint row of an assembled QP stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// Output `i` at window step `t`; the last step also carries the
    /// terminal target.
    Output { t: usize, i: usize },
    /// `u_j(t) - u_j(t - 1)`.
    Rate { t: usize, j: usize },
    /// `u_j(0)` against the previously applied value.
    Seam { j: usize },
}

/// QP of a window with the row layout needed to retighten it.
#[derive(Debug, Clone)]
pub struct MpcQp {
    pub problem: QpProblem,
    pub rows: Vec<RowKind>,
    /// Whether output `(t, i)` has a constraint row, `[t * ny + i]`.
    /// Steps not reachable by any input in the window have none.
    pub controllable: Vec<bool>,
}

impl MpcQp {
    /// Assembles the window QP. The decision vector is time-major,
    /// `x[t * nu + j]`.
    pub fn new(model: &LtvResponseModel, task: &MpcTask, zones: &SafetyZones, u_prev: Option<&[f64]>) -> Result<MpcQp> {
        let (ny, nu, h) = (model.ny(), model.nu(), model.horizon);
        if task.ny() != ny || task.nu() != nu || zones.ny != ny || zones.horizon() != h {
            return Err(Error::DimensionMismatch(format!(
                "model {ny}x{nu} over {h} steps, task {}x{}, zones {} outputs over {} steps",
                task.ny(),
                task.nu(),
                zones.ny,
                zones.horizon()
            )));
        }
        if u_prev.is_some_and(|u| u.len() != nu) {
            return Err(Error::DimensionMismatch("previous input length".into()));
        }
        let n = h * nu;

        let mut q = TripletBuilder::new(n, n);
        let mut f = vec![0.0; n];
        for v in 0..n {
            q.push(v, v, 2.0 * task.w_u);
        }
        if task.w_du > 0.0 {
            let w = 2.0 * task.w_du;
            for t in 1..h {
                for j in 0..nu {
                    let (a, b) = ((t - 1) * nu + j, t * nu + j);
                    q.push(a, a, w);
                    q.push(b, b, w);
                    q.push(a, b, -w);
                    q.push(b, a, -w);
                }
            }
            if let Some(up) = u_prev {
                for j in 0..nu {
                    q.push(j, j, w);
                    f[j] -= w * up[j];
                }
            }
        }
        if task.w_y > 0.0 {
            let w = 2.0 * task.w_y;
            for t in 0..h {
                for i in 0..ny {
                    let row = &model.row(i, t)[..(t + 1) * nu];
                    let nz: Vec<(usize, f64)> = row.iter().copied().enumerate().filter(|(_, g)| *g != 0.0).collect();
                    let resid = model.y_free[t * ny + i] - task.y_ref[i];
                    for &(a, ga) in &nz {
                        f[a] += w * ga * resid;
                        for &(b, gb) in &nz {
                            q.push(a, b, w * ga * gb);
                        }
                    }
                }
            }
        }

        let mut rows = Vec::new();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut controllable = vec![false; h * ny];
        for t in 0..h {
            for i in 0..ny {
                let row = &model.row(i, t)[..(t + 1) * nu];
                if row.iter().all(|&g| g == 0.0) {
                    continue;
                }
                controllable[t * ny + i] = true;
                let r = rows.len();
                entries.extend(row.iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(c, &g)| (r, c, g)));
                rows.push(RowKind::Output { t, i });
            }
        }
        for t in 1..h {
            for j in 0..nu {
                let r = rows.len();
                entries.push((r, (t - 1) * nu + j, -1.0));
                entries.push((r, t * nu + j, 1.0));
                rows.push(RowKind::Rate { t, j });
            }
        }
        if u_prev.is_some() {
            for j in 0..nu {
                entries.push((rows.len(), j, 1.0));
                rows.push(RowKind::Seam { j });
            }
        }
        let mut a = TripletBuilder::new(rows.len(), n);
        for (r, c, v) in entries {
            a.push(r, c, v);
        }
        let lower: Vec<f64> = (0..h).flat_map(|_| task.u_min.iter().copied()).collect();
        let upper: Vec<f64> = (0..h).flat_map(|_| task.u_max.iter().copied()).collect();
        let constraints: CsrMatrix = a.build();
        let m = rows.len();
        let mut qp = MpcQp {
            problem: QpProblem::new(q.build(), f)
                .with_rows(constraints, vec![0.0; m], vec![0.0; m])
                .with_bounds(lower, upper),
            rows,
            controllable,
        };
        let (rl, ru) = qp.row_bounds(model, task, zones, u_prev)?;
        qp.problem.row_lower = rl;
        qp.problem.row_upper = ru;
        Ok(qp)
    }

    /// Row bounds for the given zones (the matrices do not depend on them).
    pub fn row_bounds(&self, model: &LtvResponseModel, task: &MpcTask, zones: &SafetyZones, u_prev: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
        let ny = model.ny();
        let h = model.horizon;
        for t in 0..h {
            for i in 0..ny {
                let (su, sl) = zones.at(t, i);
                if su < 0.0 || sl < 0.0 {
                    return Err(Error::Config("safety zones must be >= 0".into()));
                }
                if !(task.y_min[i] + sl < task.y_max[i] - su) {
                    return Err(Error::ZonesExhaustBand { output: i, step: t });
                }
            }
        }
        let mut rl = Vec::with_capacity(self.rows.len());
        let mut ru = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let (lo, hi) = match *row {
                RowKind::Output { t, i } => {
                    let (su, sl) = zones.at(t, i);
                    let yf = model.y_free[t * ny + i];
                    let mut lo = task.y_min[i] + sl - yf;
                    let mut hi = task.y_max[i] - su - yf;
                    if t + 1 == h {
                        lo = lo.max(task.y_terminal[i] - task.terminal_tol[i] - yf);
                        hi = hi.min(task.y_terminal[i] + task.terminal_tol[i] - yf);
                    }
                    if lo > hi {
                        return Err(Error::ZonesExhaustBand { output: i, step: t });
                    }
                    (lo, hi)
                }
                RowKind::Rate { j, .. } => (-task.rate_max[j], task.rate_max[j]),
                RowKind::Seam { j } => {
                    let up = u_prev.expect("seam rows exist only with a previous input")[j];
                    (up - task.rate_max[j], up + task.rate_max[j])
                }
            };
            rl.push(lo);
            ru.push(hi);
        }
        Ok((rl, ru))
    }

    /// Window steps of the output rows carrying weight in an infeasibility
    /// certificate.
    pub fn certificate_steps(&self, certificate: &[f64]) -> Vec<usize> {
        let mut steps: Vec<usize> = self
            .rows
            .iter()
            .zip(certificate)
            .filter(|(_, c)| c.abs() > 1e-6)
            .filter_map(|(r, _)| match *r {
                RowKind::Output { t, .. } => Some(t),
                _ => None,
            })
            .collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

/// The window QP alone.
pub fn assemble_qp(model: &LtvResponseModel, task: &MpcTask, zones: &SafetyZones, u_prev: Option<&[f64]>) -> Result<QpProblem> {
    Ok(MpcQp::new(model, task, zones, u_prev)?.problem)
}
