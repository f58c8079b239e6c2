//! Iterative safety-zone generation: tighten, solve, predict the two
//! envelopes, grow the zones by the envelope excess, repeat.

use super::assemble::MpcQp;
use super::task::{MpcTask, SafetyZones};
use crate::error::{Error, Result};
use crate::ltv::LtvResponseModel;
use crate::network::Network;
use crate::plant::hydraulics::HydraulicSchedule;
use crate::uncertainty::{lipschitz_estimate, Envelope, EnvelopeConfig, UncertaintySet};
use chloros_qp::{QpSettings, QpSolver, QpStatus};
use serde::{Deserialize, Serialize};

/// Two-envelope prediction of the window outputs for a candidate input.
pub trait RobustPredictor {
    /// `u` is time-major over the window; the envelope covers the window.
    fn envelope(&self, u: &[f64]) -> Envelope;
}

/// Outputs `y_free + G u` widened by a fixed band; useful for tests and
/// additive output disturbances.
pub struct AdditiveBand<'a> {
    pub model: &'a LtvResponseModel,
    pub below: f64,
    pub above: f64,
}

impl RobustPredictor for AdditiveBand<'_> {
    fn envelope(&self, u: &[f64]) -> Envelope {
        let y = self.model.predict(u).expect("input sized to the model");
        let ny = self.model.ny();
        let rows: Vec<Vec<f64>> = y.chunks(ny).map(|c| c.to_vec()).collect();
        Envelope {
            y_lo: rows.iter().map(|r| r.iter().map(|v| v - self.below).collect()).collect(),
            y_hi: rows.iter().map(|r| r.iter().map(|v| v + self.above).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoneSettings {
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Each increment is applied to this many steps on either side of the
    /// step that caused it, so shifted transport delays see the same zone.
    pub spread: usize,
    #[serde(skip)]
    pub qp: QpSettings,
}

impl Default for ZoneSettings {
    fn default() -> Self {
        ZoneSettings {
            alpha: 1.0,
            tol: 1e-4,
            max_iter: 30,
            spread: 4,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ZoneStatus {
    RobustlyFeasible,
    /// The tightened problem became infeasible; window steps involved.
    ZonesExhausted { steps: Vec<usize> },
    MaxIterations,
}

impl ZoneStatus {
    pub fn label(&self) -> &'static str {
        match self {
            ZoneStatus::RobustlyFeasible => "RobustlyFeasible",
            ZoneStatus::ZonesExhausted { .. } => "ZonesExhausted",
            ZoneStatus::MaxIterations => "MaxIterations",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ZoneOutcome {
    pub zones: SafetyZones,
    /// Last optimal input (time-major), if any QP was solved to optimality.
    pub u: Option<Vec<f64>>,
    pub status: ZoneStatus,
    pub iterations: usize,
    pub envelope: Option<Envelope>,
    pub qp_status: QpStatus,
    /// Zones used by each iteration, starting with the initial ones.
    pub history: Vec<SafetyZones>,
}

/// Grows `zones` until the envelope of the optimal input stays inside the
/// original bounds at every controllable step.
///
/// Each output has its own step size; it is halved when that output's
/// total excess falls and then rises again.
pub fn iterate_safety_zones(
    model: &LtvResponseModel,
    task: &MpcTask,
    predictor: &dyn RobustPredictor,
    initial: SafetyZones,
    u_prev: Option<&[f64]>,
    settings: &ZoneSettings,
) -> Result<ZoneOutcome> {
    let ny = model.ny();
    let h = model.horizon;
    let mut zones = initial;
    let mut history = vec![zones.clone()];
    let mut alpha = vec![settings.alpha; ny];
    let mut excess_hist: Vec<Vec<f64>> = vec![Vec::new(); ny];

    let exhausted = |zones: SafetyZones, history: Vec<SafetyZones>, steps: Vec<usize>, iterations: usize, u: Option<Vec<f64>>, qp_status: QpStatus| ZoneOutcome {
        zones,
        u,
        status: ZoneStatus::ZonesExhausted { steps },
        iterations,
        envelope: None,
        qp_status,
        history,
    };

    let qp = match MpcQp::new(model, task, &zones, u_prev) {
        Ok(qp) => qp,
        Err(Error::ZonesExhaustBand { step, .. }) => return Ok(exhausted(zones, history, vec![step], 0, None, QpStatus::Infeasible)),
        Err(e) => return Err(e),
    };
    let mut solver = QpSolver::new(&qp.problem, settings.qp)?;
    let mut last_u: Option<Vec<f64>> = None;

    for iter in 1..=settings.max_iter {
        if iter > 1 {
            match qp.row_bounds(model, task, &zones, u_prev) {
                Ok((rl, ru)) => solver.update_row_bounds(&rl, &ru)?,
                Err(Error::ZonesExhaustBand { step, .. }) => {
                    return Ok(exhausted(zones, history, vec![step], iter - 1, last_u, QpStatus::Optimal));
                }
                Err(e) => return Err(e),
            }
        }
        let res = solver.solve();
        if res.status != QpStatus::Optimal {
            let steps = res.certificate.as_ref().map(|c| qp.certificate_steps(c)).unwrap_or_default();
            return Ok(exhausted(zones, history, steps, iter, last_u, res.status));
        }
        let u = res.x;
        let env = predictor.envelope(&u);

        let mut done = true;
        let mut add_u = vec![0.0; ny * h];
        let mut add_l = vec![0.0; ny * h];
        let mut total = vec![0.0; ny];
        for t in 0..h {
            for i in 0..ny {
                if !qp.controllable[t * ny + i] {
                    continue;
                }
                let eu = (env.y_hi[t][i] - task.y_max[i]).max(0.0);
                let el = (task.y_min[i] - env.y_lo[t][i]).max(0.0);
                if eu > settings.tol || el > settings.tol {
                    done = false;
                }
                add_u[t * ny + i] = eu;
                add_l[t * ny + i] = el;
                total[i] += eu + el;
            }
        }
        if done {
            return Ok(ZoneOutcome {
                zones,
                u: Some(u),
                status: ZoneStatus::RobustlyFeasible,
                iterations: iter,
                envelope: Some(env),
                qp_status: QpStatus::Optimal,
                history,
            });
        }
        for i in 0..ny {
            let e = &mut excess_hist[i];
            e.push(total[i]);
            let n = e.len();
            if n >= 3 && e[n - 2] < e[n - 3] && e[n - 1] > e[n - 2] {
                alpha[i] *= 0.5;
            }
        }
        let w = settings.spread;
        for t in 0..h {
            let near = t.saturating_sub(w)..(t + w + 1).min(h);
            for i in 0..ny {
                let widest = |add: &[f64]| near.clone().map(|s| add[s * ny + i]).fold(0.0, f64::max);
                let idx = t * ny + i;
                zones.upper[idx] += alpha[i] * widest(&add_u);
                zones.lower[idx] += alpha[i] * widest(&add_l);
            }
        }
        history.push(zones.clone());
        last_u = Some(u);
        if iter == settings.max_iter {
            return Ok(ZoneOutcome {
                zones,
                u: last_u,
                status: ZoneStatus::MaxIterations,
                iterations: iter,
                envelope: Some(env),
                qp_status: QpStatus::Optimal,
                history,
            });
        }
    }
    // max_iter == 0
    Ok(ZoneOutcome {
        zones,
        u: None,
        status: ZoneStatus::MaxIterations,
        iterations: 0,
        envelope: None,
        qp_status: QpStatus::MaxIterations,
        history,
    })
}

/// One QP with the given zones and no envelope check.
pub fn solve_plain(model: &LtvResponseModel, task: &MpcTask, zones: &SafetyZones, u_prev: Option<&[f64]>, qp: &QpSettings) -> Result<(QpStatus, Vec<f64>)> {
    let problem = MpcQp::new(model, task, zones, u_prev)?.problem;
    let res = QpSolver::new(&problem, *qp)?.solve();
    Ok((res.status, res.x))
}

/// Probe directions per scale used by default for offline zones.
pub const DEFAULT_PROBES: usize = 10;

/// Constant zones over the full horizon from an offline sensitivity estimate,
/// widened by `cfg.inflation`.
pub fn lipschitz_zones_offline(net: &Network, schedule: &HydraulicSchedule, set: &UncertaintySet, probe_count: usize, cfg: &EnvelopeConfig) -> Result<SafetyZones> {
    let est = lipschitz_estimate(net, schedule, set, probe_count, cfg.seed)?;
    let z = est.zones(set, cfg.inflation);
    Ok(SafetyZones::constant(&z, &z, net.time_grid.steps_quality()))
}
