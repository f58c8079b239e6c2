//! Closed-loop records, CSV output and summary metrics.

use crate::error::Result;
use crate::network::{Network, NodeId};
use crate::plant::hydraulics::Tariff;
use crate::plant::simulate::Hydraulics;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Outputs above/below the bounds count as violations beyond this (mg/L).
pub const VIOLATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub k: usize,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub tank_level: Vec<f64>,
    pub pump_flow: Vec<f64>,
    pub energy_cost: f64,
    pub sigma_u: Vec<f64>,
    pub sigma_l: Vec<f64>,
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
    pub qp_status: String,
    pub zone_status: String,
    pub zone_iters: usize,
    /// Cumulative chlorine mass injected (g).
    pub injection_mass: f64,
    pub degraded: bool,
    /// Largest excursion outside the task's unmodified output bounds.
    pub violation: f64,
}

/// Per-agent columns of a distributed run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentColumns {
    pub id: String,
    pub booster_ids: Vec<NodeId>,
    pub u: Vec<Vec<f64>>,
    pub zone_iters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerLog {
    pub dt_quality_s: u32,
    pub output_ids: Vec<NodeId>,
    pub booster_ids: Vec<NodeId>,
    pub tank_ids: Vec<NodeId>,
    pub pump_ids: Vec<u32>,
    pub rows: Vec<LogRow>,
    pub agents: Vec<AgentColumns>,
    /// Seconds spent per control cycle; kept out of the CSV.
    #[serde(skip)]
    pub cycle_wall_s: Vec<f64>,
}

/// What a control cycle decided for one step of its window.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    pub u: Vec<f64>,
    pub sigma_u: Vec<f64>,
    pub sigma_l: Vec<f64>,
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
    pub qp_status: String,
    pub zone_status: String,
    pub zone_iters: usize,
    pub degraded: bool,
}

impl ControllerLog {
    pub fn new(net: &Network) -> ControllerLog {
        ControllerLog {
            dt_quality_s: net.time_grid.dt_quality_s,
            output_ids: net.monitored_ids(),
            booster_ids: net.booster_ids(),
            tank_ids: net.tanks.iter().map(|t| t.node_id).collect(),
            pump_ids: net.pumps.iter().map(|p| p.id).collect(),
            rows: Vec::new(),
            agents: Vec::new(),
            cycle_wall_s: Vec::new(),
        }
    }

    /// Appends step `k` given the applied decision, the measured outputs
    /// and the bounds in force.
    #[allow(clippy::too_many_arguments)]
    pub fn record(&mut self, net: &Network, hyd: &Hydraulics, tariff: &Tariff, k: usize, d: StepDecision, y: Vec<f64>, y_min: &[f64], y_max: &[f64]) {
        let price = tariff.at_hour(net.time_grid.hour_of_day(k));
        let step_cost: f64 = net
            .pumps
            .iter()
            .zip(&hyd.pump_flow[k])
            .map(|(p, q)| price * p.power_coeff * q * hyd.dt_h)
            .sum();
        let step_mass: f64 = d.u.iter().zip(&hyd.plan(k).booster_flow).map(|(c, q)| c * q * hyd.dt_h).sum();
        let (cost0, mass0) = self.rows.last().map_or((0.0, 0.0), |r| (r.energy_cost, r.injection_mass));
        let violation = y
            .iter()
            .enumerate()
            .map(|(i, v)| (y_min[i] - v).max(v - y_max[i]).max(0.0))
            .fold(0.0, f64::max);
        self.rows.push(LogRow {
            k,
            u: d.u,
            y,
            tank_level: hyd.tank_level[k].clone(),
            pump_flow: hyd.pump_flow[k].clone(),
            energy_cost: cost0 + step_cost,
            sigma_u: d.sigma_u,
            sigma_l: d.sigma_l,
            y_lo: d.y_lo,
            y_hi: d.y_hi,
            qp_status: d.qp_status,
            zone_status: d.zone_status,
            zone_iters: d.zone_iters,
            injection_mass: mass0 + step_mass,
            degraded: d.degraded,
            violation,
        });
    }

    pub fn violation_count(&self) -> usize {
        self.rows.iter().filter(|r| r.violation > VIOLATION_TOL).count()
    }

    pub fn max_violation(&self) -> f64 {
        self.rows.iter().map(|r| r.violation).fold(0.0, f64::max)
    }

    /// Largest shortfall below `y_min` of output `i` over the run.
    pub fn max_shortfall(&self, i: usize, y_min: f64) -> f64 {
        self.rows.iter().map(|r| (y_min - r.y[i]).max(0.0)).fold(0.0, f64::max)
    }

    /// Sum of setpoints of `booster` over steps `from..to`.
    pub fn injection_sum(&self, booster: NodeId, from: usize, to: usize) -> f64 {
        let j = self.booster_ids.iter().position(|&b| b == booster).expect("known booster");
        self.rows.iter().filter(|r| r.k >= from && r.k < to).map(|r| r.u[j]).sum()
    }

    pub fn write_csv(&self, path: &Path, with_agents: bool) -> Result<()> {
        let bytes = self.csv_bytes(with_agents)?;
        std::fs::File::create(path)?.write_all(&bytes)?;
        Ok(())
    }

    pub fn csv_bytes(&self, with_agents: bool) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["time_s".to_string()];
        header.extend(self.output_ids.iter().map(|i| format!("y_{i}")));
        header.extend(self.booster_ids.iter().map(|i| format!("u_{i}")));
        header.extend(self.tank_ids.iter().map(|i| format!("level_{i}")));
        header.extend(self.pump_ids.iter().map(|i| format!("flow_{i}")));
        header.push("energy_cost_cumulative".into());
        header.extend(self.output_ids.iter().map(|i| format!("sigma_u_{i}")));
        header.extend(self.output_ids.iter().map(|i| format!("sigma_l_{i}")));
        header.extend(self.output_ids.iter().map(|i| format!("ylo_{i}")));
        header.extend(self.output_ids.iter().map(|i| format!("yhi_{i}")));
        for s in ["qp_status", "zone_status", "zone_iters", "injection_mass_cumulative", "degraded"] {
            header.push(s.into());
        }
        if with_agents {
            for a in &self.agents {
                header.extend(a.booster_ids.iter().map(|b| format!("agent_{}_u_{b}", a.id)));
                header.push(format!("agent_{}_zone_iters", a.id));
            }
        }
        w.write_record(&header)?;
        for (n, r) in self.rows.iter().enumerate() {
            let mut rec = vec![(r.k as u64 * self.dt_quality_s as u64).to_string()];
            let nums = r
                .y
                .iter()
                .chain(&r.u)
                .chain(&r.tank_level)
                .chain(&r.pump_flow)
                .chain(std::iter::once(&r.energy_cost))
                .chain(&r.sigma_u)
                .chain(&r.sigma_l)
                .chain(&r.y_lo)
                .chain(&r.y_hi);
            rec.extend(nums.map(|v| v.to_string()));
            rec.push(r.qp_status.clone());
            rec.push(r.zone_status.clone());
            rec.push(r.zone_iters.to_string());
            rec.push(r.injection_mass.to_string());
            rec.push(u8::from(r.degraded).to_string());
            if with_agents {
                for a in &self.agents {
                    rec.extend(a.u[n].iter().map(|v| v.to_string()));
                    rec.push(a.zone_iters[n].to_string());
                }
            }
            w.write_record(&rec)?;
        }
        Ok(w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
    }

    pub fn metrics(&self) -> Metrics {
        let nu = self.booster_ids.len();
        let dt_h = self.dt_quality_s as f64 / 3600.0;
        let mut injection_sum = vec![0.0; nu];
        for r in &self.rows {
            for j in 0..nu {
                injection_sum[j] += r.u[j];
            }
        }
        let cycles: Vec<&LogRow> = self
            .rows
            .iter()
            .enumerate()
            .filter(|(n, r)| *n == 0 || self.rows[n - 1].zone_iters != r.zone_iters || self.rows[n - 1].sigma_u != r.sigma_u)
            .map(|(_, r)| r)
            .collect();
        let iters: Vec<usize> = cycles.iter().map(|r| r.zone_iters).collect();
        Metrics {
            steps: self.rows.len(),
            violation_count: self.violation_count(),
            max_violation: self.max_violation(),
            injection_mass: self.rows.last().map_or(0.0, |r| r.injection_mass),
            injection_setpoint_sum: self.booster_ids.iter().copied().zip(injection_sum.iter().map(|s| s * dt_h)).collect(),
            energy_cost: self.rows.last().map_or(0.0, |r| r.energy_cost),
            zone_iters_max: iters.iter().copied().max().unwrap_or(0),
            degraded_steps: self.rows.iter().filter(|r| r.degraded).count(),
            non_optimal_steps: self.rows.iter().filter(|r| r.qp_status != "Optimal").count(),
        }
    }
}

/// Run summary written next to the CSV log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub steps: usize,
    pub violation_count: usize,
    pub max_violation: f64,
    /// Chlorine mass injected by all boosters (g).
    pub injection_mass: f64,
    /// Setpoint integral per booster (mg/L · h).
    pub injection_setpoint_sum: Vec<(NodeId, f64)>,
    pub energy_cost: f64,
    pub zone_iters_max: usize,
    pub degraded_steps: usize,
    pub non_optimal_steps: usize,
}
