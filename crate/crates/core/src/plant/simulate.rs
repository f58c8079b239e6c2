//! Quality-step hydraulics and open-loop simulation.

use super::hydraulics::{FlowSolver, HydraulicSchedule, Tariff};
use super::quality::{self, Decay, QualityState, StepPlan, Topology};
use crate::error::{Error, Result};
use crate::network::{with_events_until, Network, NodeId};
use crate::uncertainty::Realization;
use serde::Serialize;
use std::path::Path;
use std::sync::Arc;

/// Flows, tank levels and transport plans for every quality step of one
/// demand/decay realization.
#[derive(Debug, Clone)]
pub struct Hydraulics {
    pub topo: Arc<Topology>,
    pub steps: usize,
    pub dt_h: f64,
    pub dt_quality_s: u32,
    pub pipe_flow: Vec<Vec<f64>>,
    pub pump_flow: Vec<Vec<f64>>,
    pub tank_flow: Vec<Vec<f64>>,
    /// Levels at the start of each step plus the final level.
    pub tank_level: Vec<Vec<f64>>,
    pub tank_area: Vec<f64>,
    pub decay: Decay,
    plan_of_step: Vec<usize>,
    plans: Vec<StepPlan>,
}

/// Adds unplanned demand `gap` to the tank outflows in proportion to tank
/// area, or to the pumps in proportion to capacity when there are no tanks.
pub fn absorb_gap(net: &Network, pumps: &mut [f64], tanks: &mut [f64], gap: f64) {
    let total_area: f64 = net.tanks.iter().map(|t| t.area).sum();
    let total_cap: f64 = net.pumps.iter().map(|p| p.flow_max).sum();
    if total_area > 0.0 {
        tanks.iter_mut().zip(&net.tanks).for_each(|(q, t)| *q += gap * t.area / total_area);
    } else if total_cap > 0.0 {
        pumps.iter_mut().zip(&net.pumps).for_each(|(q, p)| *q += gap * p.flow_max / total_cap);
    }
}

impl Hydraulics {
    /// `net` must already carry the events the plant experiences (see
    /// [`with_events_until`]). Demand that the schedule did not plan for is
    /// taken from the tanks in proportion to their area, or from the pumps
    /// in proportion to capacity when there are no tanks.
    pub fn build(net: &Network, schedule: &HydraulicSchedule, realization: Option<&Realization>) -> Result<Hydraulics> {
        let g = net.time_grid;
        let steps = g.steps_quality();
        let dt_h = g.dt_quality_h();
        if schedule.steps() < g.steps_hydraulic() {
            return Err(Error::DimensionMismatch(format!(
                "schedule covers {} hydraulic steps, horizon needs {}",
                schedule.steps(),
                g.steps_hydraulic()
            )));
        }
        if let Some(r) = realization {
            if r.decay_rate.len() != net.pipes.len() || r.demand_mult.len() < g.steps_hydraulic() {
                return Err(Error::DimensionMismatch("realization does not match the network".into()));
            }
        }
        let topo = Arc::new(Topology::new(net));
        let idx = net.node_index();
        let mut solver = FlowSolver::new(net);
        let area: Vec<f64> = net.tanks.iter().map(|t| t.area).collect();

        let mut pipe_flow = Vec::with_capacity(steps);
        let mut pump_flow = Vec::with_capacity(steps);
        let mut tank_flow = Vec::with_capacity(steps);
        let mut tank_level = vec![net.tanks.iter().map(|t| t.level_init).collect::<Vec<f64>>()];
        let mut plan_of_step = Vec::with_capacity(steps);
        let mut plans: Vec<StepPlan> = Vec::new();
        let mut demand = vec![0.0; net.nodes.len()];
        for k in 0..steps {
            let h = g.hydraulic_step(k);
            demand.iter_mut().for_each(|d| *d = 0.0);
            for (j, d) in net.demand_profiles.iter().enumerate() {
                let m = realization.map_or(1.0, |r| r.demand_mult[h][j]);
                demand[idx[&d.node_id]] += d.values[k] * m;
            }
            let mut pumps = schedule.pump_flow[h].clone();
            let mut tanks = schedule.tank_flow[h].clone();
            let supply: f64 = pumps.iter().sum::<f64>() + tanks.iter().sum::<f64>();
            let gap = demand.iter().sum::<f64>() - supply;
            if gap != 0.0 {
                absorb_gap(net, &mut pumps, &mut tanks, gap);
            }
            let inj = super::hydraulics::nodal_injection(net, &pumps, &tanks, &demand);
            let active: Vec<bool> = net.pipes.iter().map(|p| net.pipe_active(p.id, k)).collect();
            let q = solver.solve(&inj, &active, k)?;

            let same = k > 0 && pipe_flow.last() == Some(&q) && pump_flow.last() == Some(&pumps) && tank_flow.last() == Some(&tanks);
            if same {
                plan_of_step.push(plans.len() - 1);
            } else {
                plans.push(StepPlan::new(&topo, &q, &pumps, &tanks, dt_h, steps as u32));
                plan_of_step.push(plans.len() - 1);
            }
            let next: Vec<f64> = tank_level[k]
                .iter()
                .zip(&tanks)
                .zip(&area)
                .map(|((l, q), a)| l - q * dt_h / a)
                .collect();
            tank_level.push(next);
            pipe_flow.push(q);
            pump_flow.push(pumps);
            tank_flow.push(tanks);
        }
        let pipe_rates: Vec<f64> = net
            .pipes
            .iter()
            .enumerate()
            .map(|(p, pipe)| realization.map_or(pipe.decay_rate, |r| r.decay_rate[p]))
            .collect();
        let tank_rates: Vec<f64> = net.tanks.iter().map(|t| t.decay_rate).collect();
        Ok(Hydraulics {
            topo,
            steps,
            dt_h,
            dt_quality_s: g.dt_quality_s,
            pipe_flow,
            pump_flow,
            tank_flow,
            tank_level,
            tank_area: area,
            decay: Decay::new(&pipe_rates, &tank_rates, dt_h),
            plan_of_step,
            plans,
        })
    }

    pub fn plan(&self, k: usize) -> &StepPlan {
        &self.plans[self.plan_of_step[k]]
    }

    pub fn tank_volume(&self, k: usize) -> Vec<f64> {
        self.tank_level[k].iter().zip(&self.tank_area).map(|(l, a)| l * a).collect()
    }

    /// Uniform initial state consistent with the flows of step `k`.
    pub fn uniform_state(&self, k: usize, conc: f64) -> QualityState {
        QualityState::uniform(&self.topo, self.plan(k), conc)
    }

    /// Advances `state` through step `k`, writing outputs into `y`.
    pub fn step(&self, k: usize, state: &mut QualityState, u: &[f64], sources_on: bool, y: &mut [f64]) {
        let vol = self.tank_volume(k);
        quality::step(&self.topo, self.plan(k), &self.decay, state, u, sources_on, &vol, self.dt_h, y);
    }

    pub fn num_outputs(&self) -> usize {
        self.topo.output_node.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.topo.booster_node.len()
    }
}

/// Step-by-step plant driven by a controller.
#[derive(Debug, Clone)]
pub struct Plant {
    pub hydraulics: Arc<Hydraulics>,
    pub state: QualityState,
    pub k: usize,
}

impl Plant {
    pub fn new(hydraulics: Arc<Hydraulics>, initial_conc: f64) -> Plant {
        let state = hydraulics.uniform_state(0, initial_conc);
        Plant { hydraulics, state, k: 0 }
    }

    /// Applies `u` for the current step and returns the outputs measured
    /// at its start.
    pub fn step(&mut self, u: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.hydraulics.num_outputs()];
        self.hydraulics.step(self.k, &mut self.state, u, true, &mut y);
        self.k += 1;
        y
    }
}

/// Per-step record of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantTrajectory {
    pub dt_quality_s: u32,
    pub output_ids: Vec<NodeId>,
    pub booster_ids: Vec<NodeId>,
    pub tank_ids: Vec<NodeId>,
    pub pump_ids: Vec<u32>,
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub tank_level: Vec<Vec<f64>>,
    pub pump_flow: Vec<Vec<f64>>,
    /// Water through each booster node (m³/h).
    pub booster_flow: Vec<Vec<f64>>,
    /// Cumulative energy cost at the end of each step ($).
    pub energy_cost: Vec<f64>,
}

impl PlantTrajectory {
    pub fn new(net: &Network) -> PlantTrajectory {
        PlantTrajectory {
            dt_quality_s: net.time_grid.dt_quality_s,
            output_ids: net.monitored_ids(),
            booster_ids: net.booster_ids(),
            tank_ids: net.tanks.iter().map(|t| t.node_id).collect(),
            pump_ids: net.pumps.iter().map(|p| p.id).collect(),
            y: Vec::new(),
            u: Vec::new(),
            tank_level: Vec::new(),
            pump_flow: Vec::new(),
            booster_flow: Vec::new(),
            energy_cost: Vec::new(),
        }
    }

    /// Appends step `k` of `hyd` with the applied input and measured output.
    pub fn record(&mut self, net: &Network, hyd: &Hydraulics, tariff: &Tariff, k: usize, u: &[f64], y: &[f64]) {
        let price = tariff.at_hour(net.time_grid.hour_of_day(k));
        let step_cost: f64 = net
            .pumps
            .iter()
            .zip(&hyd.pump_flow[k])
            .map(|(p, q)| price * p.power_coeff * q * hyd.dt_h)
            .sum();
        let prev = self.energy_cost.last().copied().unwrap_or(0.0);
        self.energy_cost.push(prev + step_cost);
        self.y.push(y.to_vec());
        self.u.push(u.to_vec());
        self.tank_level.push(hyd.tank_level[k].clone());
        self.pump_flow.push(hyd.pump_flow[k].clone());
        self.booster_flow.push(hyd.plan(k).booster_flow.clone());
    }

    pub fn steps(&self) -> usize {
        self.y.len()
    }

    /// Chlorine mass injected by the boosters (g): setpoint times flow.
    pub fn injected_mass(&self) -> f64 {
        let dt_h = self.dt_quality_s as f64 / 3600.0;
        self.u
            .iter()
            .zip(&self.booster_flow)
            .map(|(u, q)| u.iter().zip(q).map(|(c, q)| c * q * dt_h).sum::<f64>())
            .sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv_bytes()?)?;
        Ok(())
    }

    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["time_s".to_string()];
        header.extend(self.output_ids.iter().map(|i| format!("y_{i}")));
        header.extend(self.booster_ids.iter().map(|i| format!("u_{i}")));
        header.extend(self.tank_ids.iter().map(|i| format!("level_{i}")));
        header.extend(self.pump_ids.iter().map(|i| format!("flow_{i}")));
        header.push("energy_cost_cumulative".into());
        w.write_record(&header)?;
        for k in 0..self.steps() {
            let mut row = vec![(k as u64 * self.dt_quality_s as u64).to_string()];
            let vals = self.y[k]
                .iter()
                .chain(&self.u[k])
                .chain(&self.tank_level[k])
                .chain(&self.pump_flow[k])
                .chain(std::iter::once(&self.energy_cost[k]));
            row.extend(vals.map(|v| format!("{v}")));
            w.write_record(&row)?;
        }
        Ok(w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
    }
}

/// Open-loop simulation with a fixed input sequence (`u[k][booster]`).
pub fn simulate(
    net: &Network,
    schedule: &HydraulicSchedule,
    tariff: &Tariff,
    u: &[Vec<f64>],
    realization: Option<&Realization>,
) -> Result<PlantTrajectory> {
    let plant_net = with_events_until(net, None)?;
    let hyd = Arc::new(Hydraulics::build(&plant_net, schedule, realization)?);
    if u.len() < hyd.steps || u.iter().any(|row| row.len() != hyd.num_inputs()) {
        return Err(Error::DimensionMismatch(format!(
            "input sequence must have {} rows of {} setpoints",
            hyd.steps,
            hyd.num_inputs()
        )));
    }
    let mut plant = Plant::new(hyd.clone(), net.initial_conc);
    let mut traj = PlantTrajectory::new(net);
    for (k, uk) in u.iter().enumerate().take(hyd.steps) {
        let y = plant.step(uk);
        traj.record(&plant_net, &hyd, tariff, k, uk, &y);
    }
    Ok(traj)
}
