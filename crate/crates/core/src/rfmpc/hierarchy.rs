//! Two time scales: a pump scheduler re-planning every few hours over a
//! rolling day, and the quality controller running under its schedule.

use super::closed_loop::{Controller, ControllerViews, LoopOptions};
use super::log::ControllerLog;
use super::task::MpcTask;
use crate::error::Result;
use crate::network::{with_events_until, Network};
use crate::plant::hydraulics::{hourly_demand, optimize_pump_window, HydraulicSchedule, Tariff};
use crate::plant::simulate::{Hydraulics, Plant};
use crate::uncertainty::{Realization, UncertaintySet};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchyOptions {
    /// Hydraulic steps between pump re-plans.
    pub replan_every: usize,
    /// Hydraulic steps covered by each pump plan.
    pub window: usize,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        HierarchyOptions { replan_every: 2, window: 24 }
    }
}

#[derive(Debug, Clone)]
pub struct HierarchyOutcome {
    /// Pump schedule actually followed over the horizon.
    pub schedule: HydraulicSchedule,
    /// Each pump plan, with the hydraulic step it was made at.
    pub plans: Vec<(usize, HydraulicSchedule)>,
    pub log: ControllerLog,
}

/// Schedule keeping the first `keep` hydraulic steps of `applied` and
/// continuing with `plan`, cut to `len` steps.
fn splice(applied: &HydraulicSchedule, plan: &HydraulicSchedule, keep: usize, len: usize) -> HydraulicSchedule {
    let take = len - keep;
    let cat = |a: &[Vec<f64>], b: &[Vec<f64>], n: usize| -> Vec<Vec<f64>> { a[..keep].iter().chain(&b[..n]).cloned().collect() };
    HydraulicSchedule {
        pump_flow: cat(&applied.pump_flow, &plan.pump_flow, take),
        tank_flow: cat(&applied.tank_flow, &plan.tank_flow, take),
        pipe_flow: cat(&applied.pipe_flow, &plan.pipe_flow, take),
        tank_level: cat(&applied.tank_level, &plan.tank_level, take + 1),
    }
}

pub fn run_hierarchy(
    net: &Network,
    tariff: &Tariff,
    task: &MpcTask,
    set: &UncertaintySet,
    realization: &Realization,
    loop_options: LoopOptions,
    options: HierarchyOptions,
) -> Result<HierarchyOutcome> {
    task.validate()?;
    set.validate()?;
    tariff.validate()?;
    let grid = net.time_grid;
    let per_hyd = grid.steps_per_hydraulic();
    let n_hyd = grid.steps_hydraulic();
    let steps = grid.steps_quality();
    let day = hourly_demand(net);
    let plant_net = with_events_until(net, None)?;

    let mut schedule: Option<HydraulicSchedule> = None;
    let mut plans = Vec::new();
    let mut plant: Option<Plant> = None;
    let mut hyd: Option<Arc<Hydraulics>> = None;
    let mut views: Option<ControllerViews> = None;
    let mut ctrl = Controller::new(task.clone(), loop_options);
    let mut log = ControllerLog::new(net);

    let mut k = 0;
    while k < steps {
        let h = k / per_hyd;
        if h % options.replan_every.max(1) == 0 && k % per_hyd == 0 {
            let known = with_events_until(net, Some(k))?;
            let levels: Vec<f64> = match &hyd {
                Some(p) => p.tank_level[k].clone(),
                None => net.tanks.iter().map(|t| t.level_init).collect(),
            };
            let forecast: Vec<Vec<f64>> = (0..options.window).map(|w| day[(h + w) % day.len()].clone()).collect();
            let plan = optimize_pump_window(&known, &forecast, tariff, h * grid.dt_hydraulic_s as usize / 3600, &levels, k)?;
            let next = match &schedule {
                Some(applied) => splice(applied, &plan, h, n_hyd),
                None => splice(&plan, &plan, 0, n_hyd.min(plan.steps())),
            };
            plans.push((h, plan));
            let new_hyd = Arc::new(Hydraulics::build(&plant_net, &next, Some(realization))?);
            plant = Some(match plant.take() {
                Some(mut p) => {
                    p.hydraulics = new_hyd.clone();
                    p
                }
                None => Plant::new(new_hyd.clone(), net.initial_conc),
            });
            hyd = Some(new_hyd);
            views = Some(ControllerViews::build(net, &next, set, &loop_options.envelope, k)?);
            schedule = Some(next);
        }
        let (p, hy, vs) = (plant.as_mut().expect("planned"), hyd.as_ref().expect("planned"), views.as_ref().expect("planned"));
        let started = Instant::now();
        let cycle = ctrl.cycle(vs.at(k), &p.state, k)?;
        log.cycle_wall_s.push(started.elapsed().as_secs_f64());
        let next_replan = (h / options.replan_every.max(1) + 1) * options.replan_every.max(1) * per_hyd;
        let n = task.control_horizon.min(steps - k).min(next_replan - k);
        for t in 0..n {
            let d = cycle.decision(t);
            let u = d.u.clone();
            let y = p.step(&u);
            log.record(&plant_net, hy, tariff, k + t, d, y, &task.y_min, &task.y_max);
            ctrl.u_prev = Some(u);
        }
        k += n;
    }
    Ok(HierarchyOutcome {
        schedule: schedule.expect("horizon has at least one step"),
        plans,
        log,
    })
}
