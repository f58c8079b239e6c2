//! Operational-state detection, strategy switching by blending task
//! parameters, and the supervisory loop.

use crate::error::{Error, Result};
use crate::network::{with_events_until, Network, ScenarioEvent};
use crate::plant::hydraulics::{HydraulicSchedule, Tariff};
use crate::plant::simulate::{Hydraulics, Plant};
use crate::rfmpc::{Controller, ControllerLog, ControllerViews, LoopOptions, MpcTask, ZoneStatus};
use crate::uncertainty::{Realization, UncertaintySet};
use chloros_qp::QpStatus;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OsLabel {
    Normal,
    Disturbed,
    Emergency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationalState {
    pub label: OsLabel,
    /// Distinguishes several states sharing a label.
    #[serde(default)]
    pub cluster: u32,
}

impl OperationalState {
    pub const NORMAL: OperationalState = OperationalState {
        label: OsLabel::Normal,
        cluster: 0,
    };

    pub fn new(label: OsLabel) -> OperationalState {
        OperationalState { label, cluster: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strategy {
    pub id: String,
    pub task: MpcTask,
    /// States this strategy is meant for.
    pub states: Vec<OperationalState>,
}

/// Affine interpolation of every weight, reference and bound.
pub fn blend(old: &MpcTask, new: &MpcTask, lambda: f64) -> Result<MpcTask> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("blend factor {lambda} outside [0, 1]")));
    }
    if old.ny() != new.ny() || old.nu() != new.nu() {
        return Err(Error::IncompatibleTasks(format!(
            "{}x{} and {}x{} outputs x inputs",
            old.ny(),
            old.nu(),
            new.ny(),
            new.nu()
        )));
    }
    if lambda == 0.0 {
        return Ok(old.clone());
    }
    if lambda == 1.0 {
        return Ok(new.clone());
    }
    let s = |a: f64, b: f64| (1.0 - lambda) * a + lambda * b;
    let v = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| s(*x, *y)).collect::<Vec<f64>>();
    Ok(MpcTask {
        w_u: s(old.w_u, new.w_u),
        w_du: s(old.w_du, new.w_du),
        w_y: s(old.w_y, new.w_y),
        y_ref: v(&old.y_ref, &new.y_ref),
        y_min: v(&old.y_min, &new.y_min),
        y_max: v(&old.y_max, &new.y_max),
        y_terminal: v(&old.y_terminal, &new.y_terminal),
        terminal_tol: v(&old.terminal_tol, &new.terminal_tol),
        u_min: v(&old.u_min, &new.u_min),
        u_max: v(&old.u_max, &new.u_max),
        rate_max: v(&old.rate_max, &new.rate_max),
        control_horizon: if lambda < 0.5 { old.control_horizon } else { new.control_horizon },
    })
}

/// `λ_i = i / T_s` for `i = 0..=T_s`.
pub fn lambda_schedule_linear(switch_steps: usize) -> Result<Vec<f64>> {
    if switch_steps == 0 {
        return Err(Error::Config("switching time must be >= 1 step".into()));
    }
    Ok((0..=switch_steps).map(|i| i as f64 / switch_steps as f64).collect())
}

/// Bisection resolution of the minimum-time switch.
pub const MIN_TIME_TOL: f64 = 1.0 / 64.0;

/// Largest `λ` in `[λ_prev, 1]` accepted by `feasible`, probing 1 first and
/// bisecting down to [`MIN_TIME_TOL`]. `λ_prev` is assumed feasible.
pub fn min_time_lambda_step(lambda_prev: f64, feasible: &mut dyn FnMut(f64) -> bool) -> f64 {
    if lambda_prev >= 1.0 || feasible(1.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (lambda_prev, 1.0);
    while hi - lo > MIN_TIME_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// What the supervisor sees at the start of a control cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub step: usize,
    /// Largest ratio of actual to forecast demand over demand nodes.
    pub demand_ratio: f64,
    pub tank_levels: Vec<f64>,
    pub burst: bool,
    pub pressure_anomaly: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectionRule {
    PipeBurst { state: OperationalState },
    PressureAnomaly { state: OperationalState },
    /// Mean demand ratio over the window at or above `threshold`.
    DemandAnomaly { threshold: f64, state: OperationalState },
    /// Any tank below `below` metres.
    TankLevel { below: f64, state: OperationalState },
}

/// First matching rule wins; Normal when none match.
pub fn detect_os(window: &[Observation], rules: &[DetectionRule]) -> Result<OperationalState> {
    let last = window.last().ok_or_else(|| Error::Config("empty observation window".into()))?;
    let mean_ratio = window.iter().map(|o| o.demand_ratio).sum::<f64>() / window.len() as f64;
    for rule in rules {
        let hit = match rule {
            DetectionRule::PipeBurst { state } => last.burst.then_some(*state),
            DetectionRule::PressureAnomaly { state } => last.pressure_anomaly.then_some(*state),
            DetectionRule::DemandAnomaly { threshold, state } => (mean_ratio >= *threshold).then_some(*state),
            DetectionRule::TankLevel { below, state } => last.tank_levels.iter().any(|l| l < below).then_some(*state),
        };
        if let Some(s) = hit {
            return Ok(s);
        }
    }
    Ok(OperationalState::NORMAL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchMode {
    Hard,
    Linear,
    MinTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisorConfig {
    pub rules: Vec<DetectionRule>,
    pub strategies: Vec<Strategy>,
    /// Strategy in force at the start.
    pub initial: String,
    pub mode: SwitchMode,
    /// Quality steps of a linear switch.
    pub switch_steps: usize,
    /// Observations the detection rules look at.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    1
}

/// Consecutive min-time cycles without progress before escalating.
pub const MAX_STALLS: usize = 3;

impl SupervisorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("supervisor needs at least one strategy".into()));
        }
        for s in &self.strategies {
            s.task.validate()?;
            blend(&self.strategies[0].task, &s.task, 0.5)?;
        }
        self.index_of(&self.initial)?;
        lambda_schedule_linear(self.switch_steps)?;
        if self.window == 0 {
            return Err(Error::Config("detection window must be >= 1".into()));
        }
        Ok(())
    }

    fn index_of(&self, id: &str) -> Result<usize> {
        self.strategies
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::Config(format!("unknown strategy {id:?}")))
    }

    /// Strategy registered for `os`, if any.
    pub fn strategy_for(&self, os: OperationalState) -> Option<usize> {
        self.strategies.iter().position(|s| s.states.contains(&os))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchRecord {
    pub from: String,
    pub to: String,
    pub mode: SwitchMode,
    pub start: usize,
    pub switch_steps: usize,
    /// First step run with `λ = 1`.
    pub completed_at: Option<usize>,
    /// `(step, λ)` per control cycle.
    pub lambdas: Vec<(usize, f64)>,
    pub reversed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SupervisorLog {
    /// Detected state at each change, with its step.
    pub os_timeline: Vec<(usize, OperationalState)>,
    pub switches: Vec<SwitchRecord>,
    /// Steps at which stalled min-time switches escalated to Emergency.
    pub escalations: Vec<usize>,
    /// `(step, qp status, zone status)` per control cycle.
    pub cycles: Vec<(usize, String, String)>,
}

impl SupervisorLog {
    pub fn infeasible_cycles(&self) -> usize {
        self.cycles.iter().filter(|c| c.1 == "Infeasible").count()
    }
}

struct ActiveSwitch {
    from: usize,
    to: usize,
    lambda: f64,
    stalls: usize,
    record: usize,
}

fn observe(net: &Network, plant_net: &Network, hyd: &Hydraulics, realization: &Realization, k: usize) -> Observation {
    let h = net.time_grid.hydraulic_step(k);
    let demand_ratio = net
        .demand_profiles
        .iter()
        .zip(&plant_net.demand_profiles)
        .enumerate()
        .filter(|(_, (f, _))| f.values[k] > 0.0)
        .map(|(j, (f, a))| a.values[k] * realization.demand_mult.get(h).map_or(1.0, |m| m[j]) / f.values[k])
        .fold(1.0, f64::max);
    let mut burst = false;
    let mut pressure = false;
    for e in net.events.iter().filter(|e| e.at_step() <= k) {
        match *e {
            ScenarioEvent::PipeBurst { .. } => burst = true,
            ScenarioEvent::PressureAnomaly { flag, .. } => pressure = flag,
            ScenarioEvent::DemandSurge { .. } => {}
        }
    }
    Observation {
        step: k,
        demand_ratio,
        tank_levels: hyd.tank_level[k].clone(),
        burst,
        pressure_anomaly: pressure,
    }
}

/// Closed loop under the supervisory layer: each cycle detects the state,
/// opens or advances a switch, and runs the controller on the blended task.
pub fn supervise(
    net: &Network,
    schedule: &HydraulicSchedule,
    tariff: &Tariff,
    set: &UncertaintySet,
    realization: &Realization,
    config: &SupervisorConfig,
    options: LoopOptions,
) -> Result<(ControllerLog, SupervisorLog)> {
    config.validate()?;
    let plant_net = with_events_until(net, None)?;
    let hyd = Arc::new(Hydraulics::build(&plant_net, schedule, Some(realization))?);
    let views = ControllerViews::build(net, schedule, set, &options.envelope, 0)?;
    let mut plant = Plant::new(hyd.clone(), net.initial_conc);
    let mut active = config.index_of(&config.initial)?;
    let mut ctrl = Controller::new(config.strategies[active].task.clone(), options);
    let mut log = ControllerLog::new(net);
    let mut sup = SupervisorLog::default();
    let mut window: Vec<Observation> = Vec::new();
    let mut switch: Option<ActiveSwitch> = None;
    let steps = hyd.steps;

    let mut k = 0;
    while k < steps {
        window.push(observe(net, &plant_net, &hyd, realization, k));
        if window.len() > config.window {
            window.remove(0);
        }
        let mut os = detect_os(&window, &config.rules)?;
        if sup.os_timeline.last().map(|(_, s)| *s) != Some(os) {
            sup.os_timeline.push((k, os));
        }
        let target = config.strategy_for(os).unwrap_or(active);

        match &mut switch {
            None if target != active => {
                sup.switches.push(SwitchRecord {
                    from: config.strategies[active].id.clone(),
                    to: config.strategies[target].id.clone(),
                    mode: config.mode,
                    start: k,
                    switch_steps: config.switch_steps,
                    completed_at: None,
                    lambdas: Vec::new(),
                    reversed: false,
                });
                switch = Some(ActiveSwitch {
                    from: active,
                    to: target,
                    lambda: 0.0,
                    stalls: 0,
                    record: sup.switches.len() - 1,
                });
            }
            Some(s) if target == s.from && target != s.to => {
                // Back towards the old strategy from the current blend.
                std::mem::swap(&mut s.from, &mut s.to);
                s.lambda = 1.0 - s.lambda;
                s.stalls = 0;
                let rec = &sup.switches[s.record];
                sup.switches.push(SwitchRecord {
                    from: rec.to.clone(),
                    to: rec.from.clone(),
                    mode: config.mode,
                    start: k,
                    switch_steps: config.switch_steps,
                    completed_at: None,
                    lambdas: Vec::new(),
                    reversed: true,
                });
                s.record = sup.switches.len() - 1;
            }
            _ => {}
        }

        let task = match &mut switch {
            None => config.strategies[active].task.clone(),
            Some(s) => {
                let (old, new) = (&config.strategies[s.from].task, &config.strategies[s.to].task);
                let start = sup.switches[s.record].start;
                let lambda = match config.mode {
                    SwitchMode::Hard => 1.0,
                    SwitchMode::Linear => ((k - start) as f64 / config.switch_steps as f64).min(1.0),
                    SwitchMode::MinTime => {
                        let view = views.at(k);
                        let state = &plant.state;
                        let mut probe = |l: f64| -> bool {
                            let Ok(t) = blend(old, new, l) else { return false };
                            let mut trial = ctrl.clone();
                            trial.task = t;
                            match trial.cycle(view, state, k) {
                                Ok(c) if options.use_zones => c.zone_status == Some(ZoneStatus::RobustlyFeasible),
                                Ok(c) => c.qp_status == QpStatus::Optimal,
                                Err(_) => false,
                            }
                        };
                        let next = if k == start { min_time_lambda_step(0.0, &mut probe) } else { min_time_lambda_step(s.lambda, &mut probe) };
                        if next <= s.lambda && k > start {
                            s.stalls += 1;
                        } else {
                            s.stalls = 0;
                        }
                        if s.stalls >= MAX_STALLS {
                            sup.escalations.push(k);
                            os = OperationalState::new(OsLabel::Emergency);
                            sup.os_timeline.push((k, os));
                            s.stalls = 0;
                            match config.strategy_for(os) {
                                Some(e) if e == s.to => 1.0,
                                _ => next,
                            }
                        } else {
                            next
                        }
                    }
                };
                s.lambda = lambda;
                sup.switches[s.record].lambdas.push((k, lambda));
                blend(old, new, lambda)?
            }
        };
        if let Some(s) = &switch {
            if s.lambda >= 1.0 {
                sup.switches[s.record].completed_at = Some(k);
                active = s.to;
                switch = None;
            }
        }

        ctrl.task = task.clone();
        let started = Instant::now();
        let cycle = ctrl.cycle(views.at(k), &plant.state, k)?;
        log.cycle_wall_s.push(started.elapsed().as_secs_f64());
        sup.cycles.push((
            k,
            format!("{:?}", cycle.qp_status),
            cycle.zone_status.as_ref().map_or("Disabled", |z| z.label()).to_string(),
        ));
        let n = task.control_horizon.min(steps - k);
        for t in 0..n {
            let d = cycle.decision(t);
            let u = d.u.clone();
            let y = plant.step(&u);
            log.record(&plant_net, &hyd, tariff, k + t, d, y, &task.y_min, &task.y_max);
            ctrl.u_prev = Some(u);
        }
        k += n;
    }
    Ok((log, sup))
}

/// Supervisor for [`crate::benchmark::build_burst_loop`]: a normal
/// minimum-injection strategy and an emergency strategy that doubles the
/// lower output bound after the burst.
pub fn burst_loop_supervisor(net: &Network, mode: SwitchMode, switch_steps: usize) -> SupervisorConfig {
    let mut normal = MpcTask::from_network(net);
    normal.control_horizon = 4;
    let mut emergency = normal.clone();
    emergency.y_min = vec![0.4];
    emergency.y_max = vec![0.6];
    emergency.y_terminal = vec![0.45];
    SupervisorConfig {
        rules: vec![DetectionRule::PipeBurst {
            state: OperationalState::new(OsLabel::Emergency),
        }],
        strategies: vec![
            Strategy {
                id: "normal".into(),
                task: normal,
                states: vec![OperationalState::NORMAL],
            },
            Strategy {
                id: "burst".into(),
                task: emergency,
                states: vec![OperationalState::new(OsLabel::Emergency)],
            },
        ],
        initial: "normal".into(),
        mode,
        switch_steps,
        window: 1,
    }
}
