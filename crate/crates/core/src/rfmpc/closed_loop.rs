//! Receding-horizon loop: measure, plan with safety zones, apply the first
//! control horizon, repeat.

use super::log::{ControllerLog, StepDecision};
use super::task::{MpcTask, SafetyZones};
use super::zones::{iterate_safety_zones, solve_plain, RobustPredictor, ZoneSettings, ZoneStatus};
use crate::error::Result;
use crate::ltv::{extract_gains_from, free_response, GainMatrix, LtvResponseModel};
use crate::network::{with_events_until, Network};
use crate::plant::hydraulics::{HydraulicSchedule, Tariff};
use crate::plant::quality::QualityState;
use crate::plant::simulate::{Hydraulics, Plant};
use crate::uncertainty::{Envelope, EnvelopeConfig, Realization, ScenarioBank, UncertaintySet};
use chloros_qp::QpStatus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopOptions {
    pub use_zones: bool,
    /// Start each cycle from the previous zones shifted forward.
    pub warm_start_zones: bool,
    pub zones: ZoneSettings,
    pub envelope: EnvelopeConfig,
}

impl Default for LoopOptions {
    fn default() -> Self {
        LoopOptions {
            use_zones: true,
            warm_start_zones: true,
            zones: ZoneSettings::default(),
            envelope: EnvelopeConfig::default(),
        }
    }
}

/// Models the controller derives from one view of the network: nominal
/// hydraulics, input gains and the envelope scenarios.
#[derive(Debug)]
pub struct ControllerView {
    /// First step this view is used for.
    pub from_step: usize,
    pub net: Network,
    pub nominal: Arc<Hydraulics>,
    pub gains: Arc<GainMatrix>,
    pub bank: Arc<ScenarioBank>,
}

impl ControllerView {
    /// `net` must carry exactly the events the controller knows about.
    pub fn build(net: Network, schedule: &HydraulicSchedule, set: &UncertaintySet, cfg: &EnvelopeConfig, from_step: usize) -> Result<ControllerView> {
        let nominal = Arc::new(Hydraulics::build(&net, schedule, None)?);
        let gains = Arc::new(extract_gains_from(&nominal, from_step));
        let bank = Arc::new(ScenarioBank::new(&net, schedule, set, cfg)?);
        Ok(ControllerView {
            from_step,
            net,
            nominal,
            gains,
            bank,
        })
    }

    /// Window model from the measured state.
    pub fn model(&self, state: &QualityState, k0: usize, horizon: usize) -> Result<LtvResponseModel> {
        let y_free = free_response(&self.nominal, state, k0, horizon);
        LtvResponseModel::window(self.gains.clone(), k0, horizon, y_free)
    }

    pub fn steps(&self) -> usize {
        self.nominal.steps
    }
}

/// Controller views for every set of events known from `from` onwards.
#[derive(Debug, Clone)]
pub struct ControllerViews {
    views: Vec<Arc<ControllerView>>,
}

impl ControllerViews {
    pub fn build(net: &Network, schedule: &HydraulicSchedule, set: &UncertaintySet, cfg: &EnvelopeConfig, from: usize) -> Result<ControllerViews> {
        let mut starts = vec![from];
        let mut later: Vec<usize> = net.events.iter().map(|e| e.at_step()).filter(|&s| s > from).collect();
        later.sort_unstable();
        later.dedup();
        starts.extend(later);
        let views = starts
            .into_iter()
            .map(|s| Ok(Arc::new(ControllerView::build(with_events_until(net, Some(s))?, schedule, set, cfg, s)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ControllerViews { views })
    }

    pub fn all(&self) -> &[Arc<ControllerView>] {
        &self.views
    }

    /// View in force at step `k`.
    pub fn at(&self, k: usize) -> &Arc<ControllerView> {
        self.views.iter().rev().find(|v| v.from_step <= k).unwrap_or(&self.views[0])
    }
}

/// Envelope from the scenario bank, simulated from the measured state.
pub struct BankPredictor<'a> {
    pub bank: &'a ScenarioBank,
    pub state: &'a QualityState,
    pub k0: usize,
    pub len: usize,
}

impl RobustPredictor for BankPredictor<'_> {
    fn envelope(&self, u: &[f64]) -> Envelope {
        self.bank.envelope(self.state, self.k0, self.len, u)
    }
}

/// Result of one control cycle over the window `k0..k0 + horizon`.
#[derive(Debug, Clone)]
pub struct CycleResult {
    pub k0: usize,
    pub horizon: usize,
    /// Input plan, time-major and clipped to the input bounds.
    pub plan: Vec<f64>,
    pub zones: SafetyZones,
    pub envelope: Option<Envelope>,
    pub zone_status: Option<ZoneStatus>,
    pub qp_status: QpStatus,
    pub zone_iters: usize,
    /// The plan is a fallback, not the solution of this cycle.
    pub degraded: bool,
}

impl CycleResult {
    pub fn decision(&self, t: usize) -> StepDecision {
        let nu = self.plan.len() / self.horizon;
        let ny = self.zones.ny;
        let (sigma_u, sigma_l) = (0..ny).map(|i| self.zones.at(t, i)).unzip();
        let (y_lo, y_hi) = match &self.envelope {
            Some(e) => (e.y_lo[t].clone(), e.y_hi[t].clone()),
            None => (vec![f64::NAN; ny], vec![f64::NAN; ny]),
        };
        StepDecision {
            u: self.plan[t * nu..(t + 1) * nu].to_vec(),
            sigma_u,
            sigma_l,
            y_lo,
            y_hi,
            qp_status: format!("{:?}", self.qp_status),
            zone_status: self.zone_status.as_ref().map_or("Disabled", |s| s.label()).to_string(),
            zone_iters: self.zone_iters,
            degraded: self.degraded,
        }
    }
}

/// Stateful RFMPC controller; carries zones and the last plan between cycles.
#[derive(Debug, Clone)]
pub struct Controller {
    pub task: MpcTask,
    pub options: LoopOptions,
    /// Last applied input.
    pub u_prev: Option<Vec<f64>>,
    zones: Option<(usize, SafetyZones)>,
    plan: Option<(usize, Vec<f64>)>,
}

impl Controller {
    pub fn new(task: MpcTask, options: LoopOptions) -> Controller {
        Controller {
            task,
            options,
            u_prev: None,
            zones: None,
            plan: None,
        }
    }

    /// Drops carried zones, e.g. after the task changes.
    pub fn reset_zones(&mut self) {
        self.zones = None;
    }

    /// Plans the window from `k0` to the end of the horizon.
    pub fn cycle(&mut self, view: &ControllerView, state: &QualityState, k0: usize) -> Result<CycleResult> {
        let horizon = view.steps() - k0;
        let model = view.model(state, k0, horizon)?;
        let predictor = BankPredictor {
            bank: &view.bank,
            state,
            k0,
            len: horizon,
        };
        self.cycle_with(&model, &predictor)
    }

    pub fn cycle_with(&mut self, model: &LtvResponseModel, predictor: &dyn RobustPredictor) -> Result<CycleResult> {
        let (k0, h, ny) = (model.k0, model.horizon, model.ny());
        let initial = match (&self.zones, self.options.warm_start_zones) {
            (Some((pk, z)), true) if *pk <= k0 => z.shifted(k0 - pk, h),
            _ => SafetyZones::zeros(ny, h),
        };
        let u_prev = self.u_prev.clone();
        // `u` is the plan to apply; `degraded` marks a cycle that did not
        // reach robust feasibility and applies a nominal fallback instead
        let (zones, u, degraded, zone_status, qp_status, zone_iters, envelope) = if self.options.use_zones {
            let out = iterate_safety_zones(model, &self.task, predictor, initial, u_prev.as_deref(), &self.options.zones)?;
            let degraded = matches!(out.status, ZoneStatus::ZonesExhausted { .. });
            (out.zones, out.u, degraded, Some(out.status), out.qp_status, out.iterations, out.envelope)
        } else {
            let zones = SafetyZones::zeros(ny, h);
            let (status, x) = solve_plain(model, &self.task, &zones, u_prev.as_deref(), &self.options.zones.qp)?;
            let u = (status == QpStatus::Optimal).then_some(x);
            let env = u.as_ref().map(|u| predictor.envelope(u));
            (zones, u.clone(), u.is_none(), None, status, 0, env)
        };
        match (&u, degraded) {
            (_, false) => log::debug!("cycle at step {k0}: {qp_status:?} after {zone_iters} zone iterations"),
            (Some(_), true) => log::warn!("cycle at step {k0}: zones exhausted ({qp_status:?}), applying the last nominally feasible plan"),
            (None, true) => log::warn!("cycle at step {k0}: no usable plan ({qp_status:?}), falling back to the previous one"),
        }
        let mut plan = match u {
            Some(u) => u,
            None => self.fallback(k0, h, model.nu()),
        };
        for (v, (lo, hi)) in plan.iter_mut().zip(self.task.u_min.iter().zip(&self.task.u_max).cycle()) {
            *v = v.clamp(*lo, *hi);
        }
        self.plan = Some((k0, plan.clone()));
        // zones that led nowhere are not a useful starting point
        self.zones = if degraded { None } else { Some((k0, zones.clone())) };
        Ok(CycleResult {
            k0,
            horizon: h,
            plan,
            zones,
            envelope,
            zone_status,
            qp_status,
            zone_iters,
            degraded,
        })
    }

    /// Last good plan shifted to `k0`, holding its final value; otherwise
    /// the last applied input.
    fn fallback(&self, k0: usize, h: usize, nu: usize) -> Vec<f64> {
        let hold = self.u_prev.clone().unwrap_or_else(|| self.task.u_min.clone());
        let Some((pk, p)) = &self.plan else {
            return (0..h).flat_map(|_| hold.iter().copied()).collect();
        };
        let steps = p.len() / nu;
        (0..h)
            .flat_map(|t| {
                let s = k0 - pk + t;
                if s < steps {
                    p[s * nu..(s + 1) * nu].to_vec()
                } else if steps > 0 {
                    p[(steps - 1) * nu..].to_vec()
                } else {
                    hold.clone()
                }
            })
            .collect()
    }
}

/// Closed-loop experiment whose controller models are shared by every run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub net: Network,
    pub schedule: HydraulicSchedule,
    pub tariff: Tariff,
    pub set: UncertaintySet,
    pub task: MpcTask,
    pub options: LoopOptions,
    pub views: ControllerViews,
}

impl Experiment {
    pub fn new(net: &Network, schedule: HydraulicSchedule, tariff: Tariff, set: UncertaintySet, task: MpcTask, options: LoopOptions) -> Result<Experiment> {
        task.validate()?;
        set.validate()?;
        let views = ControllerViews::build(net, &schedule, &set, &options.envelope, 0)?;
        Ok(Experiment {
            net: net.clone(),
            schedule,
            tariff,
            set,
            task,
            options,
            views,
        })
    }

    /// One closed-loop day against the plant drawn by `realization`.
    pub fn run(&self, realization: &Realization) -> Result<ControllerLog> {
        let plant_net = with_events_until(&self.net, None)?;
        let hyd = Arc::new(Hydraulics::build(&plant_net, &self.schedule, Some(realization))?);
        let mut plant = Plant::new(hyd.clone(), self.net.initial_conc);
        let mut ctrl = Controller::new(self.task.clone(), self.options);
        let mut log = ControllerLog::new(&self.net);
        let steps = hyd.steps;
        let mut k = 0;
        while k < steps {
            let started = Instant::now();
            let cycle = ctrl.cycle(self.views.at(k), &plant.state, k)?;
            log.cycle_wall_s.push(started.elapsed().as_secs_f64());
            let n = self.task.control_horizon.min(steps - k);
            for t in 0..n {
                let d = cycle.decision(t);
                let u = d.u.clone();
                let y = plant.step(&u);
                log.record(&plant_net, &hyd, &self.tariff, k + t, d, y, &self.task.y_min, &self.task.y_max);
                ctrl.u_prev = Some(u);
            }
            k += n;
        }
        Ok(log)
    }

    /// Independent runs, one per seed, in seed order.
    pub fn monte_carlo(&self, seeds: &[u64]) -> Result<Vec<ControllerLog>> {
        let nd = self.net.demand_profiles.len();
        seeds
            .par_iter()
            .map(|&s| self.run(&crate::uncertainty::sample_realization(&self.set, nd, s)))
            .collect()
    }
}

pub fn run_receding_horizon(
    net: &Network,
    schedule: &HydraulicSchedule,
    tariff: &Tariff,
    task: &MpcTask,
    set: &UncertaintySet,
    realization: &Realization,
    options: LoopOptions,
) -> Result<ControllerLog> {
    Experiment::new(net, schedule.clone(), tariff.clone(), set.clone(), task.clone(), options)?.run(realization)
}
