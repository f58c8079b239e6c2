//! Zone-wise RFMPC agents exchanging plans once per control cycle.

use crate::error::{Error, Result};
use crate::ltv::{GainMatrix, LtvResponseModel};
use crate::network::{with_events_until, Network, NodeId};
use crate::plant::hydraulics::{HydraulicSchedule, Tariff};
use crate::plant::quality::QualityState;
use crate::plant::simulate::{Hydraulics, Plant};
use crate::rfmpc::{AgentColumns, Controller, ControllerLog, ControllerView, ControllerViews, CycleResult, LoopOptions, MpcTask, RobustPredictor, StepDecision};
use crate::uncertainty::{Envelope, Realization, ScenarioBank, UncertaintySet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Zone {
    pub id: String,
    pub boosters: Vec<NodeId>,
    pub outputs: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZonePartition {
    pub zones: Vec<Zone>,
}

/// Zone indices resolved against a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneIndex {
    /// Positions in `Network::monitored`.
    pub outputs: Vec<usize>,
    /// Positions in `Network::boosters`.
    pub inputs: Vec<usize>,
    /// Positions of all other boosters, ascending.
    pub others: Vec<usize>,
}

impl ZonePartition {
    /// Zone A = booster 5 with output 16, zone B = booster 10 with output 8.
    pub fn benchmark() -> ZonePartition {
        ZonePartition {
            zones: vec![
                Zone {
                    id: "A".into(),
                    boosters: vec![5],
                    outputs: vec![16],
                },
                Zone {
                    id: "B".into(),
                    boosters: vec![10],
                    outputs: vec![8],
                },
            ],
        }
    }

    /// One zone per booster, paired with the monitored output at the same
    /// position.
    pub fn per_booster(net: &Network) -> ZonePartition {
        ZonePartition {
            zones: net
                .boosters
                .iter()
                .zip(&net.monitored)
                .enumerate()
                .map(|(n, (b, m))| Zone {
                    id: ((b'A' + n as u8) as char).to_string(),
                    boosters: vec![b.node_id],
                    outputs: vec![m.node_id],
                })
                .collect(),
        }
    }

    /// Checks that the zones split boosters and outputs exactly and resolves
    /// their indices.
    pub fn resolve(&self, net: &Network) -> Result<Vec<ZoneIndex>> {
        let boosters = net.booster_ids();
        let outputs = net.monitored_ids();
        let mut seen_b = vec![false; boosters.len()];
        let mut seen_o = vec![false; outputs.len()];
        let mut ids = std::collections::HashSet::new();
        let mut out = Vec::new();
        for z in &self.zones {
            if !ids.insert(z.id.as_str()) {
                return Err(Error::InvalidPartition(format!("duplicate zone id {:?}", z.id)));
            }
            if z.boosters.is_empty() || z.outputs.is_empty() {
                return Err(Error::InvalidPartition(format!("zone {:?} needs a booster and an output", z.id)));
            }
            let mut idx = ZoneIndex {
                outputs: Vec::new(),
                inputs: Vec::new(),
                others: Vec::new(),
            };
            for b in &z.boosters {
                let j = boosters
                    .iter()
                    .position(|x| x == b)
                    .ok_or_else(|| Error::InvalidPartition(format!("zone {:?}: {b} is not a booster", z.id)))?;
                if std::mem::replace(&mut seen_b[j], true) {
                    return Err(Error::InvalidPartition(format!("booster {b} is in two zones")));
                }
                idx.inputs.push(j);
            }
            for o in &z.outputs {
                let i = outputs
                    .iter()
                    .position(|x| x == o)
                    .ok_or_else(|| Error::InvalidPartition(format!("zone {:?}: {o} is not monitored", z.id)))?;
                if std::mem::replace(&mut seen_o[i], true) {
                    return Err(Error::InvalidPartition(format!("output {o} is in two zones")));
                }
                idx.outputs.push(i);
            }
            out.push(idx);
        }
        if let Some(j) = seen_b.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("booster {} is in no zone", boosters[j])));
        }
        if let Some(i) = seen_o.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("output {} is in no zone", outputs[i])));
        }
        for idx in &mut out {
            idx.others = (0..boosters.len()).filter(|j| !idx.inputs.contains(j)).collect();
        }
        Ok(out)
    }
}

/// One agent's share of a window model.
#[derive(Debug, Clone)]
pub struct AgentModel {
    pub index: ZoneIndex,
    /// Own inputs to own outputs, with the centralized free response rows.
    pub own: LtvResponseModel,
    /// Other zones' inputs to own outputs; its free response is zero.
    pub cross: LtvResponseModel,
}

impl AgentModel {
    /// Free response with the other zones' planned inputs folded in.
    pub fn interaction_free_response(&self, others_plan: &[f64]) -> Result<Vec<f64>> {
        let cross = self.cross.predict(others_plan)?;
        Ok(self.own.y_free.iter().zip(&cross).map(|(a, b)| a + b).collect())
    }
}

fn split_gains(gains: &GainMatrix, index: &ZoneIndex) -> (Arc<GainMatrix>, Arc<GainMatrix>) {
    (Arc::new(gains.select(&index.outputs, &index.inputs)), Arc::new(gains.select(&index.outputs, &index.others)))
}

fn agent_model(own: Arc<GainMatrix>, cross: Arc<GainMatrix>, model: &LtvResponseModel, index: &ZoneIndex) -> Result<AgentModel> {
    let ny = model.ny();
    let y_free: Vec<f64> = (0..model.horizon).flat_map(|t| index.outputs.iter().map(move |&i| model.y_free[t * ny + i])).collect();
    let zeros = vec![0.0; y_free.len()];
    Ok(AgentModel {
        index: index.clone(),
        own: LtvResponseModel::window(own, model.k0, model.horizon, y_free)?,
        cross: LtvResponseModel::window(cross, model.k0, model.horizon, zeros)?,
    })
}

/// Row and column blocks of `model` for every zone.
pub fn decompose(model: &LtvResponseModel, net: &Network, partition: &ZonePartition) -> Result<Vec<AgentModel>> {
    partition
        .resolve(net)?
        .iter()
        .map(|idx| {
            let (own, cross) = split_gains(&model.gains, idx);
            agent_model(own, cross, model, idx)
        })
        .collect()
}

/// Planned inputs of one agent over the window starting at `issued_at`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentPlan {
    pub agent: usize,
    pub issued_at: usize,
    /// Time-major over the agent's own boosters.
    pub u: Vec<f64>,
}

impl AgentPlan {
    /// Plan over `k0..k0 + len`, holding the last value past its end.
    pub fn aligned(&self, nu: usize, k0: usize, len: usize) -> Vec<f64> {
        let steps = self.u.len() / nu.max(1);
        (0..len)
            .flat_map(|t| {
                let s = (k0 + t).saturating_sub(self.issued_at);
                let s = s.min(steps.saturating_sub(1));
                (0..nu).map(move |j| if steps == 0 { 0.0 } else { self.u[s * nu + j] })
            })
            .collect()
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.agent as u64).to_le_bytes());
        h.update((self.issued_at as u64).to_le_bytes());
        for v in &self.u {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Latest plan per agent; overwritten at each barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Mailbox {
    slots: Vec<AgentPlan>,
}

impl Mailbox {
    /// Zero plans for every agent.
    pub fn new(inputs_per_agent: &[usize]) -> Mailbox {
        Mailbox {
            slots: inputs_per_agent
                .iter()
                .enumerate()
                .map(|(a, &nu)| AgentPlan {
                    agent: a,
                    issued_at: 0,
                    u: vec![0.0; nu],
                })
                .collect(),
        }
    }

    pub fn read(&self, agent: usize) -> &AgentPlan {
        &self.slots[agent]
    }

    pub fn publish(&mut self, plan: AgentPlan) {
        let a = plan.agent;
        self.slots[a] = plan;
    }
}

/// One published plan, for the message trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub step: usize,
    pub from: String,
    pub plan_hash: String,
}

/// Envelope of the agent's outputs: full-network scenarios with its own
/// candidate inputs and the others' plans held fixed.
struct AgentPredictor<'a> {
    bank: &'a ScenarioBank,
    state: &'a QualityState,
    k0: usize,
    len: usize,
    nu: usize,
    index: &'a ZoneIndex,
    others: &'a [f64],
}

impl RobustPredictor for AgentPredictor<'_> {
    fn envelope(&self, u_own: &[f64]) -> Envelope {
        let (na, no) = (self.index.inputs.len(), self.index.others.len());
        let mut u = vec![0.0; self.len * self.nu];
        for t in 0..self.len {
            for (a, &j) in self.index.inputs.iter().enumerate() {
                u[t * self.nu + j] = u_own[t * na + a];
            }
            for (b, &j) in self.index.others.iter().enumerate() {
                u[t * self.nu + j] = self.others[t * no + b];
            }
        }
        let full = self.bank.envelope(self.state, self.k0, self.len, &u);
        let pick = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> { rows.into_iter().map(|r| self.index.outputs.iter().map(|&i| r[i]).collect()).collect() };
        Envelope {
            y_lo: pick(full.y_lo),
            y_hi: pick(full.y_hi),
        }
    }
}

/// Other agents' plans for the window, in the order of `index.others`.
fn others_plan(mailbox: &Mailbox, indices: &[ZoneIndex], me: usize, k0: usize, len: usize) -> Vec<f64> {
    let others = &indices[me].others;
    let mut per_input: Vec<Vec<f64>> = vec![Vec::new(); others.len()];
    for (a, idx) in indices.iter().enumerate() {
        if a == me {
            continue;
        }
        let nu = idx.inputs.len();
        let plan = mailbox.read(a).aligned(nu, k0, len);
        for (b, &j) in idx.inputs.iter().enumerate() {
            let pos = others.iter().position(|&o| o == j).expect("partition covers every booster");
            per_input[pos] = (0..len).map(|t| plan[t * nu + b]).collect();
        }
    }
    (0..len).flat_map(|t| per_input.iter().map(move |p| p[t])).collect()
}

/// One agent's cycle: fold the others' plans into the free response, run
/// the zone iteration on its own block and return its plan.
#[allow(clippy::too_many_arguments)]
pub fn agent_step(
    ctrl: &mut Controller,
    agent: usize,
    model: &AgentModel,
    mailbox: &Mailbox,
    indices: &[ZoneIndex],
    bank: &ScenarioBank,
    state: &QualityState,
    nu_total: usize,
) -> Result<(CycleResult, AgentPlan)> {
    let (k0, len) = (model.own.k0, model.own.horizon);
    let others = others_plan(mailbox, indices, agent, k0, len);
    let own = model.own.with_free_response(model.interaction_free_response(&others)?);
    let predictor = AgentPredictor {
        bank,
        state,
        k0,
        len,
        nu: nu_total,
        index: &model.index,
        others: &others,
    };
    let cycle = ctrl.cycle_with(&own, &predictor)?;
    let plan = AgentPlan {
        agent,
        issued_at: k0,
        u: cycle.plan.clone(),
    };
    Ok((cycle, plan))
}

/// Result of a distributed run.
#[derive(Debug, Clone)]
pub struct DistributedOutcome {
    pub log: ControllerLog,
    pub messages: Vec<Message>,
}

impl DistributedOutcome {
    /// Message trace as JSON lines.
    pub fn trace_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for m in &self.messages {
            s.push_str(&serde_json::to_string(m)?);
            s.push('\n');
        }
        Ok(s)
    }
}

fn merge(cycles: &[CycleResult], indices: &[ZoneIndex], ny: usize, nu: usize, t: usize) -> StepDecision {
    let mut d = StepDecision {
        u: vec![0.0; nu],
        sigma_u: vec![0.0; ny],
        sigma_l: vec![0.0; ny],
        y_lo: vec![0.0; ny],
        y_hi: vec![0.0; ny],
        qp_status: "Optimal".into(),
        zone_status: "RobustlyFeasible".into(),
        zone_iters: 0,
        degraded: false,
    };
    for (c, idx) in cycles.iter().zip(indices) {
        let a = c.decision(t);
        for (p, &j) in idx.inputs.iter().enumerate() {
            d.u[j] = a.u[p];
        }
        for (p, &i) in idx.outputs.iter().enumerate() {
            d.sigma_u[i] = a.sigma_u[p];
            d.sigma_l[i] = a.sigma_l[p];
            d.y_lo[i] = a.y_lo[p];
            d.y_hi[i] = a.y_hi[p];
        }
        if a.qp_status != "Optimal" {
            d.qp_status = a.qp_status.clone();
        }
        let rank = |s: &str| match s {
            "RobustlyFeasible" => 0,
            "Disabled" => 1,
            "MaxIterations" => 2,
            _ => 3,
        };
        if rank(&a.zone_status) > rank(&d.zone_status) {
            d.zone_status = a.zone_status.clone();
        }
        d.zone_iters = d.zone_iters.max(a.zone_iters);
        d.degraded |= a.degraded;
    }
    d
}

/// Distributed closed loop: each cycle every agent reads the plans of the
/// previous round, the agents plan concurrently, then all new plans are
/// published together.
#[allow(clippy::too_many_arguments)]
pub fn run_drfmpc(
    net: &Network,
    schedule: &HydraulicSchedule,
    tariff: &Tariff,
    partition: &ZonePartition,
    task: &MpcTask,
    set: &UncertaintySet,
    realization: &Realization,
    options: LoopOptions,
) -> Result<DistributedOutcome> {
    let views = ControllerViews::build(net, schedule, set, &options.envelope, 0)?;
    run_drfmpc_with(net, &views, schedule, tariff, partition, task, realization, options)
}

/// [`run_drfmpc`] reusing prebuilt controller views.
#[allow(clippy::too_many_arguments)]
pub fn run_drfmpc_with(
    net: &Network,
    views: &ControllerViews,
    schedule: &HydraulicSchedule,
    tariff: &Tariff,
    partition: &ZonePartition,
    task: &MpcTask,
    realization: &Realization,
    options: LoopOptions,
) -> Result<DistributedOutcome> {
    task.validate()?;
    let indices = partition.resolve(net)?;
    let (ny, nu) = (task.ny(), task.nu());
    let plant_net = with_events_until(net, None)?;
    let hyd = Arc::new(Hydraulics::build(&plant_net, schedule, Some(realization))?);
    let mut plant = Plant::new(hyd.clone(), net.initial_conc);
    let blocks: Vec<(usize, Vec<(Arc<GainMatrix>, Arc<GainMatrix>)>)> = views
        .all()
        .iter()
        .map(|v| (v.from_step, indices.iter().map(|idx| split_gains(&v.gains, idx)).collect()))
        .collect();
    let blocks_at = |k: usize| &blocks.iter().rev().find(|(s, _)| *s <= k).unwrap_or(&blocks[0]).1;

    let mut agents: Vec<Controller> = indices.iter().map(|idx| Controller::new(task.select(&idx.outputs, &idx.inputs), options)).collect();
    let mut mailbox = Mailbox::new(&indices.iter().map(|i| i.inputs.len()).collect::<Vec<_>>());
    let mut log = ControllerLog::new(net);
    log.agents = partition
        .zones
        .iter()
        .map(|z| AgentColumns {
            id: z.id.clone(),
            booster_ids: z.boosters.clone(),
            u: Vec::new(),
            zone_iters: Vec::new(),
        })
        .collect();
    let mut messages = Vec::new();
    let steps = hyd.steps;

    let mut k = 0;
    while k < steps {
        let view: &ControllerView = views.at(k);
        let horizon = view.steps() - k;
        let central = view.model(&plant.state, k, horizon)?;
        let blk = blocks_at(k);
        let models = indices
            .iter()
            .zip(blk)
            .map(|(idx, (own, cross))| agent_model(own.clone(), cross.clone(), &central, idx))
            .collect::<Result<Vec<_>>>()?;

        let started = Instant::now();
        let state = &plant.state;
        let inbox = &mailbox;
        let results: Vec<(CycleResult, AgentPlan)> = agents
            .par_iter_mut()
            .enumerate()
            .map(|(a, ctrl)| agent_step(ctrl, a, &models[a], inbox, &indices, &view.bank, state, nu))
            .collect::<Result<Vec<_>>>()?;
        log.cycle_wall_s.push(started.elapsed().as_secs_f64());

        let mut cycles = Vec::with_capacity(results.len());
        for (c, plan) in results {
            messages.push(Message {
                step: k,
                from: partition.zones[plan.agent].id.clone(),
                plan_hash: plan.hash(),
            });
            mailbox.publish(plan);
            cycles.push(c);
        }

        let n = task.control_horizon.min(steps - k);
        for t in 0..n {
            let d = merge(&cycles, &indices, ny, nu, t);
            for (a, c) in cycles.iter().enumerate() {
                let ad = c.decision(t);
                log.agents[a].u.push(ad.u.clone());
                log.agents[a].zone_iters.push(ad.zone_iters);
                agents[a].u_prev = Some(ad.u);
            }
            let y = plant.step(&d.u);
            log.record(&plant_net, &hyd, tariff, k + t, d, y, &task.y_min, &task.y_max);
        }
        k += n;
    }
    Ok(DistributedOutcome { log, messages })
}
