//! Lagrangian chlorine transport: plug flow in pipes, instantaneous mixing
//! at nodes, complete mixing in tanks, first-order bulk decay.

use crate::network::{Network, NodeId, NodeKind};
use std::collections::VecDeque;

/// Flows below this magnitude (m³/h) count as stagnant.
pub const STAGNANT_FLOW: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Junction,
    Source,
    Tank(usize),
    Booster(usize),
}

/// Index structure of a network, shared by every simulation over it.
#[derive(Debug, Clone)]
pub struct Topology {
    pub node_ids: Vec<NodeId>,
    pub role: Vec<Role>,
    pub source_conc: Vec<f64>,
    pub pipe_ends: Vec<(usize, usize)>,
    pub pipe_volume: Vec<f64>,
    pub pump_ends: Vec<(usize, usize)>,
    pub tank_node: Vec<usize>,
    pub booster_node: Vec<usize>,
    pub output_node: Vec<usize>,
}

impl Topology {
    pub fn new(net: &Network) -> Topology {
        let idx = net.node_index();
        let mut role: Vec<Role> = net
            .nodes
            .iter()
            .map(|n| match n.kind {
                NodeKind::Source => Role::Source,
                _ => Role::Junction,
            })
            .collect();
        for (t, tank) in net.tanks.iter().enumerate() {
            role[idx[&tank.node_id]] = Role::Tank(t);
        }
        for (b, booster) in net.boosters.iter().enumerate() {
            role[idx[&booster.node_id]] = Role::Booster(b);
        }
        Topology {
            node_ids: net.nodes.iter().map(|n| n.id).collect(),
            role,
            source_conc: net.nodes.iter().map(|n| n.source_conc).collect(),
            pipe_ends: net.pipes.iter().map(|p| (idx[&p.from], idx[&p.to])).collect(),
            pipe_volume: net.pipes.iter().map(|p| p.volume).collect(),
            pump_ends: net.pumps.iter().map(|p| (idx[&p.source_node], idx[&p.discharge_node])).collect(),
            tank_node: net.tanks.iter().map(|t| idx[&t.node_id]).collect(),
            booster_node: net.boosters.iter().map(|b| idx[&b.node_id]).collect(),
            output_node: net.monitored.iter().map(|m| idx[&m.node_id]).collect(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_pipes(&self) -> usize {
        self.pipe_ends.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inlet {
    Pipe(u32),
    Pump(u32),
}

/// Transport pattern of one quality step, derived from the flows.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    /// Travel time in quality steps; 0 for stagnant pipes.
    pub delay: Vec<u32>,
    /// +1 when flowing from `from` to `to`, -1 reversed, 0 stagnant.
    pub direction: Vec<i8>,
    mix_start: Vec<u32>,
    mix: Vec<(Inlet, f64)>,
    /// Inflow into each tank (m³/h, zero while draining).
    pub tank_fill: Vec<f64>,
    /// Water passing through each booster node (m³/h).
    pub booster_flow: Vec<f64>,
}

impl StepPlan {
    pub fn new(topo: &Topology, pipe_flow: &[f64], pump_flow: &[f64], tank_flow: &[f64], dt_h: f64, max_delay: u32) -> StepPlan {
        let np = topo.num_pipes();
        let mut delay = vec![0u32; np];
        let mut direction = vec![0i8; np];
        let mut inlets: Vec<Vec<(Inlet, f64)>> = vec![Vec::new(); topo.num_nodes()];
        for p in 0..np {
            let q = pipe_flow[p];
            if q.abs() < STAGNANT_FLOW {
                continue;
            }
            let steps = (topo.pipe_volume[p] / q.abs() / dt_h).round();
            delay[p] = steps.clamp(1.0, max_delay.max(1) as f64) as u32;
            let (a, b) = topo.pipe_ends[p];
            let down = if q > 0.0 {
                direction[p] = 1;
                b
            } else {
                direction[p] = -1;
                a
            };
            inlets[down].push((Inlet::Pipe(p as u32), q.abs()));
        }
        for (i, &(_, d)) in topo.pump_ends.iter().enumerate() {
            if pump_flow[i] > STAGNANT_FLOW {
                inlets[d].push((Inlet::Pump(i as u32), pump_flow[i]));
            }
        }
        let booster_flow = topo
            .booster_node
            .iter()
            .map(|&n| inlets[n].iter().map(|(_, q)| q).sum())
            .collect();
        let mut mix_start = Vec::with_capacity(topo.num_nodes() + 1);
        let mut mix = Vec::new();
        mix_start.push(0);
        for list in inlets {
            let total: f64 = list.iter().map(|(_, q)| q).sum();
            mix.extend(list.into_iter().map(|(i, q)| (i, q / total)));
            mix_start.push(mix.len() as u32);
        }
        StepPlan {
            delay,
            direction,
            mix_start,
            mix,
            tank_fill: tank_flow.iter().map(|&q| (-q).max(0.0)).collect(),
            booster_flow,
        }
    }

    /// Inlets of node `n` with flow-proportional weights summing to one.
    pub fn inlets(&self, n: usize) -> &[(Inlet, f64)] {
        &self.mix[self.mix_start[n] as usize..self.mix_start[n + 1] as usize]
    }
}

/// Flow-weighted mean of inflow concentrations.
pub fn mix(inflows: &[(f64, f64)]) -> Option<f64> {
    let total: f64 = inflows.iter().map(|(q, _)| q).sum();
    if total <= 0.0 {
        return None;
    }
    Some(inflows.iter().map(|(q, c)| q * c).sum::<f64>() / total)
}

/// Concentrations in every pipe segment, node and tank.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityState {
    /// Front of each buffer is the parcel arriving downstream next.
    pub segments: Vec<VecDeque<f64>>,
    pub direction: Vec<i8>,
    pub node_conc: Vec<f64>,
    pub tank_conc: Vec<f64>,
}

impl QualityState {
    /// Uniform concentration everywhere, buffers sized by `plan`.
    pub fn uniform(topo: &Topology, plan: &StepPlan, conc: f64) -> QualityState {
        let segments = plan
            .delay
            .iter()
            .map(|&d| VecDeque::from(vec![conc; d.max(1) as usize]))
            .collect();
        QualityState {
            segments,
            direction: plan.direction.iter().map(|&d| if d == 0 { 1 } else { d }).collect(),
            node_conc: vec![conc; topo.num_nodes()],
            tank_conc: vec![conc; topo.tank_node.len()],
        }
    }

    pub fn zero(topo: &Topology, plan: &StepPlan) -> QualityState {
        QualityState::uniform(topo, plan, 0.0)
    }

    pub fn max_conc(&self) -> f64 {
        let seg = self.segments.iter().flat_map(|s| s.iter()).fold(0.0f64, |a, &b| a.max(b));
        self.node_conc.iter().chain(&self.tank_conc).fold(seg, |a, &b| a.max(b))
    }

    pub fn min_conc(&self) -> f64 {
        let seg = self.segments.iter().flat_map(|s| s.iter()).fold(f64::INFINITY, |a, &b| a.min(b));
        self.node_conc.iter().chain(&self.tank_conc).fold(seg, |a, &b| a.min(b))
    }

    pub fn is_zero(&self) -> bool {
        self.segments.iter().all(|s| s.iter().all(|&v| v == 0.0))
            && self.node_conc.iter().all(|&v| v == 0.0)
            && self.tank_conc.iter().all(|&v| v == 0.0)
    }
}

/// Per-step decay factors `exp(-k Δt)` for pipes and tanks.
#[derive(Debug, Clone, PartialEq)]
pub struct Decay {
    pub pipe: Vec<f64>,
    pub tank: Vec<f64>,
}

impl Decay {
    pub fn new(pipe_rates: &[f64], tank_rates: &[f64], dt_h: f64) -> Decay {
        Decay {
            pipe: pipe_rates.iter().map(|k| (-k * dt_h).exp()).collect(),
            tank: tank_rates.iter().map(|k| (-k * dt_h).exp()).collect(),
        }
    }
}

fn mixed(topo: &Topology, plan: &StepPlan, state: &QualityState, i: usize) -> Option<f64> {
    let inl = plan.inlets(i);
    if inl.is_empty() {
        return None;
    }
    let c = inl
        .iter()
        .map(|&(inlet, w)| {
            w * match inlet {
                Inlet::Pipe(p) => state.segments[p as usize][0],
                Inlet::Pump(pu) => state.node_conc[topo.pump_ends[pu as usize].0],
            }
        })
        .sum();
    Some(c)
}

fn resize(buf: &mut VecDeque<f64>, len: usize) {
    let old = buf.len();
    if old == len {
        return;
    }
    let src = buf.make_contiguous().to_vec();
    buf.clear();
    buf.extend((0..len).map(|i| src[i * old / len]));
}

/// Advances the state by one quality step and writes the monitored-node
/// concentrations at the start of the step into `y`.
///
/// `tank_volume` is the volume of each tank at the start of the step (m³).
#[allow(clippy::too_many_arguments)]
pub fn step(
    topo: &Topology,
    plan: &StepPlan,
    decay: &Decay,
    state: &mut QualityState,
    u: &[f64],
    sources_on: bool,
    tank_volume: &[f64],
    dt_h: f64,
    y: &mut [f64],
) {
    // Travel times changed with the flows: reshape the buffers first.
    for p in 0..topo.num_pipes() {
        let dir = plan.direction[p];
        if dir == 0 {
            continue;
        }
        let len = plan.delay[p] as usize;
        if dir != state.direction[p] {
            let (a, b) = topo.pipe_ends[p];
            let upstream = if dir > 0 { a } else { b };
            let c = state.node_conc[upstream];
            let buf = &mut state.segments[p];
            buf.clear();
            buf.resize(len, c);
            state.direction[p] = dir;
        } else {
            resize(&mut state.segments[p], len);
        }
    }

    // Node concentrations.
    let n = topo.num_nodes();
    for i in 0..n {
        if topo.role[i] == Role::Source {
            state.node_conc[i] = if sources_on { topo.source_conc[i] } else { 0.0 };
        }
    }
    let mut tank_inflow_conc = vec![None; topo.tank_node.len()];
    for i in 0..n {
        match topo.role[i] {
            Role::Source => {}
            Role::Booster(b) => state.node_conc[i] = u[b],
            Role::Tank(t) => {
                tank_inflow_conc[t] = mixed(topo, plan, state, i);
                state.node_conc[i] = state.tank_conc[t];
            }
            Role::Junction => {
                if let Some(c) = mixed(topo, plan, state, i) {
                    state.node_conc[i] = c;
                }
            }
        }
    }
    for (k, &node) in topo.output_node.iter().enumerate() {
        y[k] = state.node_conc[node];
    }

    // Tanks: complete mixing of the inflow, then decay.
    for t in 0..topo.tank_node.len() {
        let fill = plan.tank_fill[t] * dt_h;
        if let (Some(cin), true) = (tank_inflow_conc[t], fill > 0.0) {
            let v = tank_volume[t].max(0.0);
            state.tank_conc[t] = (v * state.tank_conc[t] + fill * cin) / (v + fill);
        }
        state.tank_conc[t] *= decay.tank[t];
    }

    // Pipes: shift one parcel, then decay along the pipe.
    for p in 0..topo.num_pipes() {
        let buf = &mut state.segments[p];
        let dir = plan.direction[p];
        if dir != 0 {
            let (a, b) = topo.pipe_ends[p];
            let upstream = if dir > 0 { a } else { b };
            buf.pop_front();
            buf.push_back(state.node_conc[upstream]);
        }
        let f = decay.pipe[p];
        for v in buf.iter_mut() {
            *v *= f;
        }
    }
}
