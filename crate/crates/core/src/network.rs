//! Static network description, validation and disturbance events.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

pub type NodeId = u32;
pub type PipeId = u32;
pub type PumpId = u32;

/// Discretization of the control horizon. All durations are in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub horizon_s: u32,
    pub dt_hydraulic_s: u32,
    pub dt_quality_s: u32,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            horizon_s: 24 * 3600,
            dt_hydraulic_s: 3600,
            dt_quality_s: 300,
        }
    }
}

impl TimeGrid {
    pub fn steps_quality(&self) -> usize {
        (self.horizon_s / self.dt_quality_s) as usize
    }

    pub fn steps_hydraulic(&self) -> usize {
        (self.horizon_s / self.dt_hydraulic_s) as usize
    }

    pub fn steps_per_hydraulic(&self) -> usize {
        (self.dt_hydraulic_s / self.dt_quality_s) as usize
    }

    pub fn dt_quality_h(&self) -> f64 {
        self.dt_quality_s as f64 / 3600.0
    }

    pub fn dt_hydraulic_h(&self) -> f64 {
        self.dt_hydraulic_s as f64 / 3600.0
    }

    /// Hydraulic step containing quality step `k`.
    pub fn hydraulic_step(&self, k: usize) -> usize {
        k / self.steps_per_hydraulic()
    }

    /// Hour of day (0..24) at the start of quality step `k`.
    pub fn hour_of_day(&self, k: usize) -> usize {
        ((k as u64 * self.dt_quality_s as u64 / 3600) % 24) as usize
    }

    fn problems(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.dt_quality_s == 0 || self.dt_hydraulic_s == 0 || self.horizon_s == 0 {
            v.push("time grid durations must be > 0".to_string());
            return v;
        }
        if self.dt_hydraulic_s % self.dt_quality_s != 0 {
            v.push("dt_hydraulic must be an integer multiple of dt_quality".to_string());
        }
        if self.horizon_s % self.dt_hydraulic_s != 0 {
            v.push("horizon must be an integer multiple of dt_hydraulic".to_string());
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Junction,
    Source,
    Tank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Chlorine concentration of water leaving a source (mg/L).
    #[serde(default, skip_serializing_if = "is_zero")]
    pub source_conc: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipe {
    pub id: PipeId,
    pub from: NodeId,
    pub to: NodeId,
    /// m³
    pub volume: f64,
    pub resistance: f64,
    /// Bulk decay rate k_b (1/h).
    pub decay_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tank {
    pub node_id: NodeId,
    /// m²
    pub area: f64,
    pub level_min: f64,
    pub level_max: f64,
    pub level_init: f64,
    /// Bound on the fill/drain rate (m³/h).
    pub flow_max: f64,
    /// Bulk decay rate inside the tank (1/h).
    #[serde(default, skip_serializing_if = "is_zero")]
    pub decay_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pump {
    pub id: PumpId,
    pub source_node: NodeId,
    pub discharge_node: NodeId,
    /// m³/h
    pub flow_max: f64,
    /// kWh per m³
    pub power_coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Booster {
    pub node_id: NodeId,
    pub u_min: f64,
    pub u_max: f64,
    /// Largest change of the setpoint per quality step (mg/L).
    pub rate_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitoredOutput {
    pub node_id: NodeId,
    pub y_min: f64,
    pub y_max: f64,
    pub y_terminal: f64,
    pub terminal_tol: f64,
}

/// Demand in m³/h for every quality step of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandProfile {
    pub node_id: NodeId,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioEvent {
    PipeBurst { at_step: usize, pipe_id: PipeId },
    DemandSurge { at_step: usize, node_id: NodeId, multiplier: f64 },
    PressureAnomaly { at_step: usize, flag: bool },
}

impl ScenarioEvent {
    pub fn at_step(&self) -> usize {
        match *self {
            ScenarioEvent::PipeBurst { at_step, .. }
            | ScenarioEvent::DemandSurge { at_step, .. }
            | ScenarioEvent::PressureAnomaly { at_step, .. } => at_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub time_grid: TimeGrid,
    pub nodes: Vec<Node>,
    pub pipes: Vec<Pipe>,
    pub tanks: Vec<Tank>,
    pub pumps: Vec<Pump>,
    pub boosters: Vec<Booster>,
    pub monitored: Vec<MonitoredOutput>,
    pub demand_profiles: Vec<DemandProfile>,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
    /// Uniform chlorine concentration of all water at the start (mg/L).
    pub initial_conc: f64,
    /// Pipes removed by bursts, with the step from which they are out.
    #[serde(default)]
    pub burst_pipes: Vec<(PipeId, usize)>,
}

/// Every violated invariant, in a stable order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.contains(needle))
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("network is valid");
        }
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

impl Network {
    pub fn node_index(&self) -> HashMap<NodeId, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn pipe(&self, id: PipeId) -> Option<&Pipe> {
        self.pipes.iter().find(|p| p.id == id)
    }

    pub fn count_kind(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn booster_ids(&self) -> Vec<NodeId> {
        self.boosters.iter().map(|b| b.node_id).collect()
    }

    pub fn monitored_ids(&self) -> Vec<NodeId> {
        self.monitored.iter().map(|m| m.node_id).collect()
    }

    /// Whether pipe `id` carries flow at quality step `k`.
    pub fn pipe_active(&self, id: PipeId, k: usize) -> bool {
        !self.burst_pipes.iter().any(|&(p, from)| p == id && k >= from)
    }

    /// Undirected adjacency over pipes (active at step `k`) and pumps.
    fn adjacency(&self, k: usize) -> HashMap<NodeId, Vec<NodeId>> {
        let mut adj: HashMap<NodeId, Vec<NodeId>> = self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        let mut link = |a: NodeId, b: NodeId| {
            if let (true, true) = (adj.contains_key(&a), adj.contains_key(&b)) {
                adj.get_mut(&a).unwrap().push(b);
                adj.get_mut(&b).unwrap().push(a);
            }
        };
        for p in self.pipes.iter().filter(|p| self.pipe_active(p.id, k)) {
            link(p.from, p.to);
        }
        for p in &self.pumps {
            link(p.source_node, p.discharge_node);
        }
        adj
    }

    fn reachable_from_sources(&self, k: usize) -> HashSet<NodeId> {
        let adj = self.adjacency(k);
        let mut seen: HashSet<NodeId> = HashSet::new();
        let mut queue: VecDeque<NodeId> = self.nodes.iter().filter(|n| n.kind == NodeKind::Source).map(|n| n.id).collect();
        seen.extend(queue.iter().copied());
        while let Some(v) = queue.pop_front() {
            for &w in &adj[&v] {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen
    }

    /// Hop distance of every node from the nearest source (pumps count as a hop).
    pub fn hops_from_sources(&self) -> HashMap<NodeId, usize> {
        let adj = self.adjacency(0);
        let mut dist: HashMap<NodeId, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        for n in self.nodes.iter().filter(|n| n.kind == NodeKind::Source) {
            dist.insert(n.id, 0);
            queue.push_back(n.id);
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[&v];
            for &w in &adj[&v] {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Whether a simple path source → `via` → monitored node exists.
    fn on_source_monitored_path(&self, via: NodeId) -> bool {
        // Two internally vertex-disjoint paths from `via`: one to a source,
        // one to a monitored node. Unit-capacity max-flow on the split graph.
        let ids: Vec<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        let idx: HashMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let n = ids.len();
        // vertex v: in = 2v, out = 2v + 1; X = 2n, Y = 2n + 1, Z = 2n + 2
        let (x, y, z) = (2 * n, 2 * n + 1, 2 * n + 2);
        let mut g = FlowGraph::new(2 * n + 3);
        for v in 0..n {
            let cap = if ids[v] == via { 2 } else { 1 };
            g.add(2 * v, 2 * v + 1, cap);
        }
        let adj = self.adjacency(0);
        for (&a, nbrs) in &adj {
            for &b in nbrs {
                g.add(2 * idx[&a] + 1, 2 * idx[&b], 1);
            }
        }
        for node in &self.nodes {
            if node.kind == NodeKind::Source && node.id != via {
                g.add(2 * idx[&node.id] + 1, x, 1);
            }
        }
        for m in &self.monitored {
            if m.node_id != via {
                if let Some(&i) = idx.get(&m.node_id) {
                    g.add(2 * i + 1, y, 1);
                }
            }
        }
        g.add(x, z, 1);
        g.add(y, z, 1);
        match idx.get(&via) {
            Some(&v) => g.max_flow(2 * v, z) >= 2,
            None => false,
        }
    }
}

struct FlowGraph {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<i32>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph {
            head: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    fn add(&mut self, a: usize, b: usize, c: i32) {
        self.head[a].push(self.to.len());
        self.to.push(b);
        self.cap.push(c);
        self.head[b].push(self.to.len());
        self.to.push(a);
        self.cap.push(0);
    }

    fn max_flow(&mut self, s: usize, t: usize) -> i32 {
        let mut total = 0;
        loop {
            let mut prev = vec![usize::MAX; self.head.len()];
            let mut queue = VecDeque::from([s]);
            let mut seen = vec![false; self.head.len()];
            seen[s] = true;
            while let Some(v) = queue.pop_front() {
                for &e in &self.head[v] {
                    let w = self.to[e];
                    if self.cap[e] > 0 && !seen[w] {
                        seen[w] = true;
                        prev[w] = e;
                        queue.push_back(w);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            let mut v = t;
            while v != s {
                let e = prev[v];
                self.cap[e] -= 1;
                self.cap[e ^ 1] += 1;
                v = self.to[e ^ 1];
            }
            total += 1;
        }
    }
}

fn duplicates<T: Copy + Ord>(ids: impl Iterator<Item = T>) -> Vec<T> {
    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dup.insert(id);
        }
    }
    dup.into_iter().collect()
}

/// Lists every invariant violation; an empty report means the network is runnable.
pub fn validate(net: &Network) -> ValidationReport {
    let mut v: Vec<String> = net.time_grid.problems();
    let steps = if v.is_empty() { net.time_grid.steps_quality() } else { 0 };

    for id in duplicates(net.nodes.iter().map(|n| n.id)) {
        v.push(format!("duplicate node id {id}"));
    }
    for id in duplicates(net.pipes.iter().map(|p| p.id)) {
        v.push(format!("duplicate pipe id {id}"));
    }
    for id in duplicates(net.pumps.iter().map(|p| p.id)) {
        v.push(format!("duplicate pump id {id}"));
    }
    let kind: HashMap<NodeId, NodeKind> = net.nodes.iter().map(|n| (n.id, n.kind)).collect();

    for n in &net.nodes {
        if !(n.source_conc >= 0.0) {
            v.push(format!("node {}: source concentration must be >= 0", n.id));
        }
        if n.kind != NodeKind::Source && n.source_conc != 0.0 {
            v.push(format!("node {}: only sources carry a source concentration", n.id));
        }
    }
    for p in &net.pipes {
        for end in [p.from, p.to] {
            match kind.get(&end) {
                None => v.push(format!("pipe {}: unknown node {end}", p.id)),
                Some(NodeKind::Source) => v.push(format!("pipe {}: sources connect through pumps only", p.id)),
                _ => {}
            }
        }
        if p.from == p.to {
            v.push(format!("pipe {}: endpoints must differ", p.id));
        }
        if !(p.volume > 0.0) {
            v.push(format!("pipe {}: pipe volume must be > 0", p.id));
        }
        if !(p.resistance > 0.0) {
            v.push(format!("pipe {}: pipe resistance must be > 0", p.id));
        }
        if !(p.decay_rate >= 0.0) {
            v.push(format!("pipe {}: decay rate must be >= 0", p.id));
        }
    }
    let mut tank_nodes = HashSet::new();
    for t in &net.tanks {
        tank_nodes.insert(t.node_id);
        if kind.get(&t.node_id) != Some(&NodeKind::Tank) {
            v.push(format!("tank {}: node must exist with kind tank", t.node_id));
        }
        if !(t.area > 0.0) {
            v.push(format!("tank {}: area must be > 0", t.node_id));
        }
        if !(t.level_min <= t.level_init && t.level_init <= t.level_max) {
            v.push(format!("tank {}: level_min <= level_init <= level_max violated", t.node_id));
        }
        if !(t.flow_max >= 0.0) || !(t.decay_rate >= 0.0) {
            v.push(format!("tank {}: flow_max and decay rate must be >= 0", t.node_id));
        }
    }
    for n in net.nodes.iter().filter(|n| n.kind == NodeKind::Tank) {
        if !tank_nodes.contains(&n.id) {
            v.push(format!("node {}: tank node without a tank record", n.id));
        }
    }
    for p in &net.pumps {
        if kind.get(&p.source_node) != Some(&NodeKind::Source) {
            v.push(format!("pump {}: source node {} must be a source", p.id, p.source_node));
        }
        match kind.get(&p.discharge_node) {
            Some(NodeKind::Junction) => {}
            _ => v.push(format!("pump {}: discharge node {} must be a junction", p.id, p.discharge_node)),
        }
        if !(p.flow_max >= 0.0) {
            v.push(format!("pump {}: flow_max must be >= 0", p.id));
        }
        if !(p.power_coeff > 0.0) {
            v.push(format!("pump {}: power_coeff must be > 0", p.id));
        }
    }
    for id in duplicates(net.boosters.iter().map(|b| b.node_id)) {
        v.push(format!("duplicate booster at node {id}"));
    }
    for b in &net.boosters {
        if kind.get(&b.node_id) != Some(&NodeKind::Junction) {
            v.push(format!("booster {}: node must be a junction", b.node_id));
        }
        if !(0.0 <= b.u_min && b.u_min <= b.u_max) {
            v.push(format!("booster {}: 0 <= u_min <= u_max violated", b.node_id));
        }
        if !(b.rate_max > 0.0) {
            v.push(format!("booster {}: rate_max must be > 0", b.node_id));
        }
    }
    for id in duplicates(net.monitored.iter().map(|m| m.node_id)) {
        v.push(format!("duplicate monitored output at node {id}"));
    }
    for m in &net.monitored {
        if !kind.contains_key(&m.node_id) {
            v.push(format!("monitored {}: unknown node", m.node_id));
        }
        if !(m.y_min < m.y_max) {
            v.push(format!("monitored {}: y_min < y_max violated", m.node_id));
        }
        if !(m.y_min <= m.y_terminal && m.y_terminal <= m.y_max) {
            v.push(format!("monitored {}: y_terminal outside [y_min, y_max]", m.node_id));
        }
        if !(m.terminal_tol >= 0.0) {
            v.push(format!("monitored {}: terminal_tol must be >= 0", m.node_id));
        }
    }
    for id in duplicates(net.demand_profiles.iter().map(|d| d.node_id)) {
        v.push(format!("duplicate demand profile for node {id}"));
    }
    for d in &net.demand_profiles {
        match kind.get(&d.node_id) {
            None => v.push(format!("demand profile: unknown node {}", d.node_id)),
            Some(NodeKind::Source) => v.push(format!("node {}: sources have no demand", d.node_id)),
            Some(NodeKind::Tank) => v.push(format!("node {}: tanks have no demand", d.node_id)),
            _ => {}
        }
        if steps > 0 && d.values.len() != steps {
            v.push(format!("demand profile {}: expected {steps} values, got {}", d.node_id, d.values.len()));
        }
        if d.values.iter().any(|x| !(*x >= 0.0)) {
            v.push(format!("demand profile {}: values must be >= 0", d.node_id));
        }
    }
    for e in &net.events {
        if steps > 0 && e.at_step() >= steps {
            v.push(format!("event at step {} beyond horizon", e.at_step()));
        }
        match *e {
            ScenarioEvent::PipeBurst { pipe_id, .. } if net.pipe(pipe_id).is_none() => {
                v.push(format!("event references unknown pipe {pipe_id}"));
            }
            ScenarioEvent::DemandSurge { node_id, multiplier, .. } => {
                if !net.demand_profiles.iter().any(|d| d.node_id == node_id) {
                    v.push(format!("demand surge references node {node_id} without demand"));
                }
                if !(multiplier > 0.0) {
                    v.push("demand surge multiplier must be > 0".to_string());
                }
            }
            _ => {}
        }
    }
    if !(net.initial_conc >= 0.0) {
        v.push("initial concentration must be >= 0".to_string());
    }

    if v.is_empty() {
        let reach = net.reachable_from_sources(0);
        if reach.len() != net.nodes.len() {
            v.push("network graph is not connected".to_string());
        }
        for m in &net.monitored {
            if !reach.contains(&m.node_id) {
                v.push(format!("unreachable monitored node {}", m.node_id));
            }
        }
        for b in &net.boosters {
            if !net.on_source_monitored_path(b.node_id) {
                v.push(format!("booster {} lies on no source-to-monitored path", b.node_id));
            }
        }
    }
    ValidationReport { violations: v }
}

/// Applies a disturbance event. Bursts take the pipe out of service (it is
/// removed from the topology as seen by every step at or after the event),
/// surges scale the node's demand from `at_step` on.
pub fn apply_event(net: &Network, event: &ScenarioEvent) -> Result<Network> {
    let mut out = net.clone();
    match *event {
        ScenarioEvent::PipeBurst { at_step, pipe_id } => {
            if net.pipe(pipe_id).is_none() {
                return Err(Error::UnknownElement(format!("pipe {pipe_id}")));
            }
            out.pipes.retain(|p| p.id != pipe_id);
            out.burst_pipes.retain(|&(p, _)| p != pipe_id);
            let reach = out.reachable_from_sources(at_step);
            if let Some(m) = out.monitored.iter().find(|m| !reach.contains(&m.node_id)) {
                return Err(Error::NetworkSplit(format!(
                    "burst of pipe {pipe_id} disconnects monitored node {}",
                    m.node_id
                )));
            }
        }
        ScenarioEvent::DemandSurge { at_step, node_id, multiplier } => {
            let profile = out
                .demand_profiles
                .iter_mut()
                .find(|d| d.node_id == node_id)
                .ok_or_else(|| Error::UnknownElement(format!("demand node {node_id}")))?;
            if !(multiplier > 0.0) {
                return Err(Error::InvalidNetwork("demand surge multiplier must be > 0".into()));
            }
            for v in profile.values.iter_mut().skip(at_step) {
                *v *= multiplier;
            }
        }
        ScenarioEvent::PressureAnomaly { .. } => {}
    }
    let report = validate(&out);
    if !report.is_empty() {
        return Err(Error::InvalidNetwork(report.violations.join("; ")));
    }
    Ok(out)
}

/// Network as seen by the plant over the horizon: bursts take effect from
/// their step (the pipe stays in the list but carries no flow), surges
/// scale demand from their step. Events with `at_step > known_until` are
/// ignored, which gives the controller's view at a given time.
pub fn with_events_until(net: &Network, known_until: Option<usize>) -> Result<Network> {
    let mut out = net.clone();
    for e in &net.events {
        if known_until.is_some_and(|k| e.at_step() > k) {
            continue;
        }
        match *e {
            ScenarioEvent::PipeBurst { at_step, pipe_id } => {
                if out.pipe(pipe_id).is_none() {
                    return Err(Error::UnknownElement(format!("pipe {pipe_id}")));
                }
                out.burst_pipes.push((pipe_id, at_step));
                let reach = out.reachable_from_sources(at_step);
                if let Some(m) = out.monitored.iter().find(|m| !reach.contains(&m.node_id)) {
                    return Err(Error::NetworkSplit(format!(
                        "burst of pipe {pipe_id} disconnects monitored node {}",
                        m.node_id
                    )));
                }
            }
            ScenarioEvent::DemandSurge { .. } => out = apply_event(&out, e)?,
            ScenarioEvent::PressureAnomaly { .. } => {}
        }
    }
    out.events.clear();
    Ok(out)
}
