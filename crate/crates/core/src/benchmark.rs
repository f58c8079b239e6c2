//! The 16-junction, 27-pipe, 3-tank benchmark network.

use crate::network::{Booster, DemandProfile, MonitoredOutput, Network, Node, NodeKind, Pipe, Pump, ScenarioEvent, Tank, TimeGrid};
use serde::Deserialize;

const TOPOLOGY: &str = include_str!("../data/benchmark16_topology.toml");

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseDemand {
    node_id: u32,
    base: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    initial_conc: f64,
    demand_shape: Vec<f64>,
    nodes: Vec<Node>,
    pipes: Vec<Pipe>,
    tanks: Vec<Tank>,
    pumps: Vec<Pump>,
    boosters: Vec<Booster>,
    monitored: Vec<MonitoredOutput>,
    demands: Vec<BaseDemand>,
}

/// Hourly demand multipliers of the benchmark (24 values, mean 1).
pub fn demand_shape() -> Vec<f64> {
    parse().demand_shape
}

fn parse() -> TopologyFile {
    toml::from_str(TOPOLOGY).expect("embedded benchmark topology is valid")
}

/// Benchmark on the default grid (24 h, 1 h hydraulic, 5 min quality).
pub fn build_benchmark16() -> Network {
    build_benchmark16_on(TimeGrid::default())
}

/// Benchmark with demands expanded onto `grid`; the hourly shape repeats
/// every 24 h and is held constant within each hour.
pub fn build_benchmark16_on(grid: TimeGrid) -> Network {
    let f = parse();
    let steps = grid.steps_quality();
    let demand_profiles = f
        .demands
        .iter()
        .map(|d| DemandProfile {
            node_id: d.node_id,
            values: (0..steps).map(|k| d.base * f.demand_shape[grid.hour_of_day(k)]).collect(),
        })
        .collect();
    Network {
        time_grid: grid,
        nodes: f.nodes,
        pipes: f.pipes,
        tanks: f.tanks,
        pumps: f.pumps,
        boosters: f.boosters,
        monitored: f.monitored,
        demand_profiles,
        events: Vec::new(),
        initial_conc: f.initial_conc,
        burst_pipes: Vec::new(),
    }
}

fn junction(id: u32) -> Node {
    Node {
        id,
        kind: NodeKind::Junction,
        source_conc: 0.0,
    }
}

fn source(id: u32, conc: f64) -> Node {
    Node {
        id,
        kind: NodeKind::Source,
        source_conc: conc,
    }
}

fn pipe(id: u32, from: u32, to: u32, volume: f64, resistance: f64) -> Pipe {
    Pipe {
        id,
        from,
        to,
        volume,
        resistance,
        decay_rate: 0.1,
    }
}

fn monitored(node_id: u32) -> MonitoredOutput {
    MonitoredOutput {
        node_id,
        y_min: 0.2,
        y_max: 0.5,
        y_terminal: 0.3,
        terminal_tol: 0.1,
    }
}

fn constant_demand(grid: TimeGrid, node_id: u32, value: f64) -> DemandProfile {
    DemandProfile {
        node_id,
        values: vec![value; grid.steps_quality()],
    }
}

/// Three-junction loop fed by one pump, booster at the pump outlet and the
/// monitored node at the far corner. Pipe 1 is the direct link and bursts
/// at step 100, leaving the longer path through node 2.
pub fn build_burst_loop() -> Network {
    let grid = TimeGrid::default();
    Network {
        time_grid: grid,
        nodes: vec![source(100, 0.1), junction(1), junction(2), junction(3)],
        pipes: vec![pipe(1, 1, 3, 2.0, 1.0), pipe(2, 1, 2, 4.0, 1.0), pipe(3, 2, 3, 2.0, 1.0)],
        tanks: Vec::new(),
        pumps: vec![Pump {
            id: 101,
            source_node: 100,
            discharge_node: 1,
            flow_max: 100.0,
            power_coeff: 0.3,
        }],
        boosters: vec![Booster {
            node_id: 1,
            u_min: 0.0,
            u_max: 1.5,
            rate_max: 0.04,
        }],
        monitored: vec![monitored(3)],
        demand_profiles: vec![constant_demand(grid, 2, 10.0), constant_demand(grid, 3, 30.0)],
        events: vec![ScenarioEvent::PipeBurst { at_step: 100, pipe_id: 1 }],
        initial_conc: 0.3,
        burst_pipes: Vec::new(),
    }
}

/// One pump feeding two branches that never meet; each branch has its own
/// booster and monitored node, so no input reaches the other branch.
pub fn build_two_path() -> Network {
    let grid = TimeGrid::default();
    Network {
        time_grid: grid,
        nodes: vec![source(100, 0.1), junction(1), junction(2), junction(3), junction(4), junction(5)],
        pipes: vec![
            pipe(1, 1, 2, 4.0, 1.0),
            pipe(2, 2, 3, 8.0, 1.0),
            pipe(3, 1, 4, 4.0, 1.0),
            pipe(4, 4, 5, 12.0, 1.0),
        ],
        tanks: Vec::new(),
        pumps: vec![Pump {
            id: 101,
            source_node: 100,
            discharge_node: 1,
            flow_max: 100.0,
            power_coeff: 0.3,
        }],
        boosters: [2, 4]
            .into_iter()
            .map(|node_id| Booster {
                node_id,
                u_min: 0.0,
                u_max: 1.5,
                rate_max: 0.05,
            })
            .collect(),
        monitored: vec![monitored(3), monitored(5)],
        demand_profiles: vec![constant_demand(grid, 3, 20.0), constant_demand(grid, 5, 30.0)],
        events: Vec::new(),
        initial_conc: 0.3,
        burst_pipes: Vec::new(),
    }
}
