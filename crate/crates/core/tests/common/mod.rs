#![allow(dead_code)]

use chloros::network::{Booster, DemandProfile, MonitoredOutput, Network, Node, NodeKind, Pipe, Pump, TimeGrid};

pub fn node(id: u32, kind: NodeKind) -> Node {
    Node {
        id,
        kind,
        source_conc: 0.0,
    }
}

pub fn pipe(id: u32, from: u32, to: u32, volume: f64, resistance: f64, decay_rate: f64) -> Pipe {
    Pipe {
        id,
        from,
        to,
        volume,
        resistance,
        decay_rate,
    }
}

pub fn pump(id: u32, source_node: u32, discharge_node: u32) -> Pump {
    Pump {
        id,
        source_node,
        discharge_node,
        flow_max: 100.0,
        power_coeff: 0.5,
    }
}

pub fn booster(node_id: u32, u_max: f64) -> Booster {
    Booster {
        node_id,
        u_min: 0.0,
        u_max,
        rate_max: 1.0,
    }
}

pub fn monitored(node_id: u32) -> MonitoredOutput {
    MonitoredOutput {
        node_id,
        y_min: 0.2,
        y_max: 0.5,
        y_terminal: 0.3,
        terminal_tol: 0.1,
    }
}

pub fn constant_demand(grid: TimeGrid, node_id: u32, value: f64) -> DemandProfile {
    DemandProfile {
        node_id,
        values: vec![value; grid.steps_quality()],
    }
}

/// Source 100 pumps into booster node 1, one pipe carries the water to the
/// monitored demand node 2. With `demand` m³/h the travel time is
/// `volume / demand` hours.
pub fn line(volume: f64, decay_rate: f64, demand: f64, grid: TimeGrid) -> Network {
    Network {
        time_grid: grid,
        nodes: vec![node(100, NodeKind::Source), node(1, NodeKind::Junction), node(2, NodeKind::Junction)],
        pipes: vec![pipe(1, 1, 2, volume, 1.0, decay_rate)],
        tanks: Vec::new(),
        pumps: vec![pump(101, 100, 1)],
        boosters: vec![booster(1, 1.0)],
        monitored: vec![monitored(2)],
        demand_profiles: vec![constant_demand(grid, 2, demand)],
        events: Vec::new(),
        initial_conc: 0.0,
        burst_pipes: Vec::new(),
    }
}

/// Like [`line`] but with two parallel pipes between nodes 1 and 2.
pub fn parallel(r1: f64, r2: f64) -> Network {
    let mut net = line(1.0, 0.1, 1.0, TimeGrid::default());
    net.pipes = vec![pipe(1, 1, 2, 1.0, r1, 0.1), pipe(2, 1, 2, 1.0, r2, 0.1)];
    net
}

/// Short grid: 3 h, hourly hydraulics, 5 min quality.
pub fn short_grid() -> TimeGrid {
    TimeGrid {
        horizon_s: 3 * 3600,
        dt_hydraulic_s: 3600,
        dt_quality_s: 300,
    }
}
