//! Quasi-static flow allocation, tariffs and pump scheduling.

use crate::error::{Error, Result};
use crate::network::{Network, NodeKind};
use chloros_qp::{QpProblem, QpSettings, QpStatus, TripletBuilder};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Electricity price per hour of day ($/kWh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tariff {
    pub price: Vec<f64>,
}

impl Tariff {
    pub fn flat(price: f64) -> Tariff {
        Tariff { price: vec![price; 24] }
    }

    /// Peak price during 06:00–12:00 and 15:00–21:00, off-peak otherwise.
    pub fn two_level(peak: f64, off_peak: f64) -> Tariff {
        let price = (0..24)
            .map(|h| if (6..12).contains(&h) || (15..21).contains(&h) { peak } else { off_peak })
            .collect();
        Tariff { price }
    }

    pub fn benchmark() -> Tariff {
        Tariff::two_level(0.12, 0.06)
    }

    pub fn at_hour(&self, hour_of_day: usize) -> f64 {
        self.price[hour_of_day % 24]
    }

    pub fn validate(&self) -> Result<()> {
        if self.price.len() != 24 || self.price.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Config("tariff needs 24 positive hourly prices".into()));
        }
        Ok(())
    }
}

/// Pump, tank and pipe flows per hydraulic step (m³/h) and tank levels at
/// the start of every hydraulic step plus the final level (m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydraulicSchedule {
    pub pump_flow: Vec<Vec<f64>>,
    /// Positive when the tank drains into the network.
    pub tank_flow: Vec<Vec<f64>>,
    pub pipe_flow: Vec<Vec<f64>>,
    pub tank_level: Vec<Vec<f64>>,
}

impl HydraulicSchedule {
    pub fn steps(&self) -> usize {
        self.pump_flow.len()
    }

    /// Energy cost with hydraulic step 0 starting at `start_hour`.
    pub fn energy_cost(&self, net: &Network, tariff: &Tariff, start_hour: usize) -> f64 {
        let dt = net.time_grid.dt_hydraulic_h();
        let mut cost = 0.0;
        for (h, flows) in self.pump_flow.iter().enumerate() {
            let hour = start_hour + h * net.time_grid.dt_hydraulic_s as usize / 3600;
            let price = tariff.at_hour(hour);
            for (p, q) in net.pumps.iter().zip(flows) {
                cost += price * p.power_coeff * q * dt;
            }
        }
        cost
    }
}

/// Minimum-dissipation flow allocation `min Σ r q²` subject to node balance.
///
/// The weighted Laplacian of the active pipes is grounded at one node per
/// connected component and factored once per set of active pipes.
#[derive(Debug, Clone)]
pub struct FlowSolver {
    n: usize,
    ends: Vec<(usize, usize)>,
    resistance: Vec<f64>,
    cached: Option<(Vec<bool>, FlowFactor)>,
}

#[derive(Debug, Clone)]
struct FlowFactor {
    component: Vec<usize>,
    /// Reduced index of every node, `usize::MAX` for ground nodes.
    reduced: Vec<usize>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl FlowSolver {
    pub fn new(net: &Network) -> FlowSolver {
        let idx = net.node_index();
        FlowSolver {
            n: net.nodes.len(),
            ends: net.pipes.iter().map(|p| (idx[&p.from], idx[&p.to])).collect(),
            resistance: net.pipes.iter().map(|p| p.resistance).collect(),
            cached: None,
        }
    }

    fn factor(&self, active: &[bool]) -> FlowFactor {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for (k, &(a, b)) in self.ends.iter().enumerate() {
            if active[k] {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let component: Vec<usize> = (0..self.n).map(|i| find(&mut parent, i)).collect();
        let mut reduced = vec![usize::MAX; self.n];
        let mut m = 0;
        for i in 0..self.n {
            if component[i] != i {
                reduced[i] = m;
                m += 1;
            }
        }
        let mut l = DMatrix::<f64>::zeros(m, m);
        for (k, &(a, b)) in self.ends.iter().enumerate() {
            if !active[k] {
                continue;
            }
            let g = 1.0 / self.resistance[k];
            let (ra, rb) = (reduced[a], reduced[b]);
            if ra != usize::MAX {
                l[(ra, ra)] += g;
            }
            if rb != usize::MAX {
                l[(rb, rb)] += g;
            }
            if ra != usize::MAX && rb != usize::MAX {
                l[(ra, rb)] -= g;
                l[(rb, ra)] -= g;
            }
        }
        FlowFactor {
            component,
            reduced,
            chol: if m > 0 { l.cholesky() } else { None },
        }
    }

    /// Pipe flows (positive from `from` to `to`) given the net injection of
    /// every node (supply positive, demand negative).
    pub fn solve(&mut self, injection: &[f64], active: &[bool], step: usize) -> Result<Vec<f64>> {
        if injection.len() != self.n || active.len() != self.ends.len() {
            return Err(Error::DimensionMismatch("flow solver inputs".into()));
        }
        if self.cached.as_ref().map(|(mask, _)| mask.as_slice()) != Some(active) {
            let f = self.factor(active);
            self.cached = Some((active.to_vec(), f));
        }
        let (_, f) = self.cached.as_ref().unwrap();

        let mut total = vec![0.0; self.n];
        let mut scale = vec![0.0; self.n];
        for i in 0..self.n {
            total[f.component[i]] += injection[i];
            scale[f.component[i]] += injection[i].abs();
        }
        for i in 0..self.n {
            if f.component[i] == i && total[i].abs() > 1e-9 * scale[i].max(1.0) {
                return Err(Error::HydraulicInfeasible {
                    step,
                    detail: format!("supply and demand differ by {:.3e} m³/h", total[i]),
                });
            }
        }

        let m = f.reduced.iter().filter(|&&r| r != usize::MAX).count();
        let mut q = vec![0.0; self.ends.len()];
        if m == 0 {
            return Ok(q);
        }
        let chol = f.chol.as_ref().ok_or_else(|| Error::HydraulicInfeasible {
            step,
            detail: "singular pipe network".into(),
        })?;
        // Balance: inflow - outflow + injection = 0, i.e. B q = -injection.
        let mut rhs: Vec<f64> = injection.iter().map(|v| -v).collect();
        for _ in 0..2 {
            let mut d = DVector::zeros(m);
            for i in 0..self.n {
                if f.reduced[i] != usize::MAX {
                    d[f.reduced[i]] = rhs[i];
                }
            }
            let mu = chol.solve(&d);
            let pot = |i: usize| if f.reduced[i] == usize::MAX { 0.0 } else { mu[f.reduced[i]] };
            for (k, &(a, b)) in self.ends.iter().enumerate() {
                if active[k] {
                    q[k] += (pot(b) - pot(a)) / self.resistance[k];
                }
            }
            // Residual for one refinement pass.
            rhs = injection.iter().map(|v| -v).collect();
            for (k, &(a, b)) in self.ends.iter().enumerate() {
                rhs[b] -= q[k];
                rhs[a] += q[k];
            }
        }
        Ok(q)
    }
}

/// Net injection per node (pump discharge + draining tanks − demand).
pub fn nodal_injection(net: &Network, pump_flow: &[f64], tank_flow: &[f64], demand: &[f64]) -> Vec<f64> {
    let idx = net.node_index();
    let mut inj: Vec<f64> = demand.iter().map(|d| -d).collect();
    for (p, q) in net.pumps.iter().zip(pump_flow) {
        inj[idx[&p.discharge_node]] += q;
    }
    for (t, q) in net.tanks.iter().zip(tank_flow) {
        inj[idx[&t.node_id]] += q;
    }
    // Sources only feed pumps, never pipes.
    for n in net.nodes.iter().enumerate().filter(|(_, n)| n.kind == NodeKind::Source) {
        inj[n.0] = 0.0;
    }
    inj
}

/// One-shot flow allocation at a step; `demand` is indexed like `net.nodes`.
pub fn solve_flows(net: &Network, pump_flow: &[f64], tank_flow: &[f64], demand: &[f64], step: usize) -> Result<Vec<f64>> {
    if pump_flow.len() != net.pumps.len() || tank_flow.len() != net.tanks.len() || demand.len() != net.nodes.len() {
        return Err(Error::DimensionMismatch("solve_flows inputs".into()));
    }
    let inj = nodal_injection(net, pump_flow, tank_flow, demand);
    let active: Vec<bool> = net.pipes.iter().map(|p| net.pipe_active(p.id, step)).collect();
    FlowSolver::new(net).solve(&inj, &active, step)
}

/// Nominal demand per hydraulic step and node (mean over its quality steps).
pub fn hourly_demand(net: &Network) -> Vec<Vec<f64>> {
    let g = net.time_grid;
    let idx = net.node_index();
    let s = g.steps_per_hydraulic();
    let mut out = vec![vec![0.0; net.nodes.len()]; g.steps_hydraulic()];
    for d in &net.demand_profiles {
        let i = idx[&d.node_id];
        for (h, row) in out.iter_mut().enumerate() {
            let slice = &d.values[h * s..(h + 1) * s];
            row[i] = slice.iter().sum::<f64>() / s as f64;
        }
    }
    out
}

fn finish_schedule(net: &Network, pump_flow: Vec<Vec<f64>>, tank_flow: Vec<Vec<f64>>, demand: &[Vec<f64>], start_levels: &[f64], start_step: usize) -> Result<HydraulicSchedule> {
    let dt = net.time_grid.dt_hydraulic_h();
    let mut solver = FlowSolver::new(net);
    let spq = net.time_grid.steps_per_hydraulic();
    let mut pipe_flow = Vec::with_capacity(pump_flow.len());
    let mut tank_level = vec![start_levels.to_vec()];
    for h in 0..pump_flow.len() {
        let step = start_step + h * spq;
        let inj = nodal_injection(net, &pump_flow[h], &tank_flow[h], &demand[h]);
        let active: Vec<bool> = net.pipes.iter().map(|p| net.pipe_active(p.id, step)).collect();
        pipe_flow.push(solver.solve(&inj, &active, step)?);
        let next: Vec<f64> = net
            .tanks
            .iter()
            .enumerate()
            .map(|(j, t)| tank_level[h][j] - tank_flow[h][j] * dt / t.area)
            .collect();
        tank_level.push(next);
    }
    Ok(HydraulicSchedule {
        pump_flow,
        tank_flow,
        pipe_flow,
        tank_level,
    })
}

/// Cheapest pumps first, tanks idle.
pub fn demand_tracking_schedule(net: &Network, demand: &[Vec<f64>]) -> Result<HydraulicSchedule> {
    let mut order: Vec<usize> = (0..net.pumps.len()).collect();
    order.sort_by(|&a, &b| {
        net.pumps[a]
            .power_coeff
            .total_cmp(&net.pumps[b].power_coeff)
            .then(net.pumps[a].id.cmp(&net.pumps[b].id))
    });
    let mut pump_flow = Vec::with_capacity(demand.len());
    for (h, d) in demand.iter().enumerate() {
        let mut remaining: f64 = d.iter().sum();
        let mut flows = vec![0.0; net.pumps.len()];
        for &i in &order {
            let q = remaining.min(net.pumps[i].flow_max).max(0.0);
            flows[i] = q;
            remaining -= q;
        }
        if remaining > 1e-9 {
            return Err(Error::ScheduleInfeasible(format!(
                "demand exceeds pump capacity by {remaining:.3} m³/h in hydraulic step {h}"
            )));
        }
        pump_flow.push(flows);
    }
    let tank_flow = vec![vec![0.0; net.tanks.len()]; demand.len()];
    let levels: Vec<f64> = net.tanks.iter().map(|t| t.level_init).collect();
    finish_schedule(net, pump_flow, tank_flow, demand, &levels, 0)
}

/// Energy-optimal schedule over the whole horizon from the initial levels.
pub fn optimize_pump_schedule(net: &Network, demand: &[Vec<f64>], tariff: &Tariff) -> Result<HydraulicSchedule> {
    let levels: Vec<f64> = net.tanks.iter().map(|t| t.level_init).collect();
    optimize_pump_window(net, demand, tariff, 0, &levels, 0)
}

/// Energy-optimal schedule for a window whose first hydraulic step starts
/// at hour `start_hour` (for the tariff) and quality step `start_step`
/// (for bursts), from the given tank levels. The final levels must be at
/// least the starting ones.
pub fn optimize_pump_window(net: &Network, demand: &[Vec<f64>], tariff: &Tariff, start_hour: usize, levels: &[f64], start_step: usize) -> Result<HydraulicSchedule> {
    tariff.validate()?;
    let w = demand.len();
    let np = net.pumps.len();
    let nt = net.tanks.len();
    let per = np + nt;
    let n = w * per;
    let dt = net.time_grid.dt_hydraulic_h();
    let hours_per_step = (net.time_grid.dt_hydraulic_s / 3600).max(1) as usize;

    let mut linear = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for h in 0..w {
        let price = tariff.at_hour(start_hour + h * hours_per_step);
        for (i, p) in net.pumps.iter().enumerate() {
            linear[h * per + i] = price * p.power_coeff * dt;
            upper[h * per + i] = p.flow_max;
        }
        for (j, t) in net.tanks.iter().enumerate() {
            lower[h * per + np + j] = -t.flow_max;
            upper[h * per + np + j] = t.flow_max;
        }
    }
    let mut a = TripletBuilder::new(w + w * nt, n);
    let mut rl = Vec::with_capacity(w + w * nt);
    let mut ru = Vec::with_capacity(w + w * nt);
    for h in 0..w {
        for k in 0..per {
            a.push(h, h * per + k, 1.0);
        }
        let total: f64 = demand[h].iter().sum();
        rl.push(total);
        ru.push(total);
    }
    for (j, t) in net.tanks.iter().enumerate() {
        for h in 0..w {
            let row = w + j * w + h;
            for hh in 0..=h {
                a.push(row, hh * per + np + j, 1.0);
            }
            // level(h+1) = level0 - dt/area Σ t  ∈ [min, max]
            let lo = (levels[j] - t.level_max) * t.area / dt;
            let mut hi = (levels[j] - t.level_min) * t.area / dt;
            if h + 1 == w {
                hi = hi.min(0.0);
            }
            rl.push(lo.min(hi));
            ru.push(hi);
        }
    }
    let problem = QpProblem::new(chloros_qp::CsrMatrix::zeros(n, n), linear)
        .with_rows(a.build(), rl, ru)
        .with_bounds(lower, upper);
    let settings = QpSettings {
        max_iter: 100_000,
        ..QpSettings::default()
    };
    let res = chloros_qp::solve_with(&problem, settings)?;
    match res.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Err(Error::ScheduleInfeasible("demand cannot be met within pump and tank limits".into()))
        }
        QpStatus::MaxIterations => {
            return Err(Error::ScheduleInfeasible("pump scheduling did not converge".into()))
        }
    }
    let mut pump_flow = Vec::with_capacity(w);
    let mut tank_flow = Vec::with_capacity(w);
    for h in 0..w {
        let x = &res.x[h * per..(h + 1) * per];
        let mut p: Vec<f64> = (0..np).map(|i| x[i].clamp(0.0, net.pumps[i].flow_max)).collect();
        let mut t: Vec<f64> = (0..nt).map(|j| x[np + j].clamp(-net.tanks[j].flow_max, net.tanks[j].flow_max)).collect();
        rebalance(net, &mut p, &mut t, demand[h].iter().sum());
        pump_flow.push(p);
        tank_flow.push(t);
    }
    finish_schedule(net, pump_flow, tank_flow, demand, levels, start_step)
}

/// Removes the solver-tolerance imbalance so node balance holds to rounding.
fn rebalance(net: &Network, pumps: &mut [f64], tanks: &mut [f64], total_demand: f64) {
    let supply: f64 = pumps.iter().sum::<f64>() + tanks.iter().sum::<f64>();
    let gap = total_demand - supply;
    if gap == 0.0 {
        return;
    }
    if !tanks.is_empty() {
        let area: f64 = net.tanks.iter().map(|t| t.area).sum();
        for (q, t) in tanks.iter_mut().zip(&net.tanks) {
            *q += gap * t.area / area;
        }
    } else {
        let cap: f64 = net.pumps.iter().map(|p| p.flow_max).sum();
        for (q, p) in pumps.iter_mut().zip(&net.pumps) {
            *q += gap * p.flow_max / cap;
        }
    }
}
