//! Box uncertainty on demands and decay rates, scenario sampling and the
//! two-envelope robust output prediction.

use crate::error::{Error, Result};
use crate::network::{with_events_until, Network};
use crate::plant::hydraulics::{nodal_injection, FlowSolver, HydraulicSchedule};
use crate::plant::quality::QualityState;
use crate::plant::simulate::{absorb_gap, Hydraulics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Relative demand bound per hydraulic step and decay-rate interval per pipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySet {
    pub demand_delta: Vec<f64>,
    pub decay_lo: Vec<f64>,
    pub decay_hi: Vec<f64>,
}

/// Compact description used in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    /// Relative demand bound before `switch_hour`.
    pub delta_early: f64,
    /// Relative demand bound from `switch_hour` on.
    pub delta_late: f64,
    pub switch_hour: f64,
    /// Half-width of each decay interval relative to the nominal rate.
    #[serde(default)]
    pub decay_rel: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            delta_early: 0.05,
            delta_late: 0.10,
            switch_hour: 10.0,
            decay_rel: 0.0,
        }
    }
}

impl UncertaintyConfig {
    pub fn zero() -> Self {
        UncertaintyConfig {
            delta_early: 0.0,
            delta_late: 0.0,
            switch_hour: 0.0,
            decay_rel: 0.0,
        }
    }

    pub fn build(&self, net: &Network) -> Result<UncertaintySet> {
        let g = net.time_grid;
        let demand_delta = (0..g.steps_hydraulic())
            .map(|h| {
                let start_h = h as f64 * g.dt_hydraulic_h();
                if start_h < self.switch_hour {
                    self.delta_early
                } else {
                    self.delta_late
                }
            })
            .collect();
        let set = UncertaintySet {
            demand_delta,
            decay_lo: net.pipes.iter().map(|p| p.decay_rate * (1.0 - self.decay_rel)).collect(),
            decay_hi: net.pipes.iter().map(|p| p.decay_rate * (1.0 + self.decay_rel)).collect(),
        };
        set.validate()?;
        Ok(set)
    }
}

impl UncertaintySet {
    pub fn validate(&self) -> Result<()> {
        if self.demand_delta.iter().any(|d| !(0.0..1.0).contains(d)) {
            return Err(Error::Config("demand bound must lie in [0, 1)".into()));
        }
        if self.decay_lo.len() != self.decay_hi.len()
            || self.decay_lo.iter().zip(&self.decay_hi).any(|(lo, hi)| !(0.0 <= *lo && lo <= hi))
        {
            return Err(Error::Config("decay intervals must satisfy 0 <= k_lo <= k_hi".into()));
        }
        Ok(())
    }

    /// Same decay box, demand bounds multiplied by `factor`.
    pub fn scaled_demand(&self, factor: f64) -> UncertaintySet {
        UncertaintySet {
            demand_delta: self.demand_delta.iter().map(|d| d * factor).collect(),
            ..self.clone()
        }
    }

    pub fn max_delta(&self) -> f64 {
        self.demand_delta.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// Largest decay half-width relative to the interval midpoint.
    pub fn max_decay_rel(&self) -> f64 {
        self.decay_lo
            .iter()
            .zip(&self.decay_hi)
            .filter(|(lo, hi)| *lo + *hi > 0.0)
            .map(|(lo, hi)| (hi - lo) / (hi + lo))
            .fold(0.0, f64::max)
    }

    pub fn is_point(&self) -> bool {
        self.max_delta() == 0.0 && self.decay_lo == self.decay_hi
    }

    pub fn nominal(&self, num_demands: usize) -> Realization {
        Realization {
            seed: None,
            demand_mult: vec![vec![1.0; num_demands]; self.demand_delta.len()],
            decay_rate: self.decay_lo.iter().zip(&self.decay_hi).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }

    /// Corner of the box: `demand_sign[h][j]` and `decay_sign[p]` in {-1, 0, 1}.
    fn vertex(&self, demand_sign: impl Fn(usize, usize) -> f64, decay_sign: impl Fn(usize) -> f64, num_demands: usize) -> Realization {
        Realization {
            seed: None,
            demand_mult: self
                .demand_delta
                .iter()
                .enumerate()
                .map(|(h, d)| (0..num_demands).map(|j| 1.0 + demand_sign(h, j) * d).collect())
                .collect(),
            decay_rate: self
                .decay_lo
                .iter()
                .zip(&self.decay_hi)
                .enumerate()
                .map(|(p, (lo, hi))| 0.5 * (lo + hi) + decay_sign(p) * 0.5 * (hi - lo))
                .collect(),
        }
    }
}

/// One draw of the uncertain parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub seed: Option<u64>,
    /// Multiplier per hydraulic step and demand profile.
    pub demand_mult: Vec<Vec<f64>>,
    /// Bulk decay rate per pipe (1/h).
    pub decay_rate: Vec<f64>,
}

/// Uniform independent draws inside the box.
pub fn sample_realization(set: &UncertaintySet, num_demands: usize, seed: u64) -> Realization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let demand_mult = set
        .demand_delta
        .iter()
        .map(|&d| (0..num_demands).map(|_| 1.0 + d * rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let decay_rate = set
        .decay_lo
        .iter()
        .zip(&set.decay_hi)
        .map(|(&lo, &hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
        .collect();
    Realization {
        seed: Some(seed),
        demand_mult,
        decay_rate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub n_random: usize,
    pub seed: u64,
    /// Widening of each side as a fraction of the half-range.
    pub inflation: f64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig {
            n_random: 32,
            seed: 0x5eed,
            inflation: 0.5,
        }
    }
}

/// Lower and upper output bounds, indexed `[step][output]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Envelope {
    pub y_lo: Vec<Vec<f64>>,
    pub y_hi: Vec<Vec<f64>>,
}

impl Envelope {
    fn from_runs(runs: &[Vec<Vec<f64>>], inflation: f64) -> Envelope {
        let steps = runs[0].len();
        let ny = runs[0].first().map_or(0, |r| r.len());
        let mut y_lo = runs[0].clone();
        let mut y_hi = runs[0].clone();
        for run in &runs[1..] {
            for k in 0..steps {
                for i in 0..ny {
                    y_lo[k][i] = y_lo[k][i].min(run[k][i]);
                    y_hi[k][i] = y_hi[k][i].max(run[k][i]);
                }
            }
        }
        for k in 0..steps {
            for i in 0..ny {
                let w = inflation * 0.5 * (y_hi[k][i] - y_lo[k][i]);
                y_lo[k][i] -= w;
                y_hi[k][i] += w;
            }
        }
        Envelope { y_lo, y_hi }
    }

    pub fn steps(&self) -> usize {
        self.y_lo.len()
    }

    pub fn contains(&self, y: &[Vec<f64>], tol: f64) -> bool {
        y.iter().zip(self.y_lo.iter().zip(&self.y_hi)).all(|(yk, (lo, hi))| {
            yk.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
        })
    }
}

/// Nominal, all-low, all-high and `n_random` random vertices, in that order.
pub fn vertex_realizations(set: &UncertaintySet, num_demands: usize, cfg: &EnvelopeConfig) -> Vec<Realization> {
    let mut out = vec![
        set.nominal(num_demands),
        set.vertex(|_, _| -1.0, |_| -1.0, num_demands),
        set.vertex(|_, _| 1.0, |_| 1.0, num_demands),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let nh = set.demand_delta.len();
    let np = set.decay_lo.len();
    for _ in 0..cfg.n_random {
        let ds: Vec<f64> = (0..nh * num_demands).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let ks: Vec<f64> = (0..np).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        out.push(set.vertex(|h, j| ds[h * num_demands + j], |p| ks[p], num_demands));
    }
    out
}

/// Two corners per pipe that push its flow to the lowest and highest value
/// over the box, without duplicates.
///
/// Flows are linear in the demand multipliers, so the signs of a pipe's
/// flow sensitivities at each hydraulic step pick these corners. Transport
/// delays and mixing ratios are extreme there, which random corners rarely
/// hit.
pub fn flow_extreme_vertices(net: &Network, set: &UncertaintySet) -> Result<Vec<Realization>> {
    let g = net.time_grid;
    let nd = net.demand_profiles.len();
    let np = net.pipes.len();
    let idx = net.node_index();
    let mut solver = FlowSolver::new(net);
    // signs[h][p * nd + j]: direction in which demand j raises the flow of pipe p
    let mut signs = Vec::with_capacity(set.demand_delta.len());
    for h in 0..set.demand_delta.len() {
        let k = h * g.steps_per_hydraulic();
        let active: Vec<bool> = net.pipes.iter().map(|p| net.pipe_active(p.id, k)).collect();
        let mut s = vec![0.0; np * nd];
        for (j, d) in net.demand_profiles.iter().enumerate() {
            let mut demand = vec![0.0; net.nodes.len()];
            demand[idx[&d.node_id]] = 1.0;
            let mut pumps = vec![0.0; net.pumps.len()];
            let mut tanks = vec![0.0; net.tanks.len()];
            absorb_gap(net, &mut pumps, &mut tanks, 1.0);
            let q = solver.solve(&nodal_injection(net, &pumps, &tanks, &demand), &active, k)?;
            for p in 0..np {
                if q[p].abs() > 1e-12 {
                    s[p * nd + j] = q[p].signum();
                }
            }
        }
        signs.push(s);
    }
    let mut out: Vec<Realization> = Vec::new();
    for p in 0..np {
        for dir in [-1.0, 1.0] {
            let r = set.vertex(|h, j| dir * signs[h][p * nd + j], |_| 0.0, nd);
            if !out.contains(&r) {
                out.push(r);
            }
        }
    }
    Ok(out)
}

/// Hydraulics of every envelope scenario, built once per schedule and
/// reused for each prediction.
#[derive(Debug, Clone)]
pub struct ScenarioBank {
    pub scenarios: Vec<Arc<Hydraulics>>,
    pub inflation: f64,
}

impl ScenarioBank {
    /// Scenarios: [`vertex_realizations`] followed by the
    /// [`flow_extreme_vertices`] not already among them. `net` must already
    /// carry the events the controller knows about.
    pub fn new(net: &Network, schedule: &HydraulicSchedule, set: &UncertaintySet, cfg: &EnvelopeConfig) -> Result<ScenarioBank> {
        let nd = net.demand_profiles.len();
        let reals = if set.is_point() {
            vec![set.nominal(nd)]
        } else {
            let mut reals = vertex_realizations(set, nd, cfg);
            if set.max_delta() > 0.0 {
                for r in flow_extreme_vertices(net, set)? {
                    if !reals.contains(&r) {
                        reals.push(r);
                    }
                }
            }
            reals
        };
        let scenarios = reals
            .par_iter()
            .map(|r| Hydraulics::build(net, schedule, Some(r)).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScenarioBank {
            scenarios,
            inflation: cfg.inflation,
        })
    }

    pub fn nominal(&self) -> &Arc<Hydraulics> {
        &self.scenarios[0]
    }

    /// Envelope of the outputs over steps `k0..k0 + len` from `state`, with
    /// `u` time-major (`u[t * n_u + j]` applied at step `k0 + t`).
    pub fn envelope(&self, state: &QualityState, k0: usize, len: usize, u: &[f64]) -> Envelope {
        let runs: Vec<Vec<Vec<f64>>> = self
            .scenarios
            .par_iter()
            .map(|h| run_window(h, state.clone(), k0, len, u, true))
            .collect();
        Envelope::from_runs(&runs, self.inflation)
    }
}

/// Outputs of `hyd` over `k0..k0 + len` from `state` under time-major `u`.
pub fn run_window(hyd: &Hydraulics, mut state: QualityState, k0: usize, len: usize, u: &[f64], sources_on: bool) -> Vec<Vec<f64>> {
    let nu = hyd.num_inputs();
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let mut y = vec![0.0; hyd.num_outputs()];
        hyd.step(k0 + t, &mut state, &u[t * nu..(t + 1) * nu], sources_on, &mut y);
        out.push(y);
    }
    out
}

/// Full-horizon envelope from the network's initial state under the input
/// trajectory `u[k][booster]`.
pub fn robust_envelope(net: &Network, schedule: &HydraulicSchedule, u: &[Vec<f64>], set: &UncertaintySet, cfg: &EnvelopeConfig) -> Result<Envelope> {
    let plant_net = with_events_until(net, None)?;
    let bank = ScenarioBank::new(&plant_net, schedule, set, cfg)?;
    let steps = net.time_grid.steps_quality();
    if u.len() < steps {
        return Err(Error::DimensionMismatch(format!("input trajectory needs {steps} steps")));
    }
    let flat: Vec<f64> = u.iter().take(steps).flatten().copied().collect();
    let state = bank.nominal().uniform_state(0, net.initial_conc);
    Ok(bank.envelope(&state, 0, steps, &flat))
}

/// Offline output sensitivity per output, in mg/L per unit of relative
/// uncertainty radius; demand and decay are probed separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub demand: Vec<f64>,
    pub decay: Vec<f64>,
}

impl LipschitzEstimate {
    /// Constant zone per output for the radii of `set`:
    /// `(L_d * delta + L_k * kappa) * (1 + inflation)`.
    pub fn zones(&self, set: &UncertaintySet, inflation: f64) -> Vec<f64> {
        let (delta, kappa) = (set.max_delta(), set.max_decay_rel());
        self.demand
            .iter()
            .zip(&self.decay)
            .map(|(d, k)| (d * delta + k * kappa) * (1.0 + inflation))
            .collect()
    }
}

/// Probes the nominal model against scaled box corners under constant
/// inputs (bounds and midpoint) and random hourly inputs over the whole
/// horizon, from the network's initial state. `probe_count` directions are
/// tried per scale: all-low, all-high, then random corners.
pub fn lipschitz_estimate(net: &Network, schedule: &HydraulicSchedule, set: &UncertaintySet, probe_count: usize, seed: u64) -> Result<LipschitzEstimate> {
    if probe_count < 2 {
        return Err(Error::Config("probe_count must be >= 2".into()));
    }
    let net = with_events_until(net, None)?;
    let nd = net.demand_profiles.len();
    let nominal = Hydraulics::build(&net, schedule, Some(&set.nominal(nd)))?;
    let (ny, nu, steps) = (nominal.num_outputs(), nominal.num_inputs(), nominal.steps);
    let per_hour = net.time_grid.steps_per_hydraulic().max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes: Vec<Vec<f64>> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&f| (0..steps).flat_map(|_| net.boosters.iter().map(move |b| b.u_min + f * (b.u_max - b.u_min))).collect())
        .collect();
    for _ in 0..2 {
        let hourly: Vec<f64> = (0..steps.div_ceil(per_hour) * nu)
            .map(|idx| {
                let b = &net.boosters[idx % nu];
                rng.gen_range(b.u_min..=b.u_max)
            })
            .collect();
        probes.push((0..steps * nu).map(|idx| hourly[(idx / nu / per_hour) * nu + idx % nu]).collect());
    }
    let state = nominal.uniform_state(0, net.initial_conc);
    let base: Vec<Vec<Vec<f64>>> = probes.iter().map(|u| run_window(&nominal, state.clone(), 0, steps, u, true)).collect();

    let nh = set.demand_delta.len();
    let np = set.decay_lo.len();
    let n_dirs = probe_count;
    let signs = |rng: &mut ChaCha8Rng, n: usize, d: usize| -> Vec<f64> {
        match d {
            0 => vec![-1.0; n],
            1 => vec![1.0; n],
            _ => (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect(),
        }
    };
    let mut cases: Vec<(bool, f64, Realization)> = Vec::new();
    for scale in [0.5, 1.0] {
        if set.max_delta() > 0.0 {
            for d in 0..n_dirs {
                let s = signs(&mut rng, nh * nd, d);
                cases.push((true, scale, set.vertex(|h, j| scale * s[h * nd + j], |_| 0.0, nd)));
            }
        }
        if set.decay_lo != set.decay_hi {
            for d in 0..n_dirs {
                let s = signs(&mut rng, np, d);
                cases.push((false, scale, set.vertex(|_, _| 0.0, |p| scale * s[p], nd)));
            }
        }
    }
    let devs: Vec<(bool, Vec<f64>)> = cases
        .par_iter()
        .map(|(is_demand, scale, real)| {
            let hyd = Hydraulics::build(&net, schedule, Some(real))?;
            let mut worst = vec![0.0f64; ny];
            for (u, b) in probes.iter().zip(&base) {
                let run = run_window(&hyd, state.clone(), 0, steps, u, true);
                for (yk, bk) in run.iter().zip(b) {
                    for i in 0..ny {
                        worst[i] = worst[i].max((yk[i] - bk[i]).abs() / scale);
                    }
                }
            }
            Ok((*is_demand, worst))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut est = LipschitzEstimate {
        demand: vec![0.0; ny],
        decay: vec![0.0; ny],
    };
    let (delta, kappa) = (set.max_delta(), set.max_decay_rel());
    for (is_demand, w) in devs {
        let (target, radius) = if is_demand { (&mut est.demand, delta) } else { (&mut est.decay, kappa) };
        for i in 0..ny {
            target[i] = target[i].max(w[i] / radius);
        }
    }
    Ok(est)
}
