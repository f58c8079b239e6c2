use crate::error::{Error, Result};
use crate::network::Network;
use serde::{Deserialize, Serialize};

/// One control strategy: weights, bounds and targets of the MPC problem.
/// Per-output vectors follow `Network::monitored`, per-input vectors
/// follow `Network::boosters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcTask {
    pub w_u: f64,
    pub w_du: f64,
    pub w_y: f64,
    pub y_ref: Vec<f64>,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    pub y_terminal: Vec<f64>,
    pub terminal_tol: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub rate_max: Vec<f64>,
    /// Quality steps applied before re-planning.
    pub control_horizon: usize,
}

impl MpcTask {
    /// Minimum-injection task with the network's bounds and a control
    /// horizon of one hydraulic step.
    pub fn from_network(net: &Network) -> MpcTask {
        MpcTask {
            w_u: 1.0,
            w_du: 10.0,
            w_y: 0.0,
            y_ref: net.monitored.iter().map(|m| m.y_min).collect(),
            y_min: net.monitored.iter().map(|m| m.y_min).collect(),
            y_max: net.monitored.iter().map(|m| m.y_max).collect(),
            y_terminal: net.monitored.iter().map(|m| m.y_terminal).collect(),
            terminal_tol: net.monitored.iter().map(|m| m.terminal_tol).collect(),
            u_min: net.boosters.iter().map(|b| b.u_min).collect(),
            u_max: net.boosters.iter().map(|b| b.u_max).collect(),
            rate_max: net.boosters.iter().map(|b| b.rate_max).collect(),
            control_horizon: net.time_grid.steps_per_hydraulic(),
        }
    }

    pub fn ny(&self) -> usize {
        self.y_min.len()
    }

    pub fn nu(&self) -> usize {
        self.u_min.len()
    }

    /// Task restricted to the given outputs and inputs.
    pub fn select(&self, outputs: &[usize], inputs: &[usize]) -> MpcTask {
        let o = |v: &[f64]| outputs.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let n = |v: &[f64]| inputs.iter().map(|&j| v[j]).collect::<Vec<f64>>();
        MpcTask {
            y_ref: o(&self.y_ref),
            y_min: o(&self.y_min),
            y_max: o(&self.y_max),
            y_terminal: o(&self.y_terminal),
            terminal_tol: o(&self.terminal_tol),
            u_min: n(&self.u_min),
            u_max: n(&self.u_max),
            rate_max: n(&self.rate_max),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ny = self.ny();
        let nu = self.nu();
        let fail = |m: &str| Err(Error::Config(format!("task: {m}")));
        if [&self.y_ref, &self.y_max, &self.y_terminal, &self.terminal_tol].iter().any(|v| v.len() != ny)
            || [&self.u_max, &self.rate_max].iter().any(|v| v.len() != nu)
        {
            return fail("per-output or per-input vectors differ in length");
        }
        if !(self.w_u >= 0.0 && self.w_du >= 0.0 && self.w_y >= 0.0) || !(self.w_u > 0.0 || self.w_y > 0.0) {
            return fail("weights must be >= 0 with w_u or w_y positive");
        }
        if (0..ny).any(|i| !(self.y_min[i] < self.y_max[i]) || self.terminal_tol[i] < 0.0) {
            return fail("output bounds need y_min < y_max and terminal_tol >= 0");
        }
        if (0..nu).any(|j| !(self.u_min[j] <= self.u_max[j]) || !(self.rate_max[j] > 0.0)) {
            return fail("input bounds need u_min <= u_max and rate_max > 0");
        }
        if self.control_horizon == 0 {
            return fail("control_horizon must be >= 1");
        }
        Ok(())
    }
}

/// Tightenings of the output bounds, indexed `[t * ny + i]` over a window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyZones {
    pub ny: usize,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl SafetyZones {
    pub fn zeros(ny: usize, horizon: usize) -> SafetyZones {
        SafetyZones {
            ny,
            upper: vec![0.0; ny * horizon],
            lower: vec![0.0; ny * horizon],
        }
    }

    /// Same value at every step for each output.
    pub fn constant(upper: &[f64], lower: &[f64], horizon: usize) -> SafetyZones {
        let ny = upper.len();
        SafetyZones {
            ny,
            upper: (0..horizon).flat_map(|_| upper.iter().copied()).collect(),
            lower: (0..horizon).flat_map(|_| lower.iter().copied()).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        if self.ny == 0 {
            0
        } else {
            self.upper.len() / self.ny
        }
    }

    /// Drops the first `by` steps and keeps `horizon` steps.
    pub fn shifted(&self, by: usize, horizon: usize) -> SafetyZones {
        let ny = self.ny;
        let take = |v: &[f64]| -> Vec<f64> {
            (0..horizon * ny)
                .map(|idx| v.get(by * ny + idx).copied().unwrap_or(0.0))
                .collect()
        };
        SafetyZones {
            ny,
            upper: take(&self.upper),
            lower: take(&self.lower),
        }
    }

    /// True when every entry of `self` is at least the matching entry of `other`.
    pub fn dominates(&self, other: &SafetyZones) -> bool {
        self.upper.len() == other.upper.len()
            && self.upper.iter().zip(&other.upper).all(|(a, b)| a >= b)
            && self.lower.iter().zip(&other.lower).all(|(a, b)| a >= b)
    }

    pub fn max(&self) -> f64 {
        self.upper.iter().chain(&self.lower).fold(0.0, |a, &b| a.max(b))
    }

    pub fn at(&self, t: usize, i: usize) -> (f64, f64) {
        (self.upper[t * self.ny + i], self.lower[t * self.ny + i])
    }
}
