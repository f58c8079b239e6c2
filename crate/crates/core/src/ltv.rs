//! Linear time-varying injection-to-output response model.
//!
//! For fixed hydraulics the quality dynamics are linear in the booster
//! setpoints, so outputs over a window are `y = y_free + G u` exactly. The
//! gain matrix covers the whole horizon and is shared between windows.

use crate::error::{Error, Result};
use crate::network::{with_events_until, Network};
use crate::plant::hydraulics::HydraulicSchedule;
use crate::plant::quality::QualityState;
use crate::plant::simulate::Hydraulics;
use crate::uncertainty::run_window;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::sync::Arc;

const MAGIC: &[u8; 4] = b"CHLG";
const FORMAT_VERSION: u32 = 1;

/// Dense gains over the full horizon; entry `(k, i, l, j)` is the response
/// of output `i` at step `k` to a unit setpoint on booster `j` at step `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub ny: usize,
    pub nu: usize,
    pub steps: usize,
    data: Vec<f64>,
}

impl GainMatrix {
    pub fn zeros(ny: usize, nu: usize, steps: usize) -> GainMatrix {
        GainMatrix {
            ny,
            nu,
            steps,
            data: vec![0.0; ny * nu * steps * steps],
        }
    }

    #[inline]
    fn index(&self, k: usize, i: usize, l: usize, j: usize) -> usize {
        (k * self.ny + i) * (self.steps * self.nu) + l * self.nu + j
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, l: usize, j: usize) -> f64 {
        self.data[self.index(k, i, l, j)]
    }

    pub fn set(&mut self, k: usize, i: usize, l: usize, j: usize, v: f64) {
        let idx = self.index(k, i, l, j);
        self.data[idx] = v;
    }

    /// Row of output `i` at step `k` restricted to input steps `l0..`.
    pub fn row_from(&self, k: usize, i: usize, l0: usize) -> &[f64] {
        let start = self.index(k, i, l0, 0);
        let end = self.index(k, i, 0, 0) + self.steps * self.nu;
        &self.data[start..end]
    }

    /// Block of the given outputs and inputs, in the order listed.
    pub fn select(&self, outputs: &[usize], inputs: &[usize]) -> GainMatrix {
        let mut g = GainMatrix::zeros(outputs.len(), inputs.len(), self.steps);
        for k in 0..self.steps {
            for (a, &i) in outputs.iter().enumerate() {
                for l in 0..=k {
                    for (b, &j) in inputs.iter().enumerate() {
                        g.set(k, a, l, b, self.get(k, i, l, j));
                    }
                }
            }
        }
        g
    }

    pub fn write_to(&self, mut w: impl Write, y_free: &[f64]) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [FORMAT_VERSION, self.ny as u32, self.nu as u32, self.steps as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.data.iter().chain(y_free) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump written by [`GainMatrix::write_to`]; returns the gains
    /// and the free response.
    pub fn read_from(mut r: impl Read) -> Result<(GainMatrix, Vec<f64>)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ModelFile("bad magic".into()));
        }
        let mut word = [0u8; 4];
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u32::from_le_bytes(word);
        }
        if header[0] != FORMAT_VERSION {
            return Err(Error::ModelFile(format!("unsupported version {}", header[0])));
        }
        let (ny, nu, steps) = (header[1] as usize, header[2] as usize, header[3] as usize);
        let mut g = GainMatrix::zeros(ny, nu, steps);
        let mut buf = [0u8; 8];
        for v in g.data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let mut y_free = vec![0.0; ny * steps];
        for v in y_free.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok((g, y_free))
    }
}

/// Unit-impulse response of booster `j` at step `l`, from a chlorine-free
/// network with sources switched off. Returns outputs for steps `l..`.
fn impulse(hyd: &Hydraulics, l: usize, j: usize) -> Vec<f64> {
    let nu = hyd.num_inputs();
    let ny = hyd.num_outputs();
    let mut state = QualityState::zero(&hyd.topo, hyd.plan(l));
    let mut u = vec![0.0; nu];
    let mut y = vec![0.0; ny];
    let mut out = vec![0.0; (hyd.steps - l) * ny];
    for k in l..hyd.steps {
        u[j] = if k == l { 1.0 } else { 0.0 };
        hyd.step(k, &mut state, &u, false, &mut y);
        out[(k - l) * ny..(k - l + 1) * ny].copy_from_slice(&y);
        // Everything flushed out of the pipes: the rest stays zero.
        if k > l && (k - l) % 4 == 0 && state.is_zero() {
            break;
        }
    }
    out
}

/// Gain columns for input steps `l >= l0` (earlier columns stay zero).
pub fn extract_gains_from(hyd: &Hydraulics, l0: usize) -> GainMatrix {
    let (ny, nu, steps) = (hyd.num_outputs(), hyd.num_inputs(), hyd.steps);
    let columns: Vec<(usize, usize, Vec<f64>)> = (l0..steps)
        .flat_map(|l| (0..nu).map(move |j| (l, j)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(l, j)| (l, j, impulse(hyd, l, j)))
        .collect();
    let mut g = GainMatrix::zeros(ny, nu, steps);
    for (l, j, col) in columns {
        for t in 0..steps - l {
            for i in 0..ny {
                g.set(l + t, i, l, j, col[t * ny + i]);
            }
        }
    }
    g
}

pub fn extract_gains(hyd: &Hydraulics) -> GainMatrix {
    extract_gains_from(hyd, 0)
}

/// Outputs over `k0..k0 + len` from `state` with all boosters at zero.
pub fn free_response(hyd: &Hydraulics, state: &QualityState, k0: usize, len: usize) -> Vec<f64> {
    let zeros = vec![0.0; len * hyd.num_inputs()];
    run_window(hyd, state.clone(), k0, len, &zeros, true).into_iter().flatten().collect()
}

/// `y = y_free + G u` over a window of `horizon` steps starting at `k0`.
#[derive(Debug, Clone)]
pub struct LtvResponseModel {
    pub gains: Arc<GainMatrix>,
    pub k0: usize,
    pub horizon: usize,
    /// `y_free[t * ny + i]`.
    pub y_free: Vec<f64>,
}

impl LtvResponseModel {
    pub fn window(gains: Arc<GainMatrix>, k0: usize, horizon: usize, y_free: Vec<f64>) -> Result<LtvResponseModel> {
        if k0 + horizon > gains.steps || y_free.len() != horizon * gains.ny {
            return Err(Error::DimensionMismatch(format!(
                "window {k0}+{horizon} with {} free-response values on a {}-step model",
                y_free.len(),
                gains.steps
            )));
        }
        Ok(LtvResponseModel {
            gains,
            k0,
            horizon,
            y_free,
        })
    }

    /// Model from explicit window-relative gains, indexed like [`Self::gain`].
    pub fn from_dense(ny: usize, nu: usize, horizon: usize, gain: impl Fn(usize, usize, usize, usize) -> f64, y_free: Vec<f64>) -> Result<LtvResponseModel> {
        let mut g = GainMatrix::zeros(ny, nu, horizon);
        for k in 0..horizon {
            for i in 0..ny {
                for l in 0..=k {
                    for j in 0..nu {
                        g.set(k, i, l, j, gain(i, k, j, l));
                    }
                }
            }
        }
        LtvResponseModel::window(Arc::new(g), 0, horizon, y_free)
    }

    pub fn ny(&self) -> usize {
        self.gains.ny
    }

    pub fn nu(&self) -> usize {
        self.gains.nu
    }

    /// Window-relative gain of output `i` at step `k` to input `j` at step `l`.
    #[inline]
    pub fn gain(&self, i: usize, k: usize, j: usize, l: usize) -> f64 {
        self.gains.get(self.k0 + k, i, self.k0 + l, j)
    }

    /// Window-relative row of output `i` at step `k` over all window inputs
    /// (time-major).
    pub fn row(&self, i: usize, k: usize) -> &[f64] {
        let full = self.gains.row_from(self.k0 + k, i, self.k0);
        &full[..self.horizon * self.nu()]
    }

    /// Outputs for the time-major input window `u[t * nu + j]`.
    pub fn predict(&self, u: &[f64]) -> Result<Vec<f64>> {
        let (ny, nu) = (self.ny(), self.nu());
        if u.len() != self.horizon * nu {
            return Err(Error::DimensionMismatch(format!(
                "input has {} entries, model expects {}",
                u.len(),
                self.horizon * nu
            )));
        }
        let mut y = self.y_free.clone();
        for k in 0..self.horizon {
            for i in 0..ny {
                let row = &self.row(i, k)[..(k + 1) * nu];
                y[k * ny + i] += row.iter().zip(u).map(|(g, v)| g * v).sum::<f64>();
            }
        }
        Ok(y)
    }

    /// Same gains, different free response (used to fold in known
    /// interaction inputs).
    pub fn with_free_response(&self, y_free: Vec<f64>) -> LtvResponseModel {
        LtvResponseModel {
            y_free,
            ..self.clone()
        }
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let g = if self.k0 == 0 && self.horizon == self.gains.steps {
            self.gains.as_ref().clone()
        } else {
            let (ny, nu) = (self.ny(), self.nu());
            let mut g = GainMatrix::zeros(ny, nu, self.horizon);
            for k in 0..self.horizon {
                for i in 0..ny {
                    for l in 0..=k {
                        for j in 0..nu {
                            g.set(k, i, l, j, self.gain(i, k, j, l));
                        }
                    }
                }
            }
            g
        };
        g.write_to(w, &self.y_free)
    }

    pub fn read_from(r: impl Read) -> Result<LtvResponseModel> {
        let (g, y_free) = GainMatrix::read_from(r)?;
        let h = g.steps;
        LtvResponseModel::window(Arc::new(g), 0, h, y_free)
    }
}

/// Full-horizon model of `net` under `schedule` (nominal demands and decay)
/// from `initial`.
pub fn extract(net: &Network, schedule: &HydraulicSchedule, initial: &QualityState) -> Result<LtvResponseModel> {
    let view = with_events_until(net, None)?;
    let hyd = Hydraulics::build(&view, schedule, None)?;
    let gains = Arc::new(extract_gains(&hyd));
    let y_free = free_response(&hyd, initial, 0, hyd.steps);
    LtvResponseModel::window(gains, 0, hyd.steps, y_free)
}
