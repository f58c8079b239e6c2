//! ADMM iteration for a single connected block of a QP.
//!
//! The problem is rewritten as `min ½xᵀPx + qᵀx  s.t.  l ≤ Ãx ≤ u` with
//! `Ã = [A; I]`, equilibrated (Ruiz), and iterated with a cached factorization
//! of `P + σI + Ãᵀ diag(ρ) Ã`.

use crate::csr::{CsrMatrix, TripletBuilder};
use crate::problem::{QpError, QpSettings, QpStatus};
use crate::skyline::{SkylineCholesky, SkylineMatrix};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_REFACTOR_RATIO: f64 = 5.0;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;
const POLISH_DELTA: f64 = 1e-6;
const POLISH_REFINE_ITERS: usize = 10;
const RIDGE: f64 = 1e-9;
const PSD_SHIFT: f64 = 1e-8;
const PD_SHIFT: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub status: QpStatus,
    pub x: Vec<f64>,
    /// Unscaled multipliers over `[rows; bounds]`.
    pub y: Vec<f64>,
    pub iterations: usize,
    pub polished: bool,
    pub certificate: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    n: usize,
    p: CsrMatrix,
    q: Vec<f64>,
    a: CsrMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
    profile: Vec<usize>,
    rho: f64,
    rho_vec: Vec<f64>,
    factor: SkylineCholesky,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    settings: QpSettings,
    pub ridge: f64,
}

fn limit_scaling(v: f64) -> f64 {
    if v < SCALE_MIN {
        1.0
    } else {
        v.min(SCALE_MAX)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn lower_entries(m: &CsrMatrix, mut f: impl FnMut(usize, usize, f64)) {
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j <= i {
                f(i, j, v);
            }
        }
    }
}

/// Returns the ridge needed for a unique minimizer, or an error when `q` is
/// not positive semidefinite.
pub(crate) fn check_psd(q: &CsrMatrix) -> Result<f64, QpError> {
    let n = q.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let profile = SkylineMatrix::profile(n, q, &CsrMatrix::zeros(0, n));
    let mut base = SkylineMatrix::with_profile(profile);
    lower_entries(q, |i, j, v| base.add(i, j, v));
    let mut shifted = base.clone();
    shifted.add_diagonal(PSD_SHIFT);
    if let Err(pivot) = shifted.factor() {
        return Err(QpError::NotPsd { pivot });
    }
    base.add_diagonal(-PD_SHIFT);
    Ok(if base.factor().is_ok() { 0.0 } else { RIDGE })
}

impl Kernel {
    /// `a` holds the general rows only; bound rows are appended here.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        quad: &CsrMatrix,
        lin: &[f64],
        a: &CsrMatrix,
        row_lower: &[f64],
        row_upper: &[f64],
        lower: &[f64],
        upper: &[f64],
        settings: QpSettings,
    ) -> Result<Kernel, QpError> {
        let n = lin.len();
        let m = a.nrows();
        let mt = m + n;
        let ridge = check_psd(quad)?;

        let mut pb = TripletBuilder::new(n, n);
        for i in 0..n {
            let (cols, vals) = quad.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                pb.push(i, j, v);
            }
            pb.push(i, i, ridge);
        }
        let mut p = pb.build();
        let mut ab = TripletBuilder::new(mt, n);
        for i in 0..m {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                ab.push(i, j, v);
            }
        }
        for j in 0..n {
            ab.push(m + j, j, 1.0);
        }
        let mut at = ab.build();
        let mut q = lin.to_vec();

        let mut d = vec![1.0; n];
        let mut e = vec![1.0; mt];
        let mut c = 1.0;
        for _ in 0..settings.scaling_iters {
            let pn = p.col_inf_norms();
            let an = at.col_inf_norms();
            let dt: Vec<f64> = (0..n).map(|j| 1.0 / limit_scaling(pn[j].max(an[j])).sqrt()).collect();
            let et: Vec<f64> = (0..mt).map(|i| 1.0 / limit_scaling(at.row_inf_norm(i)).sqrt()).collect();
            p.scale_rows_cols(&dt, &dt);
            at.scale_rows_cols(&et, &dt);
            for j in 0..n {
                q[j] *= dt[j];
                d[j] *= dt[j];
            }
            for i in 0..mt {
                e[i] *= et[i];
            }
            let pn = p.col_inf_norms();
            let mean = if n > 0 { pn.iter().sum::<f64>() / n as f64 } else { 0.0 };
            let ct = 1.0 / limit_scaling(mean.max(inf_norm(&q)));
            p = p.scale(ct);
            q.iter_mut().for_each(|v| *v *= ct);
            c *= ct;
        }

        let profile = SkylineMatrix::profile(n, &p, &at);
        let (l, u) = scaled_bounds(&e, row_lower, row_upper, lower, upper);
        let rho = settings.rho;
        let rho_vec = rho_vector(rho, &l, &u);
        let factor = build_kkt(&profile, &p, &at, settings.sigma, &rho_vec)
            .factor()
            .map_err(|pivot| QpError::NotPsd { pivot })?;
        Ok(Kernel {
            n,
            p,
            q,
            a: at,
            l,
            u,
            d,
            e,
            c,
            profile,
            rho,
            rho_vec,
            factor,
            x: vec![0.0; n],
            z: vec![0.0; mt],
            y: vec![0.0; mt],
            settings,
            ridge,
        })
    }

    pub(crate) fn update_linear(&mut self, lin: &[f64]) {
        for j in 0..self.n {
            self.q[j] = self.c * self.d[j] * lin[j];
        }
    }

    pub(crate) fn update_bounds(&mut self, row_lower: &[f64], row_upper: &[f64], lower: &[f64], upper: &[f64]) {
        let (l, u) = scaled_bounds(&self.e, row_lower, row_upper, lower, upper);
        self.l = l;
        self.u = u;
        let rho_vec = rho_vector(self.rho, &self.l, &self.u);
        if rho_vec != self.rho_vec {
            self.set_rho(self.rho);
        }
    }

    /// Starts the next solve from unscaled primal/dual values.
    pub(crate) fn warm_start(&mut self, x: &[f64], y: &[f64]) {
        for j in 0..self.n {
            self.x[j] = x[j] / self.d[j];
        }
        self.a.mul_vec(&self.x, &mut self.z);
        for (r, zr) in self.z.iter_mut().enumerate() {
            *zr = zr.clamp(self.l[r], self.u[r]);
            self.y[r] = y[r] * self.c / self.e[r];
        }
    }

    fn set_rho(&mut self, rho: f64) -> bool {
        let rho_vec = rho_vector(rho, &self.l, &self.u);
        match build_kkt(&self.profile, &self.p, &self.a, self.settings.sigma, &rho_vec).factor() {
            Ok(f) => {
                self.rho = rho;
                self.rho_vec = rho_vec;
                self.factor = f;
                true
            }
            Err(_) => false,
        }
    }

    fn unscaled_x(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().zip(&self.d).map(|(v, d)| v * d).collect()
    }

    fn unscaled_y(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter().zip(&self.e).map(|(v, e)| v * e / self.c).collect()
    }

    pub(crate) fn solve(&mut self) -> Outcome {
        let s = self.settings;
        let n = self.n;
        let mt = self.a.nrows();
        let mut rhs = vec![0.0; n];
        let mut tmp = vec![0.0; mt];
        let mut zt = vec![0.0; mt];
        let mut ax = vec![0.0; mt];
        let mut px = vec![0.0; n];
        let mut aty = vec![0.0; n];
        let mut y_prev = vec![0.0; mt];
        let mut polish_gate = 1e-2f64.max(s.tol);
        let check_every = s.check_interval.max(1);

        for iter in 1..=s.max_iter {
            let check = iter % check_every == 0 || iter == 1;
            for j in 0..n {
                rhs[j] = s.sigma * self.x[j] - self.q[j];
            }
            for r in 0..mt {
                tmp[r] = self.rho_vec[r] * self.z[r] - self.y[r];
            }
            self.a.tmul_vec_add(&tmp, &mut rhs);
            self.factor.solve_in_place(&mut rhs);
            self.a.mul_vec(&rhs, &mut zt);
            if check {
                y_prev.copy_from_slice(&self.y);
            }
            for j in 0..n {
                self.x[j] = s.alpha * rhs[j] + (1.0 - s.alpha) * self.x[j];
            }
            for r in 0..mt {
                let zr = s.alpha * zt[r] + (1.0 - s.alpha) * self.z[r];
                let znew = (zr + self.y[r] / self.rho_vec[r]).clamp(self.l[r], self.u[r]);
                self.y[r] += self.rho_vec[r] * (zr - znew);
                self.z[r] = znew;
            }
            if !check {
                continue;
            }

            self.a.mul_vec(&self.x, &mut ax);
            self.p.mul_vec(&self.x, &mut px);
            aty.iter_mut().for_each(|v| *v = 0.0);
            self.a.tmul_vec_add(&self.y, &mut aty);
            let mut prim = 0.0f64;
            let (mut ax_n, mut z_n) = (0.0f64, 0.0f64);
            let mut prim_scaled = 0.0f64;
            for r in 0..mt {
                prim = prim.max((ax[r] - self.z[r]).abs() / self.e[r]);
                ax_n = ax_n.max((ax[r] / self.e[r]).abs());
                z_n = z_n.max((self.z[r] / self.e[r]).abs());
                prim_scaled = prim_scaled.max((ax[r] - self.z[r]).abs());
            }
            let mut dual = 0.0f64;
            let (mut px_n, mut aty_n, mut q_n) = (0.0f64, 0.0f64, 0.0f64);
            let mut dual_scaled = 0.0f64;
            for j in 0..n {
                let scale = self.c * self.d[j];
                let rj = px[j] + self.q[j] + aty[j];
                dual = dual.max(rj.abs() / scale);
                px_n = px_n.max((px[j] / scale).abs());
                aty_n = aty_n.max((aty[j] / scale).abs());
                q_n = q_n.max((self.q[j] / scale).abs());
                dual_scaled = dual_scaled.max(rj.abs());
            }
            let eps_p = s.tol + s.rel_tol * ax_n.max(z_n);
            let eps_d = s.tol + s.rel_tol * px_n.max(aty_n).max(q_n);

            if prim <= eps_p && dual <= eps_d {
                let polished = s.polish && self.polish();
                return self.outcome(QpStatus::Optimal, iter, polished, None);
            }

            if let Some(cert) = self.infeasibility(&y_prev) {
                return self.outcome(QpStatus::Infeasible, iter, false, Some(cert));
            }

            let worst = prim.max(dual);
            if s.polish && worst <= polish_gate {
                if self.polish() {
                    return self.outcome(QpStatus::Optimal, iter, true, None);
                }
                polish_gate = worst / 10.0;
            }

            if iter % s.adaptive_rho_interval.max(1) == 0 {
                let pden = ax.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(inf_norm(&self.z));
                let dden = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&self.q));
                if pden > 0.0 && dden > 0.0 && dual_scaled > 0.0 {
                    let ratio = (prim_scaled / pden) / (dual_scaled / dden);
                    let new_rho = (self.rho * ratio.sqrt()).clamp(RHO_MIN, RHO_MAX);
                    if new_rho > self.rho * RHO_REFACTOR_RATIO || new_rho < self.rho / RHO_REFACTOR_RATIO {
                        self.set_rho(new_rho);
                    }
                }
            }
        }
        let polished = s.polish && self.polish();
        let status = if polished { QpStatus::Optimal } else { QpStatus::MaxIterations };
        self.outcome(status, s.max_iter, polished, None)
    }

    fn outcome(&self, status: QpStatus, iterations: usize, polished: bool, certificate: Option<Vec<f64>>) -> Outcome {
        Outcome {
            status,
            x: self.unscaled_x(&self.x),
            y: self.unscaled_y(&self.y),
            iterations,
            polished,
            certificate,
        }
    }

    /// Primal infeasibility test on the dual step `y - y_prev`.
    fn infeasibility(&self, y_prev: &[f64]) -> Option<Vec<f64>> {
        let mt = self.y.len();
        let mut dy = vec![0.0; mt];
        for r in 0..mt {
            let mut v = self.y[r] - y_prev[r];
            if self.u[r] == f64::INFINITY {
                v = v.min(0.0);
            }
            if self.l[r] == f64::NEG_INFINITY {
                v = v.max(0.0);
            }
            dy[r] = v;
        }
        let dyu: Vec<f64> = dy.iter().zip(&self.e).map(|(v, e)| v * e).collect();
        let norm = inf_norm(&dyu);
        if !(norm > 1e-30) {
            return None;
        }
        let eps = self.settings.infeasibility_tol * norm;
        let mut aty = vec![0.0; self.n];
        self.a.tmul_vec_add(&dy, &mut aty);
        let at_norm = aty.iter().zip(&self.d).map(|(v, d)| (v / d).abs()).fold(0.0f64, f64::max);
        if at_norm > eps {
            return None;
        }
        let mut support = 0.0;
        for r in 0..mt {
            if dy[r] > 0.0 {
                support += self.u[r] * dy[r];
            } else if dy[r] < 0.0 {
                support += self.l[r] * dy[r];
            }
        }
        if support < -eps {
            Some(dyu.iter().map(|v| v / norm).collect())
        } else {
            None
        }
    }

    /// Solves the equality-constrained problem on the guessed active set and
    /// accepts it only if it satisfies the KKT conditions to tolerance.
    fn polish(&mut self) -> bool {
        let n = self.n;
        let mt = self.a.nrows();
        let tol = self.settings.tol;
        // +1: upper side, -1: lower side, 2: equality
        let mut side = vec![0i8; mt];
        let mut active = Vec::new();
        for r in 0..mt {
            let (l, u, z, y) = (self.l[r], self.u[r], self.z[r], self.y[r]);
            if l == u {
                side[r] = 2;
            } else if l > f64::NEG_INFINITY && z - l < -y {
                side[r] = -1;
            } else if u < f64::INFINITY && u - z < y {
                side[r] = 1;
            } else {
                continue;
            }
            active.push(r);
        }
        let bound = |r: usize| if side[r] == 1 { self.u[r] } else { self.l[r] };

        let mut kkt = SkylineMatrix::with_profile(self.profile.clone());
        lower_entries(&self.p, |i, j, v| kkt.add(i, j, v));
        kkt.add_diagonal(POLISH_DELTA);
        for &r in &active {
            let (cols, vals) = self.a.row(r);
            for a in 0..cols.len() {
                for b in 0..=a {
                    kkt.add(cols[a], cols[b], vals[a] * vals[b] / POLISH_DELTA);
                }
            }
        }
        let Ok(f) = kkt.factor() else {
            return false;
        };

        let row_dot = |r: usize, x: &[f64]| -> f64 {
            let (cols, vals) = self.a.row(r);
            cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
        };
        let mut x = vec![0.0; n];
        let mut ya = vec![0.0; active.len()];
        let mut r1 = vec![0.0; n];
        let mut r2 = vec![0.0; active.len()];
        for _ in 0..=POLISH_REFINE_ITERS {
            // Residual of the exact KKT system at (x, ya).
            self.p.mul_vec(&x, &mut r1);
            for j in 0..n {
                r1[j] = -self.q[j] - r1[j];
            }
            for (k, &r) in active.iter().enumerate() {
                let (cols, vals) = self.a.row(r);
                for (&j, &v) in cols.iter().zip(vals) {
                    r1[j] -= v * ya[k];
                }
                r2[k] = bound(r) - row_dot(r, &x);
            }
            let res = inf_norm(&r1).max(inf_norm(&r2));
            if res < 1e-14 {
                break;
            }
            let mut dx = r1.clone();
            for (k, &r) in active.iter().enumerate() {
                let (cols, vals) = self.a.row(r);
                for (&j, &v) in cols.iter().zip(vals) {
                    dx[j] += v * r2[k] / POLISH_DELTA;
                }
            }
            f.solve_in_place(&mut dx);
            for (k, &r) in active.iter().enumerate() {
                ya[k] += (row_dot(r, &dx) - r2[k]) / POLISH_DELTA;
            }
            for j in 0..n {
                x[j] += dx[j];
            }
        }

        let mut y = vec![0.0; mt];
        for (k, &r) in active.iter().enumerate() {
            y[r] = ya[k];
        }
        // Verification in unscaled units.
        for r in 0..mt {
            let v = row_dot(r, &x);
            let viol = (self.l[r] - v).max(v - self.u[r]).max(0.0) / self.e[r];
            if !(viol <= tol) {
                return false;
            }
            let yu = y[r] * self.e[r] / self.c;
            let wrong_sign = match side[r] {
                1 => yu < -tol,
                -1 => yu > tol,
                _ => false,
            };
            if wrong_sign || !yu.is_finite() {
                return false;
            }
        }
        let mut grad = vec![0.0; n];
        self.p.mul_vec(&x, &mut grad);
        self.a.tmul_vec_add(&y, &mut grad);
        for j in 0..n {
            let rj = (grad[j] + self.q[j]) / (self.c * self.d[j]);
            if !(rj.abs() <= tol) {
                return false;
            }
        }
        let mut z = vec![0.0; mt];
        self.a.mul_vec(&x, &mut z);
        for r in 0..mt {
            z[r] = z[r].clamp(self.l[r], self.u[r]);
        }
        self.x = x;
        self.z = z;
        self.y = y;
        true
    }
}

fn scaled_bounds(e: &[f64], row_lower: &[f64], row_upper: &[f64], lower: &[f64], upper: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l: Vec<f64> = row_lower.iter().chain(lower).zip(e).map(|(v, e)| v * e).collect();
    let u: Vec<f64> = row_upper.iter().chain(upper).zip(e).map(|(v, e)| v * e).collect();
    (l, u)
}

fn rho_vector(rho: f64, l: &[f64], u: &[f64]) -> Vec<f64> {
    l.iter()
        .zip(u)
        .map(|(&lo, &hi)| {
            if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                RHO_MIN
            } else if lo == hi {
                (RHO_EQ_FACTOR * rho).min(RHO_MAX)
            } else {
                rho
            }
        })
        .collect()
}

fn build_kkt(profile: &[usize], p: &CsrMatrix, a: &CsrMatrix, sigma: f64, rho: &[f64]) -> SkylineMatrix {
    let mut k = SkylineMatrix::with_profile(profile.to_vec());
    lower_entries(p, |i, j, v| k.add(i, j, v));
    k.add_diagonal(sigma);
    for (r, &rr) in rho.iter().enumerate() {
        let (cols, vals) = a.row(r);
        for x in 0..cols.len() {
            let w = rr * vals[x];
            for y in 0..=x {
                k.add(cols[x], cols[y], w * vals[y]);
            }
        }
    }
    k
}
