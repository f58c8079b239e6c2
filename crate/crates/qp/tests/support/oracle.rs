//! Exhaustive active-set reference solver for tiny strictly convex QPs.
//!
//! Every combination of {free, at lower, at upper} per variable and
//! {inactive, at lower, at upper} per row is tried; the KKT system of the
//! resulting equality-constrained problem is solved densely and the best
//! primal-feasible candidate wins. For strictly convex problems the optimum
//! is always among the candidates.

#![allow(dead_code)]

use chloros_qp::{CsrMatrix, QpProblem, TripletBuilder};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[derive(Clone, Copy)]
enum Side {
    Free,
    Lower,
    Upper,
}

fn options(lo: f64, hi: f64) -> Vec<Side> {
    let mut v = vec![Side::Free];
    if lo.is_finite() {
        v.push(Side::Lower);
    }
    if hi.is_finite() && hi != lo {
        v.push(Side::Upper);
    }
    v
}

/// Minimum objective, or `None` when no candidate is feasible.
pub fn enumerate_min(p: &QpProblem) -> Option<(f64, Vec<f64>)> {
    let n = p.num_vars();
    let m = p.num_rows();
    let q = DMatrix::from_fn(n, n, |i, j| p.quadratic.get(i, j));
    let a = DMatrix::from_fn(m, n, |i, j| p.constraints.get(i, j));
    let var_opts: Vec<Vec<Side>> = (0..n).map(|j| options(p.lower[j], p.upper[j])).collect();
    let row_opts: Vec<Vec<Side>> = (0..m).map(|i| options(p.row_lower[i], p.row_upper[i])).collect();
    let all: Vec<&Vec<Side>> = var_opts.iter().chain(row_opts.iter()).collect();
    let mut idx = vec![0usize; n + m];
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        let choice: Vec<Side> = idx.iter().zip(&all).map(|(&k, o)| o[k]).collect();
        if let Some(x) = candidate(p, &q, &a, &choice[..n], &choice[n..]) {
            if p.max_violation(&x) <= 1e-9 {
                let obj = p.objective(&x);
                if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                    best = Some((obj, x));
                }
            }
        }
        // odometer
        let mut k = 0;
        loop {
            if k == idx.len() {
                return best;
            }
            idx[k] += 1;
            if idx[k] < all[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn candidate(p: &QpProblem, q: &DMatrix<f64>, a: &DMatrix<f64>, vars: &[Side], rows: &[Side]) -> Option<Vec<f64>> {
    let n = vars.len();
    let mut x = vec![0.0; n];
    let mut free = Vec::new();
    for (j, s) in vars.iter().enumerate() {
        match s {
            Side::Free => free.push(j),
            Side::Lower => x[j] = p.lower[j],
            Side::Upper => x[j] = p.upper[j],
        }
    }
    let act: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match s {
            Side::Free => None,
            Side::Lower => Some((i, p.row_lower[i])),
            Side::Upper => Some((i, p.row_upper[i])),
        })
        .collect();
    let nf = free.len();
    let na = act.len();
    if na > nf {
        return None;
    }
    if nf == 0 {
        return Some(x);
    }
    let dim = nf + na;
    let mut k = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            k[(r, c)] = q[(i, j)];
        }
        let mut s = -p.linear[i];
        for j in 0..n {
            if !free.contains(&j) {
                s -= q[(i, j)] * x[j];
            }
        }
        rhs[r] = s;
    }
    for (r, &(row, target)) in act.iter().enumerate() {
        let mut t = target;
        for j in 0..n {
            if !free.contains(&j) {
                t -= a[(row, j)] * x[j];
            }
        }
        for (c, &j) in free.iter().enumerate() {
            k[(nf + r, c)] = a[(row, j)];
            k[(c, nf + r)] = a[(row, j)];
        }
        rhs[nf + r] = t;
    }
    let sol = k.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    for (r, &j) in free.iter().enumerate() {
        x[j] = sol[r];
    }
    Some(x)
}

/// Random strictly convex feasible QP with `n` variables and `m` rows.
pub fn random_problem<R: Rng>(rng: &mut R, n: usize, m: usize) -> QpProblem {
    let k = n + 1;
    let b = DMatrix::from_fn(k, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = b.transpose() * b;
    for i in 0..n {
        q[(i, i)] += 0.1;
    }
    let mut qb = TripletBuilder::new(n, n);
    for i in 0..n {
        for j in 0..n {
            qb.push(i, j, q[(i, j)]);
        }
    }
    let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    for j in 0..n {
        match rng.gen_range(0..4) {
            0 => {}
            1 => lower[j] = x0[j] - rng.gen_range(0.0..1.0),
            2 => upper[j] = x0[j] + rng.gen_range(0.0..1.0),
            _ => {
                lower[j] = x0[j] - rng.gen_range(0.0..1.0);
                upper[j] = x0[j] + rng.gen_range(0.0..1.0);
            }
        }
    }
    let mut ab = TripletBuilder::new(m, n);
    let mut rl = vec![f64::NEG_INFINITY; m];
    let mut ru = vec![f64::INFINITY; m];
    for i in 0..m {
        let mut ax0 = 0.0;
        for j in 0..n {
            if rng.gen_bool(0.7) {
                let v: f64 = rng.gen_range(-1.0..1.0);
                ab.push(i, j, v);
                ax0 += v * x0[j];
            }
        }
        match rng.gen_range(0..3) {
            0 => ru[i] = ax0 + rng.gen_range(0.0..0.5),
            1 => rl[i] = ax0 - rng.gen_range(0.0..0.5),
            _ => {
                rl[i] = ax0 - rng.gen_range(0.0..0.5);
                ru[i] = ax0 + rng.gen_range(0.0..0.5);
            }
        }
    }
    QpProblem::new(qb.build(), f)
        .with_rows(ab.build(), rl, ru)
        .with_bounds(lower, upper)
}

pub fn dense(rows: &[&[f64]]) -> CsrMatrix {
    CsrMatrix::from_dense(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

/// Small problems with empty feasible sets: crossed half-lines, a box cut
/// off by a row, and two parallel equalities.
pub fn infeasible_toys() -> Vec<(&'static str, QpProblem)> {
    let crossed = QpProblem::new(CsrMatrix::diagonal(&[2.0]), vec![0.0])
        .with_inequalities(dense(&[&[1.0], &[-1.0]]), vec![0.0, -1.0]);
    let boxed = QpProblem::new(CsrMatrix::identity(2), vec![1.0, -1.0])
        .with_inequalities(dense(&[&[-1.0, -1.0]]), vec![-3.0])
        .with_bounds(vec![0.0, 0.0], vec![1.0, 1.0]);
    let parallel = QpProblem::new(CsrMatrix::zeros(3, 3), vec![1.0, 0.0, -1.0])
        .with_rows(dense(&[&[1.0, 1.0, 0.0], &[2.0, 2.0, 0.0]]), vec![1.0, 3.0], vec![1.0, 3.0]);
    vec![("crossed half-lines", crossed), ("box cut by a row", boxed), ("parallel equalities", parallel)]
}
