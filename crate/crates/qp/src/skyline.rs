//! Envelope (skyline) Cholesky factorization.
//!
//! Row `i` of the lower factor is stored densely from its first structural
//! nonzero column up to the diagonal. Fill-in never leaves the envelope, so
//! banded systems (receding-horizon problems ordered time-major) factor in
//! `O(n b²)`.

use crate::csr::CsrMatrix;

#[derive(Debug, Clone)]
pub(crate) struct SkylineCholesky {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

/// Lower-triangular envelope of a symmetric matrix, filled by accumulation.
#[derive(Debug, Clone)]
pub(crate) struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineMatrix {
    /// `first[i]` must be ≤ i.
    pub(crate) fn with_profile(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0usize;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        SkylineMatrix {
            first,
            start,
            data: vec![0.0; acc],
        }
    }

    pub(crate) fn n(&self) -> usize {
        self.first.len()
    }

    /// Adds `v` to entry (i, j) and its mirror; requires `j` inside row `i`'s
    /// envelope when `j ≤ i`.
    #[inline]
    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(c >= self.first[r]);
        self.data[self.start[r] + c - self.first[r]] += v;
    }

    pub(crate) fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n() {
            self.add(i, i, v);
        }
    }

    /// Profile of a symmetric matrix given its lower-triangle pattern plus any
    /// extra cliques (rows of a constraint matrix whose Gram product is added).
    pub(crate) fn profile(n: usize, sym: &CsrMatrix, cliques: &CsrMatrix) -> Vec<usize> {
        let mut first: Vec<usize> = (0..n).collect();
        for i in 0..sym.nrows() {
            let (cols, _) = sym.row(i);
            for &j in cols {
                let (r, c) = if i >= j { (i, j) } else { (j, i) };
                first[r] = first[r].min(c);
            }
        }
        for r in 0..cliques.nrows() {
            let (cols, _) = cliques.row(r);
            if let Some(&lo) = cols.first() {
                for &j in cols {
                    first[j] = first[j].min(lo);
                }
            }
        }
        first
    }

    /// In-place factorization; returns the index of the first non-positive
    /// pivot on failure.
    pub(crate) fn factor(self) -> Result<SkylineCholesky, usize> {
        let SkylineMatrix {
            first,
            start,
            mut data,
        } = self;
        let n = first.len();
        for i in 0..n {
            let fi = first[i];
            let ri = start[i];
            for j in fi..=i {
                let fj = first[j];
                let rj = start[j];
                let k0 = fi.max(fj);
                let mut s = data[ri + j - fi];
                if k0 < j {
                    let a = &data[ri + k0 - fi..ri + j - fi];
                    let b = &data[rj + k0 - fj..rj + j - fj];
                    s -= dot(a, b);
                }
                if j < i {
                    let djj = data[rj + j - fj];
                    data[ri + j - fi] = s / djj;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(i);
                    }
                    data[ri + i - fi] = s.sqrt();
                }
            }
        }
        Ok(SkylineCholesky { first, start, data })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

impl SkylineCholesky {
    /// Solves `L Lᵀ x = b` in place.
    pub(crate) fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.first.len();
        for i in 0..n {
            let fi = self.first[i];
            let ri = self.start[i];
            let row = &self.data[ri..ri + i - fi];
            let s = b[i] - dot(row, &b[fi..i]);
            b[i] = s / self.data[ri + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let ri = self.start[i];
            let xi = b[i] / self.data[ri + i - fi];
            b[i] = xi;
            let row = &self.data[ri..ri + i - fi];
            for (bj, &l) in b[fi..i].iter_mut().zip(row) {
                *bj -= l * xi;
            }
        }
    }
}
