use crate::csr::CsrMatrix;
use thiserror::Error;

/// `minimize ½ xᵀ Q x + fᵀ x  subject to  row_lower ≤ A x ≤ row_upper,  lower ≤ x ≤ upper`.
///
/// One-sided rows (`A x ≤ b`) use `-inf` for `row_lower`; equalities set
/// both sides equal.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub quadratic: CsrMatrix,
    pub linear: Vec<f64>,
    pub constraints: CsrMatrix,
    pub row_lower: Vec<f64>,
    pub row_upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    /// Unconstrained problem.
    pub fn new(quadratic: CsrMatrix, linear: Vec<f64>) -> Self {
        let n = linear.len();
        QpProblem {
            quadratic,
            linear,
            constraints: CsrMatrix::zeros(0, n),
            row_lower: Vec::new(),
            row_upper: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn with_rows(mut self, a: CsrMatrix, row_lower: Vec<f64>, row_upper: Vec<f64>) -> Self {
        self.constraints = a;
        self.row_lower = row_lower;
        self.row_upper = row_upper;
        self
    }

    /// `A x ≤ b`.
    pub fn with_inequalities(self, a: CsrMatrix, b: Vec<f64>) -> Self {
        let lo = vec![f64::NEG_INFINITY; b.len()];
        self.with_rows(a, lo, b)
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_rows(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let qx = self.quadratic.mul(x);
        let quad: f64 = qx.iter().zip(x).map(|(a, b)| a * b).sum();
        let lin: f64 = self.linear.iter().zip(x).map(|(a, b)| a * b).sum();
        0.5 * quad + lin
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ax = self.constraints.mul(x);
        let rows = ax
            .iter()
            .zip(self.row_lower.iter().zip(&self.row_upper))
            .map(|(&v, (&lo, &hi))| (lo - v).max(v - hi).max(0.0));
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| (lo - v).max(v - hi).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        let m = self.num_rows();
        let dims_ok = self.quadratic.nrows() == n
            && self.quadratic.ncols() == n
            && self.constraints.ncols() == n
            && self.row_lower.len() == m
            && self.row_upper.len() == m
            && self.lower.len() == n
            && self.upper.len() == n;
        if !dims_ok {
            return Err(QpError::DimensionMismatch(format!(
                "n = {n}, m = {m}, Q is {}x{}, A is {}x{}, row bounds {}/{}, bounds {}/{}",
                self.quadratic.nrows(),
                self.quadratic.ncols(),
                self.constraints.nrows(),
                self.constraints.ncols(),
                self.row_lower.len(),
                self.row_upper.len(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        if !self.quadratic.is_symmetric(1e-12) {
            return Err(QpError::NotSymmetric);
        }
        if let Some(i) = (0..n).find(|&i| self.lower[i] > self.upper[i] || self.lower[i].is_nan() || self.upper[i].is_nan()) {
            return Err(QpError::InvalidBounds { index: i });
        }
        if let Some(i) = (0..m).find(|&i| self.row_lower[i].is_nan() || self.row_upper[i].is_nan()) {
            return Err(QpError::InvalidBounds { index: n + i });
        }
        if self.linear.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("linear term"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "Optimal",
            QpStatus::Infeasible => "Infeasible",
            QpStatus::MaxIterations => "MaxIterations",
        }
    }
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub status: QpStatus,
    pub x: Vec<f64>,
    /// Multipliers of the general rows (positive when the upper side binds).
    pub row_duals: Vec<f64>,
    /// Multipliers of the variable bounds.
    pub bound_duals: Vec<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// Ridge added to the quadratic term to make the minimizer unique.
    pub ridge: f64,
    pub polished: bool,
    /// Normalized dual ray over `[rows; bounds]` when infeasible.
    pub certificate: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub scaling_iters: usize,
    pub check_interval: usize,
    pub adaptive_rho_interval: usize,
    pub infeasibility_tol: f64,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-6,
            rel_tol: 0.0,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            check_interval: 10,
            adaptive_rho_interval: 50,
            infeasibility_tol: 1e-5,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("quadratic term is not symmetric")]
    NotSymmetric,
    #[error("quadratic term is not positive semidefinite (Cholesky of Q + 1e-8 I failed at pivot {pivot})")]
    NotPsd { pivot: usize },
    #[error("inconsistent or NaN bound at index {index}")]
    InvalidBounds { index: usize },
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),
}
