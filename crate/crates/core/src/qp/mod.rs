//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ xᵀ H x + gᵀ x
//! subject to  A_eq x + b_eq = 0
//!             0 ≤ A_in x + b_in ≤ range
//! ```
//!
//! where `range` defaults to +∞ (one-sided rows). Two-sided rows let a single
//! row carry a symmetric bound such as `|Δλ| ≤ r` without doubling the row
//! count.

mod admm;
mod text;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use admm::QpSolver;
pub use text::{parse_text, write_text};

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    /// Upper end of each inequality row, measured from zero; `+∞` for
    /// one-sided rows.
    pub range: DVector<f64>,
}

impl QpProblem {
    /// Problem without constraints.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let d = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, d),
            b_eq: DVector::zeros(0),
            a_ineq: DMatrix::zeros(0, d),
            b_ineq: DVector::zeros(0),
            range: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    /// One-sided rows `A x + b ≥ 0`.
    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.range = DVector::from_element(b.len(), f64::INFINITY);
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn with_ranges(mut self, range: DVector<f64>) -> Self {
        self.range = range;
        self
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.b_ineq.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let d = self.dim();
        if self.h.shape() != (d, d) {
            return Err(format!("H is {:?}, expected {d}×{d}", self.h.shape()));
        }
        if (&self.h - self.h.transpose()).amax() > 1e-10 * self.h.amax().max(1.0) {
            return Err("H is not symmetric".into());
        }
        if self.a_eq.shape() != (self.n_eq(), d) {
            return Err(format!("A_eq is {:?}, expected {}×{d}", self.a_eq.shape(), self.n_eq()));
        }
        if self.a_ineq.shape() != (self.n_ineq(), d) {
            return Err(format!(
                "A_ineq is {:?}, expected {}×{d}",
                self.a_ineq.shape(),
                self.n_ineq()
            ));
        }
        if self.range.len() != self.n_ineq() {
            return Err("range length differs from the inequality count".into());
        }
        if self.range.iter().any(|r| r.is_nan() || *r < 0.0) {
            return Err("ranges must be non-negative".into());
        }
        if self.n_eq() > d {
            return Err(format!("{} equality rows exceed {d} variables", self.n_eq()));
        }
        let finite = self.h.iter().chain(self.g.iter()).all(|v| v.is_finite())
            && self.a_eq.iter().chain(self.b_eq.iter()).all(|v| v.is_finite())
            && self.a_ineq.iter().chain(self.b_ineq.iter()).all(|v| v.is_finite());
        if !finite {
            return Err("problem data contains non-finite values".into());
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Slack of each inequality row, `A x + b`.
    pub fn slacks(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a_ineq * x + &self.b_ineq
    }

    /// Largest violation of any constraint at `x`.
    pub fn primal_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.a_eq * x + &self.b_eq).amax();
        let s = self.slacks(x);
        let ineq = s
            .iter()
            .zip(self.range.iter())
            .map(|(s, r)| (-s).max(s - r).max(0.0))
            .fold(0.0, f64::max);
        eq.max(ineq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::MaxIterations => "max_iterations",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Multipliers such that `H x + g + A_eqᵀ y_eq − A_inᵀ μ = 0`.
    pub eq_multipliers: DVector<f64>,
    /// Positive on rows resting on their lower bound, negative on rows
    /// resting on their upper bound.
    pub ineq_multipliers: DVector<f64>,
    /// Whether the returned point came from the active-set polish.
    pub polished: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    pub max_iterations: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_rho_interval: usize,
    pub scaling_passes: usize,
    pub polish: bool,
    /// Iterations between polish attempts.
    pub polish_interval: usize,
    /// Working-set changes allowed within one polish attempt.
    pub polish_max_changes: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            eps_abs: 1e-8,
            eps_rel: 0.0,
            eps_infeasible: 1e-7,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho_interval: 25,
            scaling_passes: 10,
            polish: true,
            polish_interval: 10,
            polish_max_changes: 60,
        }
    }
}
