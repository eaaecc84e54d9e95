//! Sequential equilibrium and inverse-kinematics retargeting.
//!
//! Each control cycle linearizes the object equilibrium, the quasi-static
//! joint torques and the object pose task around the current desired state
//! `x = (q_d, λ_L, λ_R)` and solves one QP for the increment `Δx`. Targets
//! that would break a joint, torque or contact limit are not rejected; the
//! state simply stops at the boundary.

mod equilibrium;
mod rows;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ChainState, DualArmModel, ObjectModel};
use crate::qp::{QpProblem, QpSettings, QpSolver, QpStatus};
use crate::spatial::{Pose, Wrench};

pub use equilibrium::{
    arm_quasi_static_torque, equilibrium_jacobian, equilibrium_residual, quasi_static_torque, torque_jacobian,
};
pub use rows::{build_cost, build_inequalities, object_jacobian, ContactRow, InequalityRows, RowLabel, Side};

/// Decision dimension for two 7-joint arms: 14 joints and two wrenches.
pub const DIM: usize = 26;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetConfig {
    /// Control period, s.
    pub dt: f64,
    /// Object pose task weights, (orientation ×3, translation ×3).
    pub w_pose: [f64; 6],
    /// Weight holding the right hand at its grasp relative to the left hand.
    pub w_grasp: f64,
    pub w_reg_q: f64,
    pub w_reg_lambda: f64,
    pub w_posture: f64,
    /// Posture the regularizer pulls toward; empty means the start posture.
    pub nominal_q: Vec<f64>,
    /// Fraction of each joint's torque limit the plan may use.
    pub torque_ratio: f64,
    /// Extra fraction of τ_max kept free for linearization error.
    pub torque_margin: f64,
    /// Distance kept from the joint position limits, rad.
    pub position_margin: f64,
    /// Contact force rate bound, N/s.
    pub force_rate: f64,
    /// Contact torque rate bound, N·m/s.
    pub torque_rate: f64,
    /// Shrink factor on friction, centre-of-pressure and torsion bounds.
    pub contact_safety: f64,
    /// Per-component caps on the orientation (rad) and translation (m)
    /// task error fed to one step; zero disables a cap. Once a target is out
    /// of reach the capped error no longer grows with it, so the adapted pose
    /// settles instead of sliding along the limit surface.
    pub max_task_error: [f64; 2],
    pub tikhonov: f64,
    /// A start state may violate its rows by this much (row units).
    pub start_tolerance: f64,
    pub qp: QpSettings,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            w_pose: [5.0, 5.0, 5.0, 50.0, 50.0, 50.0],
            w_grasp: 500.0,
            w_reg_q: 0.1,
            w_reg_lambda: 1e-6,
            w_posture: 1e-4,
            nominal_q: Vec::new(),
            torque_ratio: 0.9,
            torque_margin: 0.01,
            position_margin: 0.0,
            force_rate: 500.0,
            torque_rate: 50.0,
            contact_safety: 0.9,
            max_task_error: [0.02, 0.01],
            tikhonov: 1e-9,
            start_tolerance: 1e-3,
            qp: QpSettings::default(),
        }
    }
}

impl RetargetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err("dt must be positive".into());
        }
        let weights = self.w_pose.iter().chain([&self.w_grasp, &self.w_reg_q, &self.w_reg_lambda, &self.w_posture]);
        if weights.into_iter().any(|w| !(*w >= 0.0)) {
            return Err("weights must be non-negative".into());
        }
        if !(self.torque_ratio > 0.0 && self.torque_ratio <= 1.0) {
            return Err("torque_ratio must lie in (0, 1]".into());
        }
        if !(self.torque_margin >= 0.0 && self.torque_margin < self.torque_ratio) {
            return Err("torque_margin must lie in [0, torque_ratio)".into());
        }
        if !(self.contact_safety > 0.0 && self.contact_safety <= 1.0) {
            return Err("contact_safety must lie in (0, 1]".into());
        }
        if !(self.force_rate > 0.0 && self.torque_rate > 0.0) {
            return Err("wrench rate bounds must be positive".into());
        }
        if !(self.tikhonov > 0.0) {
            return Err("tikhonov must be positive".into());
        }
        Ok(())
    }

    /// Torque bound each joint is planned against.
    pub fn torque_limits(&self, dual: &DualArmModel) -> DVector<f64> {
        dual.tau_max() * (self.torque_ratio - self.torque_margin)
    }

    /// Per-cycle bound on each wrench component, (torques ×3, forces ×3).
    pub fn rate_per_cycle(&self) -> [f64; 6] {
        let t = self.torque_rate * self.dt;
        let f = self.force_rate * self.dt;
        [t, t, t, f, f, f]
    }

    pub(crate) fn clamp_task_error(&self, mut e: nalgebra::Vector6<f64>) -> nalgebra::Vector6<f64> {
        for (k, cap) in self.max_task_error.iter().enumerate() {
            if *cap > 0.0 {
                for v in e.fixed_rows_mut::<3>(3 * k).iter_mut() {
                    *v = v.clamp(-cap, *cap);
                }
            }
        }
        e
    }
}

/// `x = (q_d, λ_L, λ_R)`. Wrenches are the ones the object exerts on each
/// hand, in that hand's contact frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionState {
    pub q: DVector<f64>,
    pub lambda_l: Wrench,
    pub lambda_r: Wrench,
}

impl DecisionState {
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.q.len();
        let mut x = DVector::zeros(n + 12);
        x.rows_mut(0, n).copy_from(&self.q);
        x.fixed_rows_mut::<6>(n).copy_from(&self.lambda_l.to_vector());
        x.fixed_rows_mut::<6>(n + 6).copy_from(&self.lambda_r.to_vector());
        x
    }

    pub fn from_vector(x: &DVector<f64>, n: usize) -> Self {
        let w = |o: usize| Wrench::from_vector(&nalgebra::Vector6::from_iterator(x.rows(o, 6).iter().copied()));
        Self { q: x.rows(0, n).into_owned(), lambda_l: w(n), lambda_r: w(n + 6) }
    }

    pub fn applied(&self, dx: &DVector<f64>) -> Self {
        Self::from_vector(&(self.to_vector() + dx), self.q.len())
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite()) && self.lambda_l.is_finite() && self.lambda_r.is_finite()
    }
}

/// Everything one step needs from the models at the current state.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub left: ChainState,
    pub right: ChainState,
    pub residual: nalgebra::Vector6<f64>,
    pub eq_jacobian: DMatrix<f64>,
    pub torque: DVector<f64>,
    pub torque_q: DMatrix<f64>,
    pub torque_lambda: DMatrix<f64>,
}

impl Linearization {
    pub fn compute(dual: &DualArmModel, object: &ObjectModel, state: &DecisionState) -> Self {
        let q = state.q.as_slice();
        let (left, right) = dual.states(q);
        let residual = equilibrium::residual_from_states(object, &left, &right, &state.lambda_l, &state.lambda_r);
        let eq_jacobian = equilibrium::jacobian_from_states(object, &left, &right);
        let torque = crate::model::concat(
            &arm_quasi_static_torque(&dual.left, &left, &state.lambda_l),
            &arm_quasi_static_torque(&dual.right, &right, &state.lambda_r),
        );
        let (torque_q, torque_lambda) = torque_jacobian(dual, q, &state.lambda_l, &state.lambda_r);
        Self { left, right, residual, eq_jacobian, torque, torque_q, torque_lambda }
    }
}

#[derive(Clone, Debug)]
pub struct RetargetOutput {
    pub q_d: DVector<f64>,
    pub lambda_l: Wrench,
    pub lambda_r: Wrench,
    pub x_l_d: Pose,
    pub x_r_d: Pose,
    /// Object pose carried by the left hand at `q_d`.
    pub object_pose: Pose,
    /// Some inequality row ended the step on its bound with a non-zero
    /// multiplier, or the QP failed and the state was held.
    pub clamped: bool,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    pub active: Vec<RowLabel>,
}

#[derive(Debug, Error)]
pub enum RetargetError {
    #[error("start state violates {row} by {violation:.3e}; re-initialize")]
    InfeasibleStart { row: String, violation: f64 },
    #[error("no contact wrench pair holds the object within the limits (QP {status})")]
    NoFeasibleWrench { status: QpStatus },
    #[error("start posture outside the limits of joint {joint}")]
    StartOutsideLimits { joint: usize },
    #[error("expected {expected} joint values, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Minimum-norm wrench pair holding the object at `q_start`, subject to the
/// contact and torque rows.
pub fn initialize(
    dual: &DualArmModel,
    object: &ObjectModel,
    q_start: &[f64],
    config: &RetargetConfig,
) -> Result<DecisionState, RetargetError> {
    let n = dual.dof();
    if q_start.len() != n {
        return Err(RetargetError::Dimension { expected: n, got: q_start.len() });
    }
    for (j, joint) in dual.joints().enumerate() {
        if q_start[j] < joint.q_min || q_start[j] > joint.q_max {
            return Err(RetargetError::StartOutsideLimits { joint: j });
        }
    }
    let zero = DecisionState { q: DVector::from_column_slice(q_start), lambda_l: Wrench::zero(), lambda_r: Wrench::zero() };
    let lin = Linearization::compute(dual, object, &zero);

    // Variables: λ_L, λ_R. Equality: r(0) + J_λ λ = 0.
    let a_eq = lin.eq_jacobian.columns(n, 12).into_owned();
    let b_eq = DVector::from_column_slice(lin.residual.as_slice());
    let stability = rows::contact_stability_rows(object, config);
    let m = 2 * stability.len() + 2 * n;
    let mut a = DMatrix::zeros(m, 12);
    let mut b = DVector::zeros(m);
    let mut r = 0;
    for off in [0, 6] {
        for (_, coeffs, offset) in &stability {
            for c in 0..6 {
                a[(r, off + c)] = coeffs[c];
            }
            b[r] = *offset;
            r += 1;
        }
    }
    let limit = config.torque_limits(dual);
    for j in 0..n {
        for c in 0..12 {
            a[(r, c)] = -lin.torque_lambda[(j, c)];
            a[(r + 1, c)] = lin.torque_lambda[(j, c)];
        }
        b[r] = limit[j] - lin.torque[j];
        b[r + 1] = limit[j] + lin.torque[j];
        r += 2;
    }
    let h = DMatrix::identity(12, 12) * (2.0 + config.tikhonov);
    let problem =
        QpProblem::unconstrained(h, DVector::zeros(12)).with_equalities(a_eq, b_eq).with_inequalities(a, b);
    let mut solver = QpSolver::new(QpSettings { max_iterations: 20_000, ..config.qp.clone() });
    let sol = solver.solve(&problem, None);
    if sol.status != QpStatus::Optimal {
        return Err(RetargetError::NoFeasibleWrench { status: sol.status });
    }
    let mut x = DVector::zeros(n + 12);
    x.rows_mut(0, n).copy_from(&zero.q);
    x.rows_mut(n, 12).copy_from(&sol.x);
    Ok(DecisionState::from_vector(&x, n))
}

/// One retargeter per control loop: owns the models, the QP solver and the
/// current desired state.
#[derive(Clone, Debug)]
pub struct Retargeter {
    pub dual: DualArmModel,
    pub object: ObjectModel,
    pub config: RetargetConfig,
    solver: QpSolver,
    state: DecisionState,
    last_dx: Option<DVector<f64>>,
}

impl Retargeter {
    /// Initialize at `q_start` and fill in an empty `nominal_q` with it.
    pub fn new(
        dual: DualArmModel,
        object: ObjectModel,
        q_start: &[f64],
        mut config: RetargetConfig,
    ) -> Result<Self, RetargetError> {
        if config.nominal_q.len() != dual.dof() {
            config.nominal_q = q_start.to_vec();
        }
        let state = initialize(&dual, &object, q_start, &config)?;
        Ok(Self::with_state(dual, object, state, config))
    }

    pub fn with_state(dual: DualArmModel, object: ObjectModel, state: DecisionState, config: RetargetConfig) -> Self {
        let solver = QpSolver::new(config.qp.clone());
        Self { dual, object, config, solver, state, last_dx: None }
    }

    pub fn state(&self) -> &DecisionState {
        &self.state
    }

    /// Replace the desired state, e.g. after re-initialization.
    pub fn set_state(&mut self, state: DecisionState) {
        self.state = state;
        self.last_dx = None;
        self.solver.reset();
    }

    /// Build this cycle's QP without solving it.
    pub fn problem(&self, target: &Pose) -> (QpProblem, InequalityRows) {
        let lin = Linearization::compute(&self.dual, &self.object, &self.state);
        self.problem_from(&lin, target)
    }

    fn problem_from(&self, lin: &Linearization, target: &Pose) -> (QpProblem, InequalityRows) {
        let rows = build_inequalities(&self.dual, &self.object, &self.state, lin, &self.config);
        let (h, g) = build_cost(&self.dual, &self.object, &self.state, lin, target, &self.config);
        let problem = QpProblem {
            h,
            g,
            a_eq: lin.eq_jacobian.clone(),
            b_eq: DVector::from_column_slice(lin.residual.as_slice()),
            a_ineq: rows.a.clone(),
            b_ineq: rows.b.clone(),
            range: rows.range.clone(),
        };
        (problem, rows)
    }

    /// One QP iteration toward `target` (object CoM pose in the world).
    pub fn step(&mut self, target: &Pose) -> Result<RetargetOutput, RetargetError> {
        let lin = Linearization::compute(&self.dual, &self.object, &self.state);
        let (problem, rows) = self.problem_from(&lin, target);

        let zero = DVector::zeros(problem.dim());
        let start_violation = rows.violation(&zero);
        if start_violation > self.config.start_tolerance {
            let s = &rows.b;
            let worst = (0..rows.len())
                .max_by(|&i, &j| {
                    let vi = (-s[i]).max(s[i] - rows.range[i]);
                    let vj = (-s[j]).max(s[j] - rows.range[j]);
                    vi.total_cmp(&vj)
                })
                .unwrap_or(0);
            return Err(RetargetError::InfeasibleStart { row: rows.labels[worst].to_string(), violation: start_violation });
        }

        let sol = self.solver.solve(&problem, self.last_dx.as_ref());
        let accepted = match sol.status {
            QpStatus::Optimal => true,
            QpStatus::MaxIterations => problem.primal_violation(&sol.x) <= 1e-6,
            QpStatus::Infeasible => false,
        };
        let mut active = Vec::new();
        if accepted {
            let slacks = &rows.a * &sol.x + &rows.b;
            for i in 0..rows.len() {
                let tol = 1e-6 * rows.a.row(i).amax().max(1.0);
                let mu = sol.ineq_multipliers[i];
                let lower = slacks[i] <= tol && mu > 1e-9;
                let upper = rows.range[i].is_finite() && rows.range[i] - slacks[i] <= tol && mu < -1e-9;
                if lower || upper {
                    active.push(rows.labels[i]);
                }
            }
            self.state = self.state.applied(&sol.x);
            self.last_dx = Some(sol.x.clone());
        } else {
            self.last_dx = None;
        }
        let clamped = !accepted || !active.is_empty();
        Ok(self.output(clamped, sol.status, sol.iterations, active))
    }

    fn output(&self, clamped: bool, qp_status: QpStatus, qp_iterations: usize, active: Vec<RowLabel>) -> RetargetOutput {
        let (ql, qr) = self.dual.split(self.state.q.as_slice());
        let x_l_d = self.dual.left.forward_kinematics(ql);
        let x_r_d = self.dual.right.forward_kinematics(qr);
        RetargetOutput {
            q_d: self.state.q.clone(),
            lambda_l: self.state.lambda_l,
            lambda_r: self.state.lambda_r,
            x_l_d,
            x_r_d,
            object_pose: self.object.pose_from_left(&x_l_d),
            clamped,
            qp_status,
            qp_iterations,
            active,
        }
    }

    /// Output describing the current state without stepping.
    pub fn current(&self) -> RetargetOutput {
        self.output(false, QpStatus::Optimal, 0, Vec::new())
    }
}
