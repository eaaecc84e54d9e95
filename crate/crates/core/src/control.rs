//! Torque-level interaction control: joint PD, a fractal-impedance (NLPD)
//! Cartesian controller per arm, a relative-pose PD between the hands,
//! gravity and Coriolis compensation and the contact-wrench feedforward.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DVector, Vector6};
use serde::{Deserialize, Serialize};

use crate::model::{concat, inverse_dynamics, relative_jacobian_of, ChainState, DualArmModel};
use crate::spatial::{pose_error, Pose, Wrench};

/// Saturated PD channel: `k_p = f/d`, `k_d = 2ζ√k_p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdParams {
    pub f: f64,
    pub d: f64,
    pub zeta: f64,
}

impl PdParams {
    pub fn new(f: f64, d: f64, zeta: f64) -> Result<Self, String> {
        let p = Self { f, d, zeta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.f > 0.0 && self.f.is_finite()) {
            return Err(format!("saturation force must be positive, got {}", self.f));
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(format!("saturation distance must be positive, got {}", self.d));
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(format!("damping ratio must be non-negative, got {}", self.zeta));
        }
        Ok(())
    }

    pub fn kp(&self) -> f64 {
        self.f / self.d
    }

    pub fn kd(&self) -> f64 {
        2.0 * self.zeta * self.kp().sqrt()
    }
}

/// Spring part of the saturated PD.
pub fn pd_spring(error: f64, p: &PdParams) -> f64 {
    if error.abs() < p.d {
        p.kp() * error
    } else {
        error.signum() * p.f
    }
}

/// `F_k − k_d α̇`.
pub fn pd_force(alpha_d: f64, alpha: f64, alpha_dot: f64, p: &PdParams) -> f64 {
    pd_spring(alpha_d - alpha, p) - p.kd() * alpha_dot
}

/// Fractal-impedance channel. The spring stays linear up to `ξd`, then
/// saturates smoothly toward `E_max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NlpdParams {
    pub pd: PdParams,
    pub xi: f64,
    pub e_max: f64,
}

impl NlpdParams {
    /// `E_max = f`.
    pub fn from_pd(pd: PdParams, xi: f64) -> Self {
        Self { pd, xi, e_max: pd.f }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.pd.validate()?;
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(format!("xi must lie in (0, 1), got {}", self.xi));
        }
        if !(self.e_max > self.e0()) {
            return Err(format!("E_max {} must exceed E_0 {}", self.e_max, self.e0()));
        }
        Ok(())
    }

    pub fn e0(&self) -> f64 {
        self.xi * self.pd.kp() * self.pd.d
    }

    pub fn lambda(&self) -> f64 {
        self.e_max - self.e0()
    }

    pub fn s(&self) -> f64 {
        (1.0 - self.xi) * self.pd.d / (2.0 * PI)
    }

    pub fn alpha_b(&self) -> f64 {
        self.xi * self.pd.d
    }

    /// Divergence-branch effort for an error `a`. Odd in `a`.
    pub fn energy(&self, a: f64) -> f64 {
        let m = a.abs();
        let e = if m <= self.alpha_b() {
            self.pd.kp() * m
        } else {
            0.5 * self.lambda() * (((m - self.alpha_b()) / self.s() - PI).tanh() + 1.0) + self.e0()
        };
        a.signum() * e
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FicPhase {
    #[default]
    Divergence,
    Convergence,
}

/// Per-channel episode bookkeeping. `alpha_max` is signed: the largest error
/// of the current excursion, on its side of zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FicChannelState {
    pub phase: FicPhase,
    pub alpha_max: f64,
}

const PHASE_HYSTERESIS: f64 = 1e-9;

/// Returns the spring force and the channel state after this sample.
pub fn nlpd_spring(error: f64, p: &NlpdParams, state: &FicChannelState) -> (f64, FicChannelState) {
    let crossed = error != 0.0 && state.alpha_max != 0.0 && error.signum() != state.alpha_max.signum();
    if crossed || error.abs() >= state.alpha_max.abs() - PHASE_HYSTERESIS {
        let next = FicChannelState {
            phase: FicPhase::Divergence,
            alpha_max: if crossed || error.abs() > state.alpha_max.abs() { error } else { state.alpha_max },
        };
        return (p.energy(error), next);
    }
    let am = state.alpha_max;
    let f = 2.0 * p.energy(am) / am * (error - 0.5 * am);
    (f, FicChannelState { phase: FicPhase::Convergence, alpha_max: am })
}

/// The spring held on one branch, which is smooth in `error`. A
/// convergence branch without an episode falls back to divergence.
pub fn nlpd_spring_on(error: f64, p: &NlpdParams, state: &FicChannelState, phase: FicPhase) -> f64 {
    let am = state.alpha_max;
    match phase {
        FicPhase::Convergence if am != 0.0 => 2.0 * p.energy(am) / am * (error - 0.5 * am),
        _ => p.energy(error),
    }
}

/// `F_k − k_d α̇` with the fractal-impedance spring.
pub fn nlpd_force(
    alpha_d: f64,
    alpha: f64,
    alpha_dot: f64,
    p: &NlpdParams,
    state: &FicChannelState,
) -> (f64, FicChannelState) {
    let (f, next) = nlpd_spring(alpha_d - alpha, p, state);
    (f - p.pd.kd() * alpha_dot, next)
}

/// One linear and one angular channel, applied to the six pose-error
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartesianGains {
    pub linear: PdParams,
    pub angular: PdParams,
}

impl CartesianGains {
    fn channel(&self, k: usize) -> &PdParams {
        if k < 3 {
            &self.angular
        } else {
            &self.linear
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlParams {
    /// NLPD gains of each arm's Cartesian controller.
    pub cartesian: CartesianGains,
    pub relative: CartesianGains,
    pub joint: PdParams,
    pub xi: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlFile::default().params().expect("default control parameters are valid")
    }
}

impl ControlParams {
    pub fn nlpd(&self, k: usize) -> NlpdParams {
        NlpdParams::from_pd(*self.cartesian.channel(k), self.xi)
    }

    pub fn validate(&self) -> Result<(), String> {
        for k in [0, 3] {
            self.nlpd(k).validate()?;
            self.relative.channel(k).validate()?;
        }
        self.joint.validate()
    }
}

/// One channel as written in the parameter file. Angular distances are in
/// degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDoc {
    pub f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_deg: Option<f64>,
    pub zeta: f64,
}

impl ChannelDoc {
    fn linear(f: f64, d: f64, zeta: f64) -> Self {
        Self { f, d: Some(d), d_deg: None, zeta }
    }

    fn angular(f: f64, d_deg: f64, zeta: f64) -> Self {
        Self { f, d: None, d_deg: Some(d_deg), zeta }
    }

    fn to_params(self, name: &str) -> Result<PdParams, String> {
        let d = match (self.d, self.d_deg) {
            (Some(d), None) => d,
            (None, Some(deg)) => deg.to_radians(),
            _ => return Err(format!("{name}: give exactly one of d and d_deg")),
        };
        PdParams::new(self.f, d, self.zeta).map_err(|e| format!("{name}: {e}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDoc {
    pub linear: ChannelDoc,
    pub angular: ChannelDoc,
}

/// Parameter file: Cartesian (per arm), relative and joint-space groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlFile {
    #[serde(default = "default_xi")]
    pub xi: f64,
    pub cartesian: GroupDoc,
    pub relative: GroupDoc,
    pub joint: ChannelDoc,
}

fn default_xi() -> f64 {
    0.9
}

/// Allowed range of the Cartesian linear saturation force.
pub const F_LIN_RANGE: [f64; 2] = [10.0, 40.0];

impl Default for ControlFile {
    fn default() -> Self {
        Self {
            xi: default_xi(),
            cartesian: GroupDoc { linear: ChannelDoc::linear(25.0, 0.08, 0.8), angular: ChannelDoc::angular(2.0, 8.0, 0.2) },
            relative: GroupDoc { linear: ChannelDoc::linear(50.0, 0.05, 0.4), angular: ChannelDoc::angular(5.0, 5.0, 0.1) },
            joint: ChannelDoc::angular(0.3, 10.0, 0.0),
        }
    }
}

impl ControlFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn params(&self) -> Result<ControlParams, String> {
        let f_lin = self.cartesian.linear.f;
        if f_lin < F_LIN_RANGE[0] || f_lin > F_LIN_RANGE[1] {
            return Err(format!("cartesian.linear.f = {f_lin} outside [{}, {}]", F_LIN_RANGE[0], F_LIN_RANGE[1]));
        }
        let p = ControlParams {
            cartesian: CartesianGains {
                linear: self.cartesian.linear.to_params("cartesian.linear")?,
                angular: self.cartesian.angular.to_params("cartesian.angular")?,
            },
            relative: CartesianGains {
                linear: self.relative.linear.to_params("relative.linear")?,
                angular: self.relative.angular.to_params("relative.angular")?,
            },
            joint: self.joint.to_params("joint")?,
            xi: self.xi,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Everything the controller tracks in one cycle.
#[derive(Clone, Debug)]
pub struct ControlTarget {
    pub q_d: DVector<f64>,
    pub x_l_d: Pose,
    pub x_r_d: Pose,
    /// Right-hand pose in the left-hand frame.
    pub relative_d: Pose,
    /// Wrenches the object is expected to exert on each hand.
    pub lambda_l: Wrench,
    pub lambda_r: Wrench,
}

/// Per-term torque contributions; `total` is their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct TorqueTerms {
    pub coriolis: DVector<f64>,
    pub gravity: DVector<f64>,
    pub joint: DVector<f64>,
    pub feedforward: DVector<f64>,
    pub cartesian: DVector<f64>,
    pub relative: DVector<f64>,
    pub total: DVector<f64>,
}

/// The full torque law with its twelve fractal-impedance channels (six per
/// arm).
#[derive(Clone, Debug)]
pub struct InteractionController {
    pub params: ControlParams,
    fic: [FicChannelState; 12],
}

impl InteractionController {
    pub fn new(params: ControlParams) -> Self {
        Self { params, fic: [FicChannelState::default(); 12] }
    }

    pub fn channels(&self) -> &[FicChannelState; 12] {
        &self.fic
    }

    pub fn reset(&mut self) {
        self.fic = [FicChannelState::default(); 12];
    }

    /// Torques without touching the channel state; also returns the state the
    /// channels would move to.
    pub fn evaluate(
        &self,
        dual: &DualArmModel,
        q: &[f64],
        dq: &[f64],
        target: &ControlTarget,
    ) -> (TorqueTerms, [FicChannelState; 12]) {
        let (left, right) = dual.states(q);
        self.evaluate_with(dual, &left, &right, q, dq, target)
    }

    pub fn evaluate_with(
        &self,
        dual: &DualArmModel,
        left: &ChainState,
        right: &ChainState,
        q: &[f64],
        dq: &[f64],
        target: &ControlTarget,
    ) -> (TorqueTerms, [FicChannelState; 12]) {
        self.evaluate_on(dual, left, right, q, dq, target, None)
    }

    /// As [`evaluate_with`](Self::evaluate_with), with every Cartesian
    /// channel held on the given branch when `phases` is set. The returned
    /// channel state still reports the branch the error actually selects.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate_on(
        &self,
        dual: &DualArmModel,
        left: &ChainState,
        right: &ChainState,
        q: &[f64],
        dq: &[f64],
        target: &ControlTarget,
        phases: Option<&[FicPhase; 12]>,
    ) -> (TorqueTerms, [FicChannelState; 12]) {
        let n = dual.dof();
        let n_l = dual.left.dof();
        let dqv = DVector::from_column_slice(dq);
        let (dql, dqr) = dual.split(dq);
        let zl = vec![0.0; n_l];
        let zr = vec![0.0; n - n_l];
        let moving = dq.iter().any(|v| *v != 0.0);

        let gravity = concat(
            &inverse_dynamics(&dual.left, left, &zl, &zl, true, None),
            &inverse_dynamics(&dual.right, right, &zr, &zr, true, None),
        );
        let coriolis = if moving {
            concat(
                &inverse_dynamics(&dual.left, left, dql, &zl, false, None),
                &inverse_dynamics(&dual.right, right, dqr, &zr, false, None),
            )
        } else {
            DVector::zeros(n)
        };

        let joint = DVector::from_fn(n, |j, _| pd_force(target.q_d[j], q[j], dq[j], &self.params.joint));

        let mut feedforward = DVector::zeros(n);
        let mut cartesian = DVector::zeros(n);
        let mut next = self.fic;
        for (arm, state, desired, lambda, off, dof) in [
            (0, left, &target.x_l_d, &target.lambda_l, 0, n_l),
            (1, right, &target.x_r_d, &target.lambda_r, n_l, n - n_l),
        ] {
            let jl = state.jacobian_local();
            let jw = state.jacobian_world();
            let dqa = dqv.rows(off, dof);
            let ff = -(jl.transpose() * Vector6::from(lambda.to_vector()));
            feedforward.rows_mut(off, dof).copy_from(&ff);

            let e = pose_error(&state.end_effector, desired);
            let v = &jw * dqa;
            let mut w = Vector6::zeros();
            for k in 0..6 {
                let c = 6 * arm + k;
                // α̃ = α_d − α = e_k and α̇ = v_k.
                let p = self.params.nlpd(k);
                let (f, s) = nlpd_force(e[k], 0.0, v[k], &p, &self.fic[c]);
                w[k] = match phases {
                    Some(ph) => nlpd_spring_on(e[k], &p, &self.fic[c], ph[c]) - p.pd.kd() * v[k],
                    None => f,
                };
                next[c] = s;
            }
            cartesian.rows_mut(off, dof).copy_from(&(jw.transpose() * w));
        }

        let rel = left.end_effector.inverse() * right.end_effector;
        let jr = relative_jacobian_of(left, right);
        let e = pose_error(&rel, &target.relative_d);
        let v = &jr * &dqv;
        let w = Vector6::from_fn(|k, _| {
            let p = self.params.relative.channel(k);
            pd_force(e[k], 0.0, v[k], p)
        });
        let relative = jr.transpose() * w;

        let total = &coriolis + &gravity + &joint + &feedforward + &cartesian + &relative;
        (TorqueTerms { coriolis, gravity, joint, feedforward, cartesian, relative, total }, next)
    }

    /// Accept the channel state returned by [`evaluate`](Self::evaluate).
    pub fn commit(&mut self, channels: [FicChannelState; 12]) {
        self.fic = channels;
    }

    /// Evaluate and commit in one go.
    pub fn compute_torques(&mut self, dual: &DualArmModel, q: &[f64], dq: &[f64], target: &ControlTarget) -> TorqueTerms {
        let (terms, next) = self.evaluate(dual, q, dq, target);
        self.fic = next;
        terms
    }
}
