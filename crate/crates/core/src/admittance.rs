//! Object-level admittance: estimate the external wrench on the held object
//! and integrate it into a pose offset that is composed with the operator's
//! command before retargeting.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::model::{DualArmModel, ObjectModel};
use crate::retarget::equilibrium_residual;
use crate::spatial::{pose_error, Pose, Twist, Wrench};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesiredWrenchMode {
    /// The desired wrench is supplied by the caller each cycle.
    ExternalInput,
    /// The desired wrench comes from a spring-damper about the rest offset.
    #[default]
    SpringDamper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmittanceParams {
    pub inertia: Matrix6<f64>,
    pub stiffness: Matrix6<f64>,
    pub damping: Matrix6<f64>,
    pub mode: DesiredWrenchMode,
}

impl Default for AdmittanceParams {
    fn default() -> Self {
        AdmittanceConfig::default().params().expect("default admittance parameters are valid")
    }
}

impl AdmittanceParams {
    /// Diagonal parameters; `damping = None` picks critical damping
    /// `2√(k m)` per axis.
    pub fn from_diagonals(inertia: &[f64; 6], stiffness: &[f64; 6], damping: Option<&[f64; 6]>) -> Self {
        let d = match damping {
            Some(d) => *d,
            None => std::array::from_fn(|i| 2.0 * (stiffness[i] * inertia[i]).sqrt()),
        };
        Self {
            inertia: Matrix6::from_diagonal(&Vector6::from_row_slice(inertia)),
            stiffness: Matrix6::from_diagonal(&Vector6::from_row_slice(stiffness)),
            damping: Matrix6::from_diagonal(&Vector6::from_row_slice(&d)),
            mode: DesiredWrenchMode::SpringDamper,
        }
    }

    pub fn with_mode(mut self, mode: DesiredWrenchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let sym = |m: &Matrix6<f64>| (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0);
        for (name, m) in [("inertia", &self.inertia), ("stiffness", &self.stiffness), ("damping", &self.damping)] {
            if !m.iter().all(|v| v.is_finite()) || !sym(m) {
                return Err(format!("admittance {name} must be finite and symmetric"));
            }
        }
        if self.inertia.cholesky().is_none() {
            return Err("admittance inertia must be positive definite".into());
        }
        for (name, m) in [("stiffness", &self.stiffness), ("damping", &self.damping)] {
            if m.symmetric_eigenvalues().iter().any(|e| *e < -1e-12) {
                return Err(format!("admittance {name} must be positive semi-definite"));
            }
        }
        Ok(())
    }
}

/// Config-file form of [`AdmittanceParams`]: diagonals ordered (angular;
/// linear), damping critical when omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmittanceConfig {
    pub enabled: bool,
    pub mode: DesiredWrenchMode,
    pub inertia: [f64; 6],
    pub stiffness: [f64; 6],
    pub damping: Option<[f64; 6]>,
}

impl Default for AdmittanceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            mode: DesiredWrenchMode::SpringDamper,
            inertia: [2.0, 2.0, 2.0, 5.0, 5.0, 5.0],
            stiffness: [10.0, 10.0, 10.0, 200.0, 200.0, 200.0],
            damping: None,
        }
    }
}

impl AdmittanceConfig {
    pub fn params(&self) -> Result<AdmittanceParams, String> {
        let p = AdmittanceParams::from_diagonals(&self.inertia, &self.stiffness, self.damping.as_ref())
            .with_mode(self.mode);
        p.validate()?;
        Ok(p)
    }
}

/// Integrator state: the admittance offset pose, expressed in the commanded
/// object frame, and its twist in the same axes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AdmittanceState {
    pub pose: Pose,
    pub twist: Twist,
}

impl AdmittanceState {
    pub fn is_finite(&self) -> bool {
        self.pose.is_finite() && self.twist.is_finite()
    }
}

/// External wrench on the object in the object frame: the measured hand
/// wrenches carried to the object origin, minus the object's weight. The
/// object orientation is estimated from both hands.
pub fn estimate_external_wrench(
    dual: &DualArmModel,
    object: &ObjectModel,
    q: &[f64],
    lambda_l: &Wrench,
    lambda_r: &Wrench,
) -> Wrench {
    // The equilibrium residual is weight minus the transformed hand wrenches.
    Wrench::from_vector(&-equilibrium_residual(dual, object, q, lambda_l, lambda_r))
}

/// `K (X_d − X) − D V` in pose-error coordinates.
pub fn desired_wrench(pose: &Pose, twist: &Twist, rest: &Pose, params: &AdmittanceParams) -> Wrench {
    let e = pose_error(pose, rest);
    Wrench::from_vector(&(params.stiffness * e - params.damping * twist.to_vector()))
}

/// Largest twist change per cycle allowed by the gap between the command and
/// the pose the retargeter actually reached.
pub fn feasibility_bound(commanded: &Pose, adapted: &Pose, dt: f64) -> f64 {
    pose_error(adapted, commanded).norm() / dt
}

/// One semi-implicit Euler step of `M V̇ = λ_ext − λ_d`. Each component of the
/// twist increment is saturated at `max_twist_change` with its sign kept.
pub fn admittance_step(
    state: &AdmittanceState,
    lambda_ext: &Wrench,
    lambda_d: &Wrench,
    params: &AdmittanceParams,
    dt: f64,
    max_twist_change: Option<f64>,
) -> AdmittanceState {
    assert!(dt > 0.0, "admittance step needs dt > 0");
    let rhs = lambda_ext.to_vector() - lambda_d.to_vector();
    let acc = params.inertia.cholesky().expect("inertia is positive definite").solve(&rhs);
    let mut dv = acc * dt;
    if let Some(cap) = max_twist_change {
        for v in dv.iter_mut() {
            *v = v.signum() * v.abs().min(cap);
        }
    }
    let twist = Twist::from_vector(&(state.twist.to_vector() + dv));
    AdmittanceState { pose: state.pose.perturbed(&(twist.to_vector() * dt)), twist }
}

/// Admittance loop for one held object.
#[derive(Clone, Debug)]
pub struct Admittance {
    pub params: AdmittanceParams,
    state: AdmittanceState,
    last_external: Wrench,
}

impl Admittance {
    pub fn new(params: AdmittanceParams) -> Self {
        Self { params, state: AdmittanceState::default(), last_external: Wrench::zero() }
    }

    pub fn state(&self) -> &AdmittanceState {
        &self.state
    }

    pub fn last_external(&self) -> Wrench {
        self.last_external
    }

    pub fn reset(&mut self) {
        self.state = AdmittanceState::default();
        self.last_external = Wrench::zero();
    }

    /// Advance one cycle. In spring-damper mode the restoring wrench
    /// `K (X − X_rest) + D V` is the one subtracted, so the offset settles
    /// back to the rest pose; `desired` is used only in external-input mode.
    pub fn update(
        &mut self,
        external: &Wrench,
        desired: &Wrench,
        dt: f64,
        max_twist_change: Option<f64>,
    ) -> &AdmittanceState {
        let lambda_d = match self.params.mode {
            DesiredWrenchMode::ExternalInput => *desired,
            DesiredWrenchMode::SpringDamper => {
                Wrench::from_vector(&-desired_wrench(&self.state.pose, &self.state.twist, &Pose::identity(), &self.params).to_vector())
            }
        };
        self.last_external = *external;
        self.state = admittance_step(&self.state, external, &lambda_d, &self.params, dt, max_twist_change);
        &self.state
    }

    /// Compose the offset with an operator command, in the object frame.
    pub fn apply(&self, commanded: &Pose) -> Pose {
        *commanded * self.state.pose
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_damping_is_critical() {
        let p = AdmittanceParams::default();
        assert!((p.damping[(0, 0)] - 2.0 * 20f64.sqrt()).abs() < 1e-12);
        assert!((p.damping[(3, 3)] - 2.0 * 1000f64.sqrt()).abs() < 1e-12);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn indefinite_inertia_is_rejected() {
        let p = AdmittanceParams::from_diagonals(&[1.0, 1.0, 1.0, 1.0, 1.0, -1.0], &[0.0; 6], None);
        assert!(p.validate().is_err());
    }
}
