//! Kinematic and dynamic models of the two arms and the grasped object.

mod dynamics;
mod file;
mod kinematics;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::spatial::{Pose, Wrench};

pub use dynamics::{coriolis_torques_arm, gravity_torques_arm, inverse_dynamics, mass_matrix_arm};
pub use file::{load_model, parse_model, to_toml_string, ModelFile};
pub use kinematics::{inverse_kinematics, relative_jacobian_of, ChainState};

/// Gravitational acceleration, acting along −z of the world frame.
pub const GRAVITY: f64 = 9.81;

/// Joints per arm in the bundled model.
pub const ARM_DOF: usize = 7;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model file: {0}")]
    Parse(String),
    #[error("invalid model: {field}: {reason}")]
    Validation { field: String, reason: String },
}

impl ModelError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Validation { field: field.into(), reason: reason.into() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointDef {
    pub name: String,
    /// Unit rotation axis in the joint frame.
    pub axis: Vector3<f64>,
    /// Joint frame relative to the previous link frame at zero angle.
    pub parent_offset: Pose,
    pub q_min: f64,
    pub q_max: f64,
    pub dq_max: f64,
    pub tau_max: f64,
    pub link_mass: f64,
    /// Centre of mass of the child link, in the joint frame.
    pub link_com: Vector3<f64>,
    /// Rotational inertia about the centre of mass, in the joint frame.
    pub link_inertia: Matrix3<f64>,
}

impl JointDef {
    /// Massless revolute joint with generous limits; handy for building
    /// small chains by hand.
    pub fn revolute(axis: Vector3<f64>, parent_offset: Pose) -> Self {
        Self {
            name: String::new(),
            axis: axis.normalize(),
            parent_offset,
            q_min: -std::f64::consts::PI,
            q_max: std::f64::consts::PI,
            dq_max: 2.0,
            tau_max: 100.0,
            link_mass: 0.0,
            link_com: Vector3::zeros(),
            link_inertia: Matrix3::zeros(),
        }
    }

    pub fn with_link(mut self, mass: f64, com: Vector3<f64>, inertia: Matrix3<f64>) -> Self {
        self.link_mass = mass;
        self.link_com = com;
        self.link_inertia = inertia;
        self
    }

    fn validate(&self, field: &str) -> Result<(), ModelError> {
        if (self.axis.norm() - 1.0).abs() > 1e-9 {
            return Err(ModelError::invalid(format!("{field}.axis"), "axis must be a unit vector"));
        }
        if !(self.q_min < self.q_max) {
            return Err(ModelError::invalid(
                field,
                format!("q_min ({}) must be below q_max ({})", self.q_min, self.q_max),
            ));
        }
        if !(self.dq_max > 0.0) {
            return Err(ModelError::invalid(format!("{field}.dq_max"), "must be positive"));
        }
        if !(self.tau_max > 0.0) {
            return Err(ModelError::invalid(format!("{field}.tau_max"), "must be positive"));
        }
        if !(self.link_mass >= 0.0) {
            return Err(ModelError::invalid(format!("{field}.mass"), "must be non-negative"));
        }
        let i = &self.link_inertia;
        if (i - i.transpose()).amax() > 1e-12 {
            return Err(ModelError::invalid(format!("{field}.inertia"), "must be symmetric"));
        }
        if self.link_mass > 0.0 && i.cholesky().is_none() {
            return Err(ModelError::invalid(
                format!("{field}.inertia"),
                "must be positive definite",
            ));
        }
        Ok(())
    }
}

/// One serial arm. The bundled model uses seven revolute joints.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmModel {
    pub joints: Vec<JointDef>,
    pub base_pose: Pose,
    /// Contact frame relative to the last joint frame.
    pub end_effector_offset: Pose,
}

impl ArmModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn state(&self, q: &[f64]) -> ChainState {
        ChainState::compute(self, q)
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Pose {
        self.state(q).end_effector
    }

    pub fn q_min(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.q_min))
    }

    pub fn q_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.q_max))
    }

    pub fn validate(&self, name: &str, expected_dof: Option<usize>) -> Result<(), ModelError> {
        if let Some(n) = expected_dof {
            if self.dof() != n {
                return Err(ModelError::invalid(
                    format!("{name}.joints"),
                    format!("expected {n} revolute joints, found {}", self.dof()),
                ));
            }
        }
        if !self.base_pose.is_valid(1e-9) {
            return Err(ModelError::invalid(format!("{name}.base"), "not a rigid transform"));
        }
        if !self.end_effector_offset.is_valid(1e-9) {
            return Err(ModelError::invalid(
                format!("{name}.end_effector"),
                "not a rigid transform",
            ));
        }
        for (k, j) in self.joints.iter().enumerate() {
            let label = if j.name.is_empty() {
                format!("{name}.joints[{k}]")
            } else {
                format!("{name}.joints[{k}] ({})", j.name)
            };
            j.validate(&label)?;
        }
        Ok(())
    }
}

/// The two arms. The world frame sits at the base of the left arm; joint
/// vectors stack the left arm first.
#[derive(Clone, Debug, PartialEq)]
pub struct DualArmModel {
    pub left: ArmModel,
    pub right: ArmModel,
}

impl DualArmModel {
    pub fn new(left: ArmModel, right: ArmModel) -> Self {
        Self { left, right }
    }

    pub fn dof(&self) -> usize {
        self.left.dof() + self.right.dof()
    }

    pub fn split<'a>(&self, q: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        q.split_at(self.left.dof())
    }

    pub fn states(&self, q: &[f64]) -> (ChainState, ChainState) {
        let (ql, qr) = self.split(q);
        (self.left.state(ql), self.right.state(qr))
    }

    pub fn q_min(&self) -> DVector<f64> {
        concat(&self.left.q_min(), &self.right.q_min())
    }

    pub fn q_max(&self) -> DVector<f64> {
        concat(&self.left.q_max(), &self.right.q_max())
    }

    pub fn joints(&self) -> impl Iterator<Item = &JointDef> {
        self.left.joints.iter().chain(self.right.joints.iter())
    }

    pub fn tau_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints().map(|j| j.tau_max))
    }

    pub fn dq_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints().map(|j| j.dq_max))
    }

    pub fn gravity_torques(&self, q: &[f64]) -> DVector<f64> {
        let (ql, qr) = self.split(q);
        concat(&gravity_torques_arm(&self.left, ql), &gravity_torques_arm(&self.right, qr))
    }

    pub fn coriolis_torques(&self, q: &[f64], dq: &[f64]) -> DVector<f64> {
        let (ql, qr) = self.split(q);
        let (dql, dqr) = self.split(dq);
        concat(
            &coriolis_torques_arm(&self.left, ql, dql),
            &coriolis_torques_arm(&self.right, qr, dqr),
        )
    }

    /// Block-diagonal joint-space inertia of both arms.
    pub fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let (ql, qr) = self.split(q);
        let n_l = self.left.dof();
        let n = self.dof();
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (n_l, n_l)).copy_from(&mass_matrix_arm(&self.left, ql));
        m.view_mut((n_l, n_l), (n - n_l, n - n_l)).copy_from(&mass_matrix_arm(&self.right, qr));
        m
    }

    /// 6×n map from stacked joint rates to the twist of the right hand relative
    /// to the left hand, expressed in the left-hand frame.
    pub fn relative_jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let (l, r) = self.states(q);
        kinematics::relative_jacobian_of(&l, &r)
    }

    /// Pose of the right hand in the left-hand frame.
    pub fn relative_pose(&self, q: &[f64]) -> Pose {
        let (l, r) = self.states(q);
        l.end_effector.inverse() * r.end_effector
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.left.validate("left", Some(ARM_DOF))?;
        self.right.validate("right", Some(ARM_DOF))
    }
}

/// The grasped object. Its frame has the origin at the centre of mass; the
/// contact frames' z axes are the contact normals, pointing from the object
/// into the hand, so a compressive normal force has a positive z component.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectModel {
    pub mass: f64,
    /// Left contact frame in the object frame.
    pub grasp_left: Pose,
    /// Right contact frame in the object frame.
    pub grasp_right: Pose,
    pub friction_mu: f64,
    /// Centre-of-pressure rectangle half-widths (x, y) in the contact frame.
    pub contact_halfwidths: [f64; 2],
    pub torsional_mu: f64,
    pub f_normal_min: f64,
    pub f_normal_max: f64,
    /// Principal inertia about the centre of mass; only the dynamic plant uses it.
    pub inertia_diag: Vector3<f64>,
}

impl ObjectModel {
    /// Gravitational wrench in the world frame, `(0, 0, 0, 0, 0, −mg)`.
    pub fn gravity_wrench(&self) -> Wrench {
        Wrench::from_force(Vector3::new(0.0, 0.0, -self.mass * GRAVITY))
    }

    /// Object pose implied by a left-hand pose.
    pub fn pose_from_left(&self, left_hand: &Pose) -> Pose {
        *left_hand * self.grasp_left.inverse()
    }

    pub fn pose_from_right(&self, right_hand: &Pose) -> Pose {
        *right_hand * self.grasp_right.inverse()
    }

    /// Right-hand pose in the left-hand frame when both contacts hold.
    pub fn relative_grasp(&self) -> Pose {
        self.grasp_left.inverse() * self.grasp_right
    }

    /// Shift the centre of mass by `offset` (object frame). Contact frames are
    /// fixed to the body, so they move by `−offset` relative to the new origin.
    pub fn with_com_offset(mut self, offset: Vector3<f64>) -> Self {
        self.grasp_left.translation -= offset;
        self.grasp_right.translation -= offset;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.mass >= 0.0) {
            return Err(ModelError::invalid("object.mass", "must be non-negative"));
        }
        if !(self.friction_mu > 0.0) {
            return Err(ModelError::invalid("object.friction_mu", "must be positive"));
        }
        if !(self.torsional_mu >= 0.0) {
            return Err(ModelError::invalid("object.torsional_mu", "must be non-negative"));
        }
        if !(self.f_normal_min >= 0.0) {
            return Err(ModelError::invalid("object.f_normal_min", "must be non-negative"));
        }
        if !(self.f_normal_min < self.f_normal_max) {
            return Err(ModelError::invalid(
                "object.f_normal_max",
                "must exceed f_normal_min",
            ));
        }
        if self.contact_halfwidths.iter().any(|h| !(*h >= 0.0)) {
            return Err(ModelError::invalid(
                "object.contact_halfwidths",
                "must be non-negative",
            ));
        }
        if self.inertia_diag.iter().any(|v| !(*v > 0.0)) {
            return Err(ModelError::invalid("object.inertia_diag", "must be positive"));
        }
        for (name, g) in [("object.grasp_left", &self.grasp_left), ("object.grasp_right", &self.grasp_right)] {
            if !g.is_valid(1e-9) {
                return Err(ModelError::invalid(name, "not a rigid transform"));
            }
        }
        Ok(())
    }
}

pub(crate) fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}
