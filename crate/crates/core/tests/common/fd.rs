//! Finite-difference and energy references.

use bimanual::model::{ArmModel, DualArmModel, ObjectModel, GRAVITY};
use bimanual::retarget::{equilibrium_residual, DecisionState, DIM};
use bimanual::spatial::{rotation_log, Pose};
use nalgebra::{DMatrix, DVector, Vector6};

pub const H: f64 = 1e-6;

/// Central differences of a pose map, rows (rotation log; translation).
pub fn fd_pose(f: impl Fn(&[f64]) -> Pose, q: &[f64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(6, q.len());
    for i in 0..q.len() {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[i] += H;
        qm[i] -= H;
        let (a, b) = (f(&qp), f(&qm));
        let w = rotation_log(&(a.rotation * b.rotation.inverse())) / (2.0 * H);
        let v = (a.translation - b.translation) / (2.0 * H);
        for k in 0..3 {
            j[(k, i)] = w[k];
            j[(3 + k, i)] = v[k];
        }
    }
    j
}

/// Gravitational potential energy of one arm.
pub fn potential(arm: &ArmModel, q: &[f64]) -> f64 {
    let s = arm.state(q);
    arm.joints.iter().zip(&s.coms).map(|(j, c)| j.link_mass * GRAVITY * c.z).sum()
}

pub fn residual_of(dual: &DualArmModel, object: &ObjectModel, x: &DVector<f64>) -> Vector6<f64> {
    let s = DecisionState::from_vector(x, dual.dof());
    equilibrium_residual(dual, object, s.q.as_slice(), &s.lambda_l, &s.lambda_r)
}

/// Central differences of the equilibrium residual over the decision vector.
pub fn fd_equilibrium_jacobian(dual: &DualArmModel, object: &ObjectModel, s: &DecisionState) -> DMatrix<f64> {
    let x = s.to_vector();
    let mut fd = DMatrix::zeros(6, DIM);
    for i in 0..DIM {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += H;
        xm[i] -= H;
        fd.set_column(i, &((residual_of(dual, object, &xp) - residual_of(dual, object, &xm)) / (2.0 * H)));
    }
    fd
}
