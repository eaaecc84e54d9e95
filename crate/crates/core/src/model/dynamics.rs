//! Recursive Newton–Euler and composite-rigid-body routines for one serial
//! arm, written in world coordinates.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3};

use super::{ArmModel, ChainState, GRAVITY};
use crate::spatial::{skew, Wrench};

/// Joint torques for the given motion. `external` is the wrench the
/// environment applies to the end effector (world axes, torque about the
/// end-effector origin); the result then equals `M q̈ + C + G − Jᵀ w`.
pub fn inverse_dynamics(
    arm: &ArmModel,
    state: &ChainState,
    dq: &[f64],
    ddq: &[f64],
    with_gravity: bool,
    external: Option<&Wrench>,
) -> DVector<f64> {
    let n = arm.dof();
    let mut forces = Vec::with_capacity(n);
    let mut moments = Vec::with_capacity(n);

    let mut w = Vector3::zeros();
    let mut dw = Vector3::zeros();
    // Emulate gravity as an upward acceleration of the base.
    let mut acc = if with_gravity { Vector3::new(0.0, 0.0, GRAVITY) } else { Vector3::zeros() };
    let mut prev = arm.base_pose.translation;

    for i in 0..n {
        let z = state.axes[i];
        let o = state.origins[i];
        let d = o - prev;
        acc += dw.cross(&d) + w.cross(&w.cross(&d));
        let w_new = w + z * dq[i];
        dw = dw + z * ddq[i] + w.cross(&(z * dq[i]));
        w = w_new;

        let r = state.coms[i] - o;
        let a_com = acc + dw.cross(&r) + w.cross(&w.cross(&r));
        let joint = &arm.joints[i];
        let inertia = state.link_inertia_world(arm, i);
        forces.push(joint.link_mass * a_com);
        moments.push(inertia * dw + w.cross(&(inertia * w)));
        prev = o;
    }

    let mut tau = DVector::zeros(n);
    let (mut f, mut m) = match external {
        Some(e) => (-e.force, -e.torque),
        None => (Vector3::zeros(), Vector3::zeros()),
    };
    let mut p_next = state.end_effector.translation;
    for i in (0..n).rev() {
        let o = state.origins[i];
        let f_i = forces[i] + f;
        let m_i = moments[i] + m + (state.coms[i] - o).cross(&forces[i]) + (p_next - o).cross(&f);
        tau[i] = state.axes[i].dot(&m_i);
        f = f_i;
        m = m_i;
        p_next = o;
    }
    tau
}

pub fn gravity_torques_arm(arm: &ArmModel, q: &[f64]) -> DVector<f64> {
    let n = arm.dof();
    let zeros = vec![0.0; n];
    inverse_dynamics(arm, &arm.state(q), &zeros, &zeros, true, None)
}

pub fn coriolis_torques_arm(arm: &ArmModel, q: &[f64], dq: &[f64]) -> DVector<f64> {
    let zeros = vec![0.0; arm.dof()];
    inverse_dynamics(arm, &arm.state(q), dq, &zeros, false, None)
}

/// Joint-space inertia by the composite-rigid-body method.
pub fn mass_matrix_arm(arm: &ArmModel, q: &[f64]) -> DMatrix<f64> {
    let state = arm.state(q);
    let n = arm.dof();

    // Spatial inertia of each link about the world origin, (angular; linear).
    let mut composite: Vec<Matrix6<f64>> = (0..n)
        .map(|i| {
            let m = arm.joints[i].link_mass;
            let c = skew(&state.coms[i]);
            let mut s = Matrix6::zeros();
            s.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(state.link_inertia_world(arm, i) + m * c * c.transpose()));
            s.fixed_view_mut::<3, 3>(0, 3).copy_from(&(m * c));
            s.fixed_view_mut::<3, 3>(3, 0).copy_from(&(m * c.transpose()));
            s.fixed_view_mut::<3, 3>(3, 3).copy_from(&(m * nalgebra::Matrix3::identity()));
            s
        })
        .collect();
    for i in (0..n.saturating_sub(1)).rev() {
        composite[i] = composite[i] + composite[i + 1];
    }

    let motion: Vec<nalgebra::Vector6<f64>> = (0..n)
        .map(|i| {
            let z = state.axes[i];
            let v = state.origins[i].cross(&z);
            nalgebra::Vector6::new(z.x, z.y, z.z, v.x, v.y, v.z)
        })
        .collect();

    let mut mm = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = motion[i].dot(&(composite[j] * motion[j]));
            mm[(i, j)] = v;
            mm[(j, i)] = v;
        }
    }
    mm
}
