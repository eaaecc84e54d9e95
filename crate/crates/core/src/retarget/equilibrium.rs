//! Object equilibrium and the quasi-static joint torques it implies.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};

use crate::model::{inverse_dynamics, ArmModel, ChainState, DualArmModel, ObjectModel, GRAVITY};
use crate::spatial::{skew, wrench_transform, Wrench};

/// `^O R_W` estimated from both hands: `½(^O R_L R_Lᵀ + ^O R_R R_Rᵀ)`.
fn object_from_world(object: &ObjectModel, left: &ChainState, right: &ChainState) -> Matrix3<f64> {
    let ol = object.grasp_left.rotation.matrix() * left.end_effector.rotation.matrix().transpose();
    let or = object.grasp_right.rotation.matrix() * right.end_effector.rotation.matrix().transpose();
    0.5 * (ol + or)
}

fn gravity_force(object: &ObjectModel) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -object.mass * GRAVITY)
}

/// Object-frame balance of gravity against the two contact wrenches, which
/// are the wrenches the object exerts on each hand in that hand's contact
/// frame. Zero exactly when the object is in static equilibrium.
pub fn equilibrium_residual(
    dual: &DualArmModel,
    object: &ObjectModel,
    q: &[f64],
    lambda_l: &Wrench,
    lambda_r: &Wrench,
) -> Vector6<f64> {
    let (l, r) = dual.states(q);
    residual_from_states(object, &l, &r, lambda_l, lambda_r)
}

pub(crate) fn residual_from_states(
    object: &ObjectModel,
    left: &ChainState,
    right: &ChainState,
    lambda_l: &Wrench,
    lambda_r: &Wrench,
) -> Vector6<f64> {
    let f = object_from_world(object, left, right) * gravity_force(object);
    let load = Vector6::new(0.0, 0.0, 0.0, f.x, f.y, f.z);
    load - wrench_transform(&object.grasp_left).0 * lambda_l.to_vector()
        - wrench_transform(&object.grasp_right).0 * lambda_r.to_vector()
}

/// Derivative of [`equilibrium_residual`] with respect to
/// `(q, λ_L, λ_R)`, so that `r(x + Δx) ≈ r(x) + J Δx`.
pub fn equilibrium_jacobian(
    dual: &DualArmModel,
    object: &ObjectModel,
    q: &[f64],
    lambda_l: &Wrench,
    lambda_r: &Wrench,
) -> DMatrix<f64> {
    // Linear in λ, so the wrenches do not enter the derivative.
    let _ = (lambda_l, lambda_r);
    let (l, r) = dual.states(q);
    jacobian_from_states(object, &l, &r)
}

pub(crate) fn jacobian_from_states(
    object: &ObjectModel,
    left: &ChainState,
    right: &ChainState,
) -> DMatrix<f64> {
    let n_l = left.dof();
    let n = n_l + right.dof();
    let f = gravity_force(object);
    let mut j = DMatrix::zeros(6, n + 12);

    // δ(R_iᵀ f) = S(R_iᵀ f) R_iᵀ δθ_i for a world-frame rotation increment δθ_i.
    let block = |grasp_r: &Matrix3<f64>, state: &ChainState| -> DMatrix<f64> {
        let rt = state.end_effector.rotation.matrix().transpose();
        let m = 0.5 * grasp_r * skew(&(rt * f)) * rt;
        DMatrix::from_fn(3, 3, |a, b| m[(a, b)]) * state.jacobian_rotational()
    };
    let hl = block(object.grasp_left.rotation.matrix(), left);
    let hr = block(object.grasp_right.rotation.matrix(), right);
    j.view_mut((3, 0), (3, n_l)).copy_from(&hl);
    j.view_mut((3, n_l), (3, n - n_l)).copy_from(&hr);

    let xl = wrench_transform(&object.grasp_left).0;
    let xr = wrench_transform(&object.grasp_right).0;
    for a in 0..6 {
        for b in 0..6 {
            j[(a, n + b)] = -xl[(a, b)];
            j[(a, n + 6 + b)] = -xr[(a, b)];
        }
    }
    j
}

/// Joint torques one arm needs to hold still while the object presses on its
/// contact frame with `lambda` (contact-frame components).
pub fn arm_quasi_static_torque(arm: &ArmModel, state: &ChainState, lambda: &Wrench) -> DVector<f64> {
    let zeros = vec![0.0; arm.dof()];
    let world = lambda.rotated(&state.end_effector.rotation);
    inverse_dynamics(arm, state, &zeros, &zeros, true, Some(&world))
}

/// `G(q) − J_Lᵀ λ_L − J_Rᵀ λ_R` with the wrenches mapped to world axes.
pub fn quasi_static_torque(dual: &DualArmModel, q: &[f64], lambda_l: &Wrench, lambda_r: &Wrench) -> DVector<f64> {
    let (l, r) = dual.states(q);
    crate::model::concat(
        &arm_quasi_static_torque(&dual.left, &l, lambda_l),
        &arm_quasi_static_torque(&dual.right, &r, lambda_r),
    )
}

/// Step for the central differences of the torque model.
const FD_STEP: f64 = 1e-6;

/// Linearization of [`quasi_static_torque`]: `(∂τ/∂q, ∂τ/∂λ)`. The q block
/// is block diagonal and taken by central differences with the contact
/// wrenches held fixed in their contact frames; the λ block is `−J_localᵀ`.
pub fn torque_jacobian(
    dual: &DualArmModel,
    q: &[f64],
    lambda_l: &Wrench,
    lambda_r: &Wrench,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (l, r) = dual.states(q);
    let n_l = dual.left.dof();
    let n = dual.dof();
    let mut tq = DMatrix::zeros(n, n);
    let mut tl = DMatrix::zeros(n, 12);
    let (ql, qr) = dual.split(q);
    for (arm, qa, lambda, state, off, col) in [
        (&dual.left, ql, lambda_l, &l, 0, 0),
        (&dual.right, qr, lambda_r, &r, n_l, 6),
    ] {
        let k = arm.dof();
        let mut qp = qa.to_vec();
        for j in 0..k {
            let q0 = qp[j];
            qp[j] = q0 + FD_STEP;
            let plus = arm_quasi_static_torque(arm, &arm.state(&qp), lambda);
            qp[j] = q0 - FD_STEP;
            let minus = arm_quasi_static_torque(arm, &arm.state(&qp), lambda);
            qp[j] = q0;
            for i in 0..k {
                tq[(off + i, off + j)] = (plus[i] - minus[i]) / (2.0 * FD_STEP);
            }
        }
        let jl = state.jacobian_local();
        for i in 0..k {
            for c in 0..6 {
                tl[(off + i, col + c)] = -jl[(c, i)];
            }
        }
    }
    (tq, tl)
}
