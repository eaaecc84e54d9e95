//! Equilibrium linearization, constraint rows, cost and stepping of the
//! retargeter.

mod common;

use bimanual::model::DualArmModel;
use bimanual::retarget::{
    build_cost, build_inequalities, equilibrium_jacobian, equilibrium_residual, initialize, quasi_static_torque,
    ContactRow, DecisionState, Linearization, RetargetConfig, RetargetError, Retargeter, RowLabel, Side, DIM,
};
use bimanual::spatial::{pose_error, wrench_transform, Pose, Rotation, Wrench};
use common::fd::fd_equilibrium_jacobian;
use common::{grasp, perturbed_state, random_vec3};
use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn equilibrium_jacobian_matches_central_differences() {
    let rt = grasp();
    let (dual, object) = (&rt.dual, &rt.object);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for case in 0..50 {
        let s = perturbed_state(&mut rng, rt.state(), 0.3, 20.0);
        let j = equilibrium_jacobian(dual, object, s.q.as_slice(), &s.lambda_l, &s.lambda_r);
        assert_eq!(j.shape(), (6, DIM));
        let fd = fd_equilibrium_jacobian(dual, object, &s);
        let err = (&j - &fd).amax() / j.amax().max(1.0);
        assert!(err <= 1e-4, "case {case}: relative error {err:.2e}");
    }
}

#[test]
fn massless_object_has_no_configuration_block() {
    let rt = grasp();
    let mut object = rt.object.clone();
    object.mass = 0.0;
    let s = rt.state();
    let j = equilibrium_jacobian(&rt.dual, &object, s.q.as_slice(), &s.lambda_l, &s.lambda_r);
    assert_eq!(j.columns(0, 14).amax(), 0.0);
    let r = equilibrium_residual(&rt.dual, &object, s.q.as_slice(), &Wrench::zero(), &Wrench::zero());
    assert_eq!(r.amax(), 0.0);
}

#[test]
fn wrench_columns_are_the_negated_contact_transforms() {
    let rt = grasp();
    let s = rt.state();
    let j = equilibrium_jacobian(&rt.dual, &rt.object, s.q.as_slice(), &s.lambda_l, &s.lambda_r);
    let xl = wrench_transform(&rt.object.grasp_left).0;
    let xr = wrench_transform(&rt.object.grasp_right).0;
    for a in 0..6 {
        for b in 0..6 {
            assert_eq!(j[(a, 14 + b)], -xl[(a, b)]);
            assert_eq!(j[(a, 20 + b)], -xr[(a, b)]);
        }
    }
}

#[test]
fn residual_is_linear_in_the_wrenches() {
    let rt = grasp();
    let s = rt.state();
    let q = s.q.as_slice();
    let base = equilibrium_residual(&rt.dual, &rt.object, q, &s.lambda_l, &s.lambda_r);
    let pushed = s.lambda_l + Wrench::from_force(Vector3::new(0.0, 0.0, 1.0));
    let moved = equilibrium_residual(&rt.dual, &rt.object, q, &pushed, &s.lambda_r);
    let expected = -(wrench_transform(&rt.object.grasp_left).0 * Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0));
    assert!((moved - base - expected).amax() <= 1e-12);
}

#[test]
fn least_norm_force_distribution_balances_the_object() {
    // Pseudo-inverse of the wrench block, substituted back.
    let rt = grasp();
    let mut object = rt.object.clone();
    object.mass = 2.0;
    let q = rt.state().q.as_slice();
    let r0 = equilibrium_residual(&rt.dual, &object, q, &Wrench::zero(), &Wrench::zero());
    let jl = equilibrium_jacobian(&rt.dual, &object, q, &Wrench::zero(), &Wrench::zero()).columns(14, 12).into_owned();
    let lambda = jl.clone().pseudo_inverse(1e-12).unwrap() * -DVector::from_column_slice(r0.as_slice());
    let s = DecisionState::from_vector(&DVector::from_iterator(26, q.iter().copied().chain(lambda.iter().copied())), 14);
    let r = equilibrium_residual(&rt.dual, &object, q, &s.lambda_l, &s.lambda_r);
    assert!(r.amax() <= 1e-9, "{r}");
}

fn massless(dual: &DualArmModel) -> DualArmModel {
    let mut d = dual.clone();
    for j in d.left.joints.iter_mut().chain(d.right.joints.iter_mut()) {
        j.link_mass = 0.0;
        j.link_inertia = nalgebra::Matrix3::zeros();
    }
    d
}

/// `G − J_worldᵀ λ_world` per arm, with the wrench about the hand origin.
fn jacobian_transpose_torque(dual: &DualArmModel, q: &[f64], ll: &Wrench, lr: &Wrench) -> DVector<f64> {
    let (l, r) = dual.states(q);
    let mut tau = dual.gravity_torques(q);
    for (s, w, off) in [(&l, ll, 0), (&r, lr, 7)] {
        let ww = w.rotated(&s.end_effector.rotation).to_vector();
        let jt = s.jacobian_world().transpose() * DVector::from_column_slice(ww.as_slice());
        for i in 0..7 {
            tau[off + i] -= jt[i];
        }
    }
    tau
}

#[test]
fn quasi_static_torque_examples() {
    let rt = grasp();
    let dual = &rt.dual;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let s = perturbed_state(&mut rng, rt.state(), 0.5, 30.0);
        let q = s.q.as_slice();
        let zero = quasi_static_torque(dual, q, &Wrench::zero(), &Wrench::zero());
        assert!((zero - dual.gravity_torques(q)).amax() <= 1e-12);

        let tau = quasi_static_torque(dual, q, &s.lambda_l, &s.lambda_r);
        let oracle = jacobian_transpose_torque(dual, q, &s.lambda_l, &s.lambda_r);
        assert!((tau - oracle).amax() <= 1e-8);

        let light = massless(dual);
        let pure = quasi_static_torque(&light, q, &s.lambda_l, &s.lambda_r);
        let oracle = jacobian_transpose_torque(&light, q, &s.lambda_l, &s.lambda_r);
        assert!(light.gravity_torques(q).amax() == 0.0);
        assert!((pure - oracle).amax() <= 1e-8);
    }
}

#[test]
fn rows_have_the_documented_structure() {
    let rt = grasp();
    let lin = Linearization::compute(&rt.dual, &rt.object, rt.state());
    let rows = build_inequalities(&rt.dual, &rt.object, rt.state(), &lin, &rt.config);
    assert_eq!(rows.joint_rows, 56);
    assert_eq!(rows.contact_rows, 36);
    assert_eq!(rows.len(), 92);
    assert_eq!(rows.a.shape(), (92, DIM));
    let joint = rows.labels.iter().filter(|l| !matches!(l, RowLabel::Contact(..))).count();
    assert_eq!(joint, 56);
    for side in [Side::Left, Side::Right] {
        let n = rows.labels.iter().filter(|l| matches!(l, RowLabel::Contact(s, _) if *s == side)).count();
        assert_eq!(n, 18);
    }
    for j in 0..14 {
        for label in [RowLabel::PositionUpper(j), RowLabel::PositionLower(j), RowLabel::TorqueUpper(j), RowLabel::TorqueLower(j)] {
            assert_eq!(rows.labels.iter().filter(|l| **l == label).count(), 1, "{label:?}");
        }
    }
}

#[test]
fn start_state_is_strictly_inside_its_rows() {
    let rt = grasp();
    let lin = Linearization::compute(&rt.dual, &rt.object, rt.state());
    let rows = build_inequalities(&rt.dual, &rt.object, rt.state(), &lin, &rt.config);
    for i in 0..rows.len() {
        assert!(rows.b[i] > 0.0 && rows.b[i] < rows.range[i], "{} slack {}", rows.labels[i], rows.b[i]);
    }
}

#[test]
fn minimum_normal_force_row_is_tight_at_the_bound() {
    let rt = grasp();
    let mut s = rt.state().clone();
    s.lambda_l.force.z = rt.object.f_normal_min;
    let lin = Linearization::compute(&rt.dual, &rt.object, &s);
    let rows = build_inequalities(&rt.dual, &rt.object, &s, &lin, &rt.config);
    let i = rows.labels.iter().position(|l| *l == RowLabel::Contact(Side::Left, ContactRow::NormalMin)).unwrap();
    assert!(rows.b[i].abs() <= 1e-12, "slack {}", rows.b[i]);
}

#[test]
fn steps_satisfying_the_rows_keep_the_true_limits() {
    let rt = grasp();
    let (dual, object, config) = (&rt.dual, &rt.object, &rt.config);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let s = rt.state();
    let lin = Linearization::compute(dual, object, s);
    let rows = build_inequalities(dual, object, s, &lin, config);
    let limit = config.torque_limits(dual);
    let rate = config.rate_per_cycle();
    let dq_max = dual.dq_max() * config.dt;
    let mut checked = 0;
    while checked < 50 {
        let mut dx = DVector::zeros(DIM);
        for i in 0..14 {
            dx[i] = rng.random_range(-1.0..1.0) * dq_max[i];
        }
        for k in 0..12 {
            dx[14 + k] = rng.random_range(-1.0..1.0) * rate[k % 6];
        }
        for _ in 0..40 {
            if rows.violation(&dx) == 0.0 {
                break;
            }
            dx *= 0.5;
        }
        if rows.violation(&dx) > 0.0 {
            continue;
        }
        checked += 1;
        let post = s.applied(&dx);
        let q = post.q.as_slice();
        for (j, joint) in dual.joints().enumerate() {
            assert!(q[j] >= joint.q_min - 1e-3 && q[j] <= joint.q_max + 1e-3);
        }
        let tau = quasi_static_torque(dual, q, &post.lambda_l, &post.lambda_r);
        let worst = tau.iter().zip(limit.iter()).map(|(t, l)| t.abs() - l).fold(f64::MIN, f64::max);
        assert!(worst <= 1e-3, "torque exceeds its row by {worst}");
        for w in [&post.lambda_l, &post.lambda_r] {
            assert!(w.force.z >= object.f_normal_min - 1e-9 && w.force.z <= object.f_normal_max + 1e-9);
            let mu = config.contact_safety * object.friction_mu / std::f64::consts::SQRT_2;
            assert!(w.force.x.abs() <= mu * w.force.z + 1e-9 && w.force.y.abs() <= mu * w.force.z + 1e-9);
        }
    }
}

fn unconstrained_minimizer(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    h.clone().cholesky().expect("cost Hessian is positive definite").solve(&-g)
}

#[test]
fn cost_is_stationary_at_the_current_pose() {
    let rt = grasp();
    let mut config = rt.config.clone();
    config.w_posture = 0.0;
    let lin = Linearization::compute(&rt.dual, &rt.object, rt.state());
    let here = rt.current().object_pose;
    let (h, g) = build_cost(&rt.dual, &rt.object, rt.state(), &lin, &here, &config);
    assert!(unconstrained_minimizer(&h, &g).amax() <= 1e-6);
}

#[test]
fn cost_moves_the_object_toward_an_offset_target() {
    let rt = grasp();
    let lin = Linearization::compute(&rt.dual, &rt.object, rt.state());
    let here = rt.current().object_pose;
    let target = Pose::new(here.rotation, here.translation + Vector3::new(0.01, 0.0, 0.0));
    let (h, g) = build_cost(&rt.dual, &rt.object, rt.state(), &lin, &target, &rt.config);
    let dx = unconstrained_minimizer(&h, &g);
    let post = rt.state().applied(&dx);
    let ql = &post.q.as_slice()[..7];
    let moved = rt.object.pose_from_left(&rt.dual.left.forward_kinematics(ql)).translation - here.translation;
    assert!(moved.x > 0.005 && moved.x <= 0.01 + 1e-4, "moved {moved}");
    assert!(moved.y.abs().max(moved.z.abs()) <= 0.1 * moved.x, "moved {moved}");
}

#[test]
fn scaling_every_weight_keeps_the_minimizer() {
    let rt = grasp();
    let lin = Linearization::compute(&rt.dual, &rt.object, rt.state());
    let here = rt.current().object_pose;
    let target = Pose::new(Rotation::from_euler_angles(0.02, 0.0, 0.0) * here.rotation, here.translation);
    let (h, g) = build_cost(&rt.dual, &rt.object, rt.state(), &lin, &target, &rt.config);
    let mut doubled = rt.config.clone();
    doubled.w_pose = doubled.w_pose.map(|w| 2.0 * w);
    doubled.w_grasp *= 2.0;
    doubled.w_reg_q *= 2.0;
    doubled.w_reg_lambda *= 2.0;
    doubled.w_posture *= 2.0;
    doubled.tikhonov *= 2.0;
    let (h2, g2) = build_cost(&rt.dual, &rt.object, rt.state(), &lin, &target, &doubled);
    let a = unconstrained_minimizer(&h, &g);
    let b = unconstrained_minimizer(&h2, &g2);
    assert!((&a - &b).amax() <= 1e-9 * a.amax().max(1.0));
}

#[test]
fn massless_object_is_held_by_the_minimum_squeeze() {
    let rt = grasp();
    let mut object = rt.object.clone();
    object.mass = 0.0;
    let s = initialize(&rt.dual, &object, rt.state().q.as_slice(), &rt.config).unwrap();
    let squeeze = Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, object.f_normal_min);
    assert!((s.lambda_l.to_vector() - squeeze).amax() <= 1e-6, "{:?}", s.lambda_l);
    assert!((s.lambda_r.to_vector() - squeeze).amax() <= 1e-6, "{:?}", s.lambda_r);
}

#[test]
fn symmetric_grasp_shares_the_weight() {
    let rt = grasp();
    let mut object = rt.object.clone();
    object.mass = 2.0;
    object.friction_mu = 0.5;
    let s = initialize(&rt.dual, &object, rt.state().q.as_slice(), &rt.config).unwrap();
    for w in [&s.lambda_l, &s.lambda_r] {
        let tangential = w.force.x.hypot(w.force.y);
        assert!((tangential - 9.81).abs() <= 1e-6, "tangential {tangential}");
        assert!(w.force.z >= 19.62, "normal {}", w.force.z);
    }
}

#[test]
fn slippery_heavy_object_cannot_be_held() {
    let rt = grasp();
    let mut object = rt.object.clone();
    object.mass = 10.0;
    object.friction_mu = 0.01;
    object.f_normal_max = 40.0;
    let err = initialize(&rt.dual, &object, rt.state().q.as_slice(), &rt.config).unwrap_err();
    assert!(matches!(err, RetargetError::NoFeasibleWrench { .. }), "{err}");
}

#[test]
fn current_pose_is_a_fixed_point() {
    let mut rt = grasp();
    let before = rt.state().to_vector();
    let here = rt.current().object_pose;
    let out = rt.step(&here).unwrap();
    assert!((rt.state().to_vector() - before).amax() <= 1e-6);
    assert!(!out.clamped);
}

#[test]
fn infeasible_start_is_reported() {
    let rt = grasp();
    let mut s = rt.state().clone();
    s.lambda_l.force.z = -10.0;
    let mut bad = Retargeter::with_state(rt.dual.clone(), rt.object.clone(), s, rt.config.clone());
    let here = rt.current().object_pose;
    assert!(matches!(bad.step(&here), Err(RetargetError::InfeasibleStart { .. })));
}

#[test]
fn static_targets_converge_to_equilibrium() {
    let base = grasp();
    let start = base.current().object_pose;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..20 {
        let mut rt = base.clone();
        let rot = Rotation::from_scaled_axis(random_vec3(&mut rng, 1.0).normalize() * rng.random_range(0.0..0.05));
        let target = Pose::new(rot * start.rotation, start.translation + random_vec3(&mut rng, 0.02));
        let mut errors = Vec::new();
        for _ in 0..3000 {
            let before = rt.state().to_vector();
            let out = rt.step(&target).unwrap();
            errors.push(pose_error(&out.object_pose, &target).norm());
            if (rt.state().to_vector() - before).amax() <= 1e-12 {
                break;
            }
        }
        let s = rt.state();
        let r = equilibrium_residual(&rt.dual, &rt.object, s.q.as_slice(), &s.lambda_l, &s.lambda_r);
        assert!(r.amax() <= 1e-6, "case {case}: residual {:.2e}", r.amax());
        assert!(*errors.last().unwrap() <= 1e-4, "case {case}: pose error {:.2e}", errors.last().unwrap());
        for k in 10..errors.len() {
            if errors[k - 1] <= 1e-4 {
                break;
            }
            assert!(errors[k] <= errors[k - 1] + 1e-12, "case {case}: error grew at cycle {k}");
        }
    }
}

#[test]
fn default_config_is_valid() {
    let c = RetargetConfig::default();
    assert!(c.validate().is_ok());
    assert_eq!(c.torque_ratio, 0.9);
    let mut bad = c.clone();
    bad.torque_ratio = 1.5;
    assert!(bad.validate().is_err());
}
