//! External-wrench estimation and the admittance integrator.

mod common;

use bimanual::admittance::{
    admittance_step, desired_wrench, estimate_external_wrench, feasibility_bound, Admittance, AdmittanceParams,
    AdmittanceState, DesiredWrenchMode,
};
use bimanual::spatial::{wrench_transform, Pose, Twist, Wrench};
use common::{grasp, random_vec3};
use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_wrench(rng: &mut ChaCha8Rng) -> Wrench {
    Wrench::new(random_vec3(rng, 2.0), random_vec3(rng, 30.0))
}

#[test]
fn equilibrium_wrenches_leave_no_external_load() {
    let rt = grasp();
    let s = rt.state();
    let ext = estimate_external_wrench(&rt.dual, &rt.object, s.q.as_slice(), &s.lambda_l, &s.lambda_r);
    assert!(ext.to_vector().amax() <= 1e-6, "{:?}", ext);
}

#[test]
fn massless_object_sums_the_hand_wrenches() {
    let rt = grasp();
    let mut object = rt.object.clone();
    object.mass = 0.0;
    let q = rt.state().q.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..100 {
        let (ll, lr) = (random_wrench(&mut rng), random_wrench(&mut rng));
        let ext = estimate_external_wrench(&rt.dual, &object, q, &ll, &lr);
        let sum = wrench_transform(&object.grasp_left).0 * ll.to_vector()
            + wrench_transform(&object.grasp_right).0 * lr.to_vector();
        assert!((ext.to_vector() - sum).amax() <= 1e-12);
    }
}

#[test]
fn estimate_is_affine_in_the_hand_wrenches() {
    let rt = grasp();
    let q = rt.state().q.as_slice();
    let est = |l: &Wrench, r: &Wrench| estimate_external_wrench(&rt.dual, &rt.object, q, l, r).to_vector();
    let zero = est(&Wrench::zero(), &Wrench::zero());
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let (a, b, c, d) = (random_wrench(&mut rng), random_wrench(&mut rng), random_wrench(&mut rng), random_wrench(&mut rng));
        let k = rng.random_range(-3.0..3.0);
        let mix = |x: &Wrench, y: &Wrench| Wrench::from_vector(&(x.to_vector() + k * y.to_vector()));
        let lhs = est(&mix(&a, &c), &mix(&b, &d)) - zero;
        let rhs = (est(&a, &b) - zero) + k * (est(&c, &d) - zero);
        assert!((lhs - rhs).amax() <= 1e-9 * (1.0 + lhs.amax()));
    }
}

#[test]
fn desired_wrench_examples() {
    let p = AdmittanceParams::from_diagonals(&[1.0; 6], &[10.0, 10.0, 10.0, 200.0, 200.0, 200.0], Some(&[3.0; 6]));
    let rest = Pose::identity();
    let zero = desired_wrench(&rest, &Twist::zero(), &rest, &p);
    assert_eq!(zero.to_vector(), Vector6::zeros());
    let off = Pose::from_translation(Vector3::new(0.01, 0.0, 0.0));
    let w = desired_wrench(&off, &Twist::zero(), &rest, &p);
    assert!((w.to_vector() - Vector6::new(0.0, 0.0, 0.0, -2.0, 0.0, 0.0)).amax() <= 1e-12);
    let moving = Twist::from_vector(&Vector6::new(0.0, 0.0, 0.5, 0.1, 0.0, 0.0));
    let w = desired_wrench(&rest, &moving, &rest, &p);
    assert!((w.to_vector() - Vector6::new(0.0, 0.0, -1.5, -0.3, 0.0, 0.0)).amax() <= 1e-12);
}

#[test]
fn balanced_wrenches_leave_the_state_unchanged() {
    let p = AdmittanceParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let state = AdmittanceState {
        pose: Pose::from_translation(random_vec3(&mut rng, 0.01)),
        twist: Twist::zero(),
    };
    let w = random_wrench(&mut rng);
    let next = admittance_step(&state, &w, &w, &p, 1e-3, None);
    assert_eq!(next, state);
}

#[test]
fn unit_force_on_unit_mass_integrates_to_the_kinematics() {
    let p = AdmittanceParams::from_diagonals(&[1.0; 6], &[0.0; 6], Some(&[0.0; 6])).with_mode(DesiredWrenchMode::ExternalInput);
    let push = Wrench::from_force(Vector3::new(1.0, 0.0, 0.0));
    let mut s = AdmittanceState::default();
    for _ in 0..1000 {
        s = admittance_step(&s, &push, &Wrench::zero(), &p, 1e-3, None);
    }
    assert!((s.twist.to_vector()[3] - 1.0).abs() <= 1e-3);
    assert!((s.pose.translation.x - 0.5).abs() <= 1e-3);
    assert!(s.pose.translation.y == 0.0 && s.pose.translation.z == 0.0);
}

#[test]
fn zero_bound_freezes_the_twist() {
    let p = AdmittanceParams::default();
    let s = AdmittanceState { pose: Pose::identity(), twist: Twist::from_vector(&Vector6::new(0.0, 0.1, 0.0, 0.02, 0.0, 0.0)) };
    let next = admittance_step(&s, &Wrench::from_force(Vector3::new(50.0, 0.0, 0.0)), &Wrench::zero(), &p, 1e-3, Some(0.0));
    assert_eq!(next.twist, s.twist);
}

#[test]
fn twist_change_respects_the_bound_every_cycle() {
    let mut adm = Admittance::new(AdmittanceParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..5000 {
        let cap = rng.random_range(0.0..1e-3);
        let before = adm.state().twist.to_vector();
        adm.update(&random_wrench(&mut rng), &Wrench::zero(), 1e-3, Some(cap));
        let change = (adm.state().twist.to_vector() - before).amax();
        assert!(change <= cap * (1.0 + 1e-12) + 1e-15, "{change} > {cap}");
    }
}

#[test]
fn feasibility_bound_is_the_gap_rate() {
    let a = Pose::from_translation(Vector3::new(0.5, 0.0, 0.3));
    let b = Pose::from_translation(Vector3::new(0.501, 0.0, 0.3));
    assert!((feasibility_bound(&a, &b, 1e-3) - 1.0).abs() <= 1e-9);
    assert_eq!(feasibility_bound(&a, &a, 1e-3), 0.0);
}

#[test]
fn spring_damper_offset_returns_to_rest_after_a_push() {
    let mut adm = Admittance::new(AdmittanceParams::default());
    let push = Wrench::new(Vector3::new(0.0, 0.5, 0.0), Vector3::new(10.0, 0.0, -5.0));
    let mut peak = 0.0f64;
    for k in 0..10_000 {
        let ext = if k < 200 { push } else { Wrench::zero() };
        adm.update(&ext, &Wrench::zero(), 1e-3, None);
        peak = peak.max(adm.state().pose.translation.norm());
    }
    let s = adm.state();
    assert!(peak > 1e-3, "push moved the offset by {peak}");
    assert!(s.pose.translation.norm() <= 1e-4 && s.pose.rotation.angle() <= 1e-4);
    assert!(s.twist.to_vector().amax() <= 1e-4);
    let cmd = Pose::from_translation(Vector3::new(0.6, 0.0, 0.4));
    assert!((adm.apply(&cmd).translation - cmd.translation).norm() <= 1e-4);
}
