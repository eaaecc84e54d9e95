//! Saturated PD, fractal-impedance channels and the assembled torque law.

mod common;

use bimanual::control::{
    nlpd_spring, pd_force, pd_spring, ControlFile, ControlTarget, FicChannelState, FicPhase, InteractionController,
    NlpdParams, PdParams, F_LIN_RANGE,
};
use bimanual::model::relative_jacobian_of;
use bimanual::spatial::{Pose, Rotation, Wrench};
use common::{grasp, repo_root};
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linear_channel() -> NlpdParams {
    NlpdParams::from_pd(PdParams::new(25.0, 0.08, 0.8).unwrap(), 0.9)
}

#[test]
fn saturated_pd_never_exceeds_its_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for _ in 0..100_000 {
        let p = PdParams::new(rng.random_range(0.1..100.0), rng.random_range(1e-3..1.0), 0.0).unwrap();
        let e = rng.random_range(-10.0..10.0) * p.d;
        assert!(pd_spring(e, &p).abs() <= p.f * (1.0 + 1e-12));
    }
}

#[test]
fn saturated_pd_examples() {
    let p = PdParams::new(25.0, 0.08, 0.8).unwrap();
    assert_eq!(pd_force(0.3, 0.3, 0.0, &p), 0.0);
    assert!((pd_spring(0.04, &p) - 12.5).abs() <= 1e-12);
    assert_eq!(pd_spring(0.8, &p), 25.0);
    assert_eq!(pd_spring(-0.8, &p), -25.0);
    assert!((pd_force(0.0, 0.0, 0.1, &p) + p.kd() * 0.1).abs() <= 1e-12);
}

#[test]
fn nlpd_is_bounded_by_its_maximum_effort() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut state = FicChannelState::default();
    let mut p = linear_channel();
    for i in 0..1_000_000 {
        if i % 10_000 == 0 {
            let f = rng.random_range(F_LIN_RANGE[0]..F_LIN_RANGE[1]);
            p = NlpdParams::from_pd(PdParams::new(f, rng.random_range(0.01..0.2), 0.5).unwrap(), rng.random_range(0.5..0.95));
            state = FicChannelState::default();
        }
        let e = rng.random_range(-3.0..3.0) * p.pd.d;
        let (f, next) = nlpd_spring(e, &p, &state);
        assert!(f.is_finite() && f.abs() <= p.e_max * (1.0 + 1e-12), "|{f}| > {}", p.e_max);
        state = next;
    }
}

#[test]
fn nlpd_is_linear_below_the_knee() {
    let p = linear_channel();
    for k in 0..=100 {
        let a = p.alpha_b() * k as f64 / 100.0;
        assert!((p.energy(a) - p.pd.kp() * a).abs() <= 1e-12);
        assert!((p.energy(-a) + p.pd.kp() * a).abs() <= 1e-12);
    }
}

#[test]
fn nlpd_approaches_its_maximum_effort_monotonically() {
    let p = linear_channel();
    let mut prev = 0.0;
    for k in 1..=10_000 {
        let a = 5.0 * p.pd.d * k as f64 / 10_000.0;
        let e = p.energy(a);
        assert!(e >= prev - 1e-12 && e <= p.e_max);
        prev = e;
    }
    assert!(p.e_max - p.energy(5.0 * p.pd.d) <= 1e-3 * p.e_max);
}

#[test]
fn nlpd_is_continuous_at_the_knee() {
    let p = linear_channel();
    let b = p.alpha_b();
    let jump = (p.energy(b + 1e-12) - p.energy(b)).abs();
    assert!(jump <= 0.02 * p.e0(), "jump {jump}");
}

#[test]
fn convergence_line_passes_through_zero_at_half_the_excursion() {
    let p = linear_channel();
    for am in [0.01, 0.05, 0.072, 0.1, 0.3] {
        let (_, s) = nlpd_spring(am, &p, &FicChannelState::default());
        let (f, s) = nlpd_spring(0.5 * am, &p, &s);
        assert_eq!(s.phase, FicPhase::Convergence);
        assert!(f.abs() <= 1e-12);
        let (f0, _) = nlpd_spring(0.0, &p, &s);
        assert!((f0 + p.energy(am)).abs() <= 1e-12);
    }
}

/// Work done by the spring over one excursion out to `am` and back.
fn episode_work(p: &NlpdParams, am: f64, steps: usize) -> (f64, f64) {
    let mut state = FicChannelState::default();
    let (mut out, mut back) = (0.0, 0.0);
    let mut prev: Option<(f64, f64)> = None;
    let path = (0..=steps).map(|k| am * k as f64 / steps as f64).chain((0..steps).rev().map(|k| am * k as f64 / steps as f64));
    for e in path {
        let (f, next) = nlpd_spring(e, p, &state);
        state = next;
        if let Some((e0, f0)) = prev {
            let w = 0.5 * (f + f0) * (e - e0);
            if e > e0 {
                out += w;
            } else {
                back += -w;
            }
        }
        prev = Some((e, f));
    }
    (out, back)
}

#[test]
fn an_episode_returns_no_more_energy_than_it_stores() {
    let p = linear_channel();
    for am in [0.02, 0.07, 0.08, 0.15, 0.5] {
        let (stored, returned) = episode_work(&p, am, 20_000);
        assert!(stored > 0.0);
        assert!(returned <= stored + 1e-6, "am {am}: returned {returned} > stored {stored}");
    }
}

#[test]
fn bundled_gains_match_the_table() {
    let file = ControlFile::load(repo_root().join("config/control.toml")).unwrap();
    let p = file.params().unwrap();
    let deg = std::f64::consts::PI / 180.0;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    assert!(p.cartesian.linear.f >= F_LIN_RANGE[0] && p.cartesian.linear.f <= F_LIN_RANGE[1]);
    assert!(close(p.cartesian.linear.d, 0.08) && close(p.cartesian.linear.zeta, 0.8));
    assert!(close(p.cartesian.angular.f, 2.0) && close(p.cartesian.angular.d, 8.0 * deg) && close(p.cartesian.angular.zeta, 0.2));
    assert!(close(p.relative.linear.f, 50.0) && close(p.relative.linear.d, 0.05) && close(p.relative.linear.zeta, 0.4));
    assert!(close(p.relative.angular.f, 5.0) && close(p.relative.angular.d, 5.0 * deg) && close(p.relative.angular.zeta, 0.1));
    assert!(close(p.joint.f, 0.3) && close(p.joint.d, 10.0 * deg) && p.joint.zeta == 0.0);
    assert_eq!(file, ControlFile::default());
}

#[test]
fn out_of_range_linear_force_is_rejected() {
    let text = std::fs::read_to_string(repo_root().join("config/control.toml")).unwrap();
    let bad = text.replace("f = 25.0, d = 0.08", "f = 41.0, d = 0.08");
    assert_ne!(bad, text);
    let err = ControlFile::parse(&bad).unwrap().params().unwrap_err();
    assert!(err.contains("cartesian.linear.f"), "{err}");
}

fn tracking_target(q: &[f64]) -> ControlTarget {
    let rt = grasp();
    let (left, right) = rt.dual.states(q);
    ControlTarget {
        q_d: DVector::from_column_slice(q),
        x_l_d: left.end_effector,
        x_r_d: right.end_effector,
        relative_d: left.end_effector.inverse() * right.end_effector,
        lambda_l: Wrench::zero(),
        lambda_r: Wrench::zero(),
    }
}

#[test]
fn perfect_tracking_without_contact_leaves_gravity_compensation() {
    let rt = grasp();
    let q = rt.state().q.as_slice().to_vec();
    let mut ctrl = InteractionController::new(Default::default());
    let terms = ctrl.compute_torques(&rt.dual, &q, &vec![0.0; q.len()], &tracking_target(&q));
    assert!((&terms.total - &terms.gravity).amax() <= 1e-9);
    assert!(terms.gravity.amax() > 1.0);
}

#[test]
fn joint_channel_pulls_toward_the_posture() {
    let rt = grasp();
    let q = rt.state().q.as_slice().to_vec();
    let mut target = tracking_target(&q);
    target.q_d[3] += 0.01;
    let ctrl = InteractionController::new(Default::default());
    let (terms, _) = ctrl.evaluate(&rt.dual, &q, &vec![0.0; q.len()], &target);
    assert!((terms.joint[3] - ctrl.params.joint.kp() * 0.01).abs() <= 1e-12);
    assert!(terms.joint.iter().enumerate().all(|(j, t)| j == 3 || *t == 0.0));
}

#[test]
fn relative_channel_restores_the_hand_offset() {
    let rt = grasp();
    let q = rt.state().q.as_slice().to_vec();
    let (left, right) = rt.dual.states(&q);
    let jr = relative_jacobian_of(&left, &right);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let ctrl = InteractionController::new(Default::default());
    for _ in 0..50 {
        let mut target = tracking_target(&q);
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let offset = Pose::new(
            Rotation::from_scaled_axis(axis.normalize() * rng.random_range(0.0..0.03)),
            Vector3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01)),
        );
        target.relative_d = target.relative_d * offset;
        let (terms, _) = ctrl.evaluate(&rt.dual, &q, &vec![0.0; q.len()], &target);
        let e = bimanual::spatial::pose_error(&(left.end_effector.inverse() * right.end_effector), &target.relative_d);
        // τ_rel = J_rᵀ w; recover w and check each component pushes along its error.
        let w = (&jr * jr.transpose()).lu().solve(&(&jr * &terms.relative)).unwrap();
        for k in 0..6 {
            assert!(w[k] * e[k] >= 0.0, "component {k}: w {} e {}", w[k], e[k]);
        }
        assert!(w.dot(&DVector::from_column_slice(e.as_slice())) > 0.0);
    }
}

#[test]
fn contact_feedforward_is_the_jacobian_transpose_of_the_expected_wrench() {
    let rt = grasp();
    let s = rt.state();
    let q = s.q.as_slice().to_vec();
    let mut target = tracking_target(&q);
    target.lambda_l = s.lambda_l;
    target.lambda_r = s.lambda_r;
    let ctrl = InteractionController::new(Default::default());
    let (terms, _) = ctrl.evaluate(&rt.dual, &q, &vec![0.0; q.len()], &target);
    let (left, right) = rt.dual.states(&q);
    let n_l = rt.dual.left.dof();
    let fl = -(left.jacobian_local().transpose() * nalgebra::Vector6::from(s.lambda_l.to_vector()));
    let fr = -(right.jacobian_local().transpose() * nalgebra::Vector6::from(s.lambda_r.to_vector()));
    assert!((terms.feedforward.rows(0, n_l) - fl).amax() <= 1e-12);
    assert!((terms.feedforward.rows(n_l, q.len() - n_l) - fr).amax() <= 1e-12);
    assert!((&terms.total - &terms.gravity - &terms.feedforward).amax() <= 1e-9);
}
