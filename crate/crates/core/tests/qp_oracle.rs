//! The ADMM solver against brute-force active-set enumeration.

mod common;

use bimanual::qp::{QpProblem, QpSettings, QpSolver, QpStatus};
use common::qp::{enumerate, kkt_residuals, random_problem};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_enumeration_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut solver = QpSolver::new(QpSettings::default());
    for case in 0..200 {
        let p = random_problem(&mut rng);
        let (_, f_star) = enumerate(&p).expect("constructed problems are feasible");
        let sol = solver.solve(&p, None);
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}: {:?}", sol.status);
        let f = p.objective(&sol.x);
        assert!((f - f_star).abs() <= 1e-6 * (1.0 + f_star.abs()), "case {case}: {f} vs {f_star}");
        let (primal, stat, comp) = kkt_residuals(&p, &sol);
        assert!(primal <= 1e-8, "case {case}: primal {primal}");
        assert!(stat <= 1e-8, "case {case}: stationarity {stat}");
        assert!(comp <= 1e-6, "case {case}: complementarity {comp}");
        assert!(sol.ineq_multipliers.iter().all(|m| *m >= -1e-8), "case {case}: negative multiplier");
    }
}

#[test]
fn detects_contradictory_rows() {
    // x ≥ 1 and x ≤ 0.
    let p = QpProblem::unconstrained(DMatrix::identity(1, 1), DVector::zeros(1)).with_inequalities(
        DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        DVector::from_vec(vec![-1.0, 0.0]),
    );
    let sol = QpSolver::new(QpSettings { max_iterations: 2000, ..Default::default() }).solve(&p, None);
    assert_eq!(sol.status, QpStatus::Infeasible);
}

#[test]
fn warm_start_does_not_cost_more_than_cold() {
    // A slowly drifting sequence, as in the control loop.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = random_problem(&mut rng);
    let mut warm = QpSolver::default();
    let mut cold = QpSolver::default();
    let mut prev: Option<DVector<f64>> = None;
    let (mut warm_total, mut cold_total) = (0, 0);
    for k in 0..50 {
        let mut p = base.clone();
        p.g += DVector::from_element(p.dim(), 1e-3 * k as f64);
        let c = cold.solve(&p, None);
        let w = warm.solve(&p, prev.as_ref());
        assert_eq!(w.status, QpStatus::Optimal);
        assert!((p.objective(&w.x) - p.objective(&c.x)).abs() < 1e-6);
        warm_total += w.iterations;
        cold_total += c.iterations;
        prev = Some(w.x);
    }
    assert!(warm_total <= cold_total, "warm {warm_total} cold {cold_total}");
}
