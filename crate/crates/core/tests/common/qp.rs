//! Brute-force reference for the QP solver.

use bimanual::qp::{QpProblem, QpSolution};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Minimize over all active sets: each subset of inequality rows is turned
/// into equalities, the KKT system solved, and the best primal-feasible point
/// kept. Exact for strictly convex problems.
pub fn enumerate(p: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let d = p.dim();
    let m = p.n_ineq();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = p.n_eq() + rows.len();
        if k > d {
            continue;
        }
        let n = d + k;
        let mut kkt = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        kkt.view_mut((0, 0), (d, d)).copy_from(&p.h);
        rhs.rows_mut(0, d).copy_from(&(-&p.g));
        for r in 0..p.n_eq() {
            for j in 0..d {
                kkt[(d + r, j)] = p.a_eq[(r, j)];
                kkt[(j, d + r)] = p.a_eq[(r, j)];
            }
            rhs[d + r] = -p.b_eq[r];
        }
        for (r, &i) in rows.iter().enumerate() {
            let r = p.n_eq() + r;
            for j in 0..d {
                kkt[(d + r, j)] = p.a_ineq[(i, j)];
                kkt[(j, d + r)] = p.a_ineq[(i, j)];
            }
            rhs[d + r] = -p.b_ineq[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, d).into_owned();
        if !x.iter().all(|v| v.is_finite()) || p.primal_violation(&x) > 1e-9 {
            continue;
        }
        let f = p.objective(&x);
        if best.as_ref().map_or(true, |(_, b)| f < *b) {
            best = Some((x, f));
        }
    }
    best
}

pub fn random_problem(rng: &mut ChaCha8Rng) -> QpProblem {
    let d = rng.random_range(1..=8);
    let m_in = rng.random_range(0..=10);
    let m_eq = rng.random_range(0..=d.min(2)).min(d - 1);
    let l = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(d, d) * 0.1;
    let g = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
    // Constraints built around a known feasible point.
    let x0 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(m_eq, d, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = -(&a_eq * &x0);
    let a_in = DMatrix::from_fn(m_in, d, |_, _| rng.random_range(-1.0..1.0));
    let slack = DVector::from_fn(m_in, |_, _| rng.random_range(0.0..0.5));
    let b_in = -(&a_in * &x0) + slack;
    QpProblem::unconstrained(h, g).with_equalities(a_eq, b_eq).with_inequalities(a_in, b_in)
}

pub fn kkt_residuals(p: &QpProblem, sol: &QpSolution) -> (f64, f64, f64) {
    let x = &sol.x;
    let primal = p.primal_violation(x);
    let mut r = &p.h * x + &p.g;
    r += p.a_eq.transpose() * &sol.eq_multipliers;
    r -= p.a_ineq.transpose() * &sol.ineq_multipliers;
    let slacks = p.slacks(x);
    let comp = slacks
        .iter()
        .zip(sol.ineq_multipliers.iter())
        .map(|(s, m)| (s * m).abs())
        .fold(0.0, f64::max);
    (primal, r.amax(), comp)
}
