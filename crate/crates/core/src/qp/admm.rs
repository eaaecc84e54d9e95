//! Operator-splitting solver in the style of OSQP, specialised to small dense
//! problems. Each solve equilibrates the data, runs ADMM with an adaptive
//! penalty, and periodically tries to finish exactly by solving the KKT
//! system on the active set guessed from the current iterate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{QpProblem, QpSettings, QpSolution, QpStatus};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const EQ_RHO_FACTOR: f64 = 1e3;
const CHECK_INTERVAL: usize = 5;

/// Reusable solver. Keeps the last dual vector so that a warm-started solve
/// of a similar problem can guess its active set immediately.
#[derive(Clone, Debug)]
pub struct QpSolver {
    pub settings: QpSettings,
    warm_duals: Option<WarmDuals>,
}

#[derive(Clone, Debug)]
struct WarmDuals {
    d: usize,
    n_eq: usize,
    n_ineq: usize,
    y: DVector<f64>,
}

/// Problem in the stacked form `l ≤ C x ≤ u`, after equilibration.
struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    c: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    /// Variable scaling: `x = D x̃`.
    dvec: DVector<f64>,
    /// Row scaling: `C̃ = E C D`.
    evec: DVector<f64>,
    cost: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
    Fixed,
}

impl Default for QpSolver {
    fn default() -> Self {
        Self::new(QpSettings::default())
    }
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings, warm_duals: None }
    }

    /// Forget stored multipliers.
    pub fn reset(&mut self) {
        self.warm_duals = None;
    }

    /// Solve `problem`. With `warm_start`, ADMM starts from that point and
    /// from the multipliers of the previous solve if the dimensions match.
    pub fn solve(&mut self, problem: &QpProblem, warm_start: Option<&DVector<f64>>) -> QpSolution {
        debug_assert!(problem.validate().is_ok(), "{:?}", problem.validate());
        let s = self.settings.clone();
        let d = problem.dim();
        let (n_eq, n_in) = (problem.n_eq(), problem.n_ineq());
        let m = n_eq + n_in;

        let sc = scale(problem, s.scaling_passes);
        let bounds: Vec<bool> = (0..m).map(|i| sc.u[i] - sc.l[i] <= 1e-12 * (1.0 + sc.l[i].abs())).collect();

        let mut x = match warm_start {
            Some(w) if w.len() == d => w.component_div(&sc.dvec),
            _ => DVector::zeros(d),
        };
        let mut y = DVector::zeros(m);
        if warm_start.is_some() {
            if let Some(w) = &self.warm_duals {
                if (w.d, w.n_eq, w.n_ineq) == (d, n_eq, n_in) {
                    // ỹ = c·y / E
                    y = w.y.component_div(&sc.evec) * sc.cost;
                }
            }
        }
        let mut z = &sc.c * &x;
        clamp_into(&mut z, &sc.l, &sc.u);

        if s.polish && (warm_start.is_some() || m == 0) {
            if let Some(sol) = self.polish(problem, &sc, &x, &z, &y, &bounds, 0) {
                return sol;
            }
        }

        let mut rho_base = s.rho;
        let mut rho = rho_vector(rho_base, &bounds);
        let mut chol = factor(&sc, &rho, s.sigma);

        let mut rhs = DVector::zeros(d);
        let mut w = DVector::zeros(m);
        let mut zt = DVector::zeros(m);
        let mut y_prev = y.clone();
        let mut last = Residuals::default();

        for k in 1..=s.max_iterations {
            if k % CHECK_INTERVAL == 0 {
                y_prev.copy_from(&y);
            }
            // x̃ = (P + σI + Cᵀ ρ C)⁻¹ (σ x − q + Cᵀ(ρ z − y))
            for i in 0..m {
                w[i] = rho[i] * z[i] - y[i];
            }
            rhs.copy_from(&x);
            rhs *= s.sigma;
            rhs -= &sc.q;
            rhs.gemv_tr(1.0, &sc.c, &w, 1.0);
            chol.solve_mut(&mut rhs);
            zt.gemv(1.0, &sc.c, &rhs, 0.0);
            x.axpy(s.alpha, &rhs, 1.0 - s.alpha);
            for i in 0..m {
                let zr = s.alpha * zt[i] + (1.0 - s.alpha) * z[i];
                let zn = (zr + y[i] / rho[i]).clamp(sc.l[i], sc.u[i]);
                y[i] += rho[i] * (zr - zn);
                z[i] = zn;
            }

            let check = k % CHECK_INTERVAL == 0 || k == s.max_iterations;
            if check {
                last = residuals(&sc, &x, &z, &y, s.eps_abs, s.eps_rel);
                if last.converged() {
                    if s.polish {
                        if let Some(sol) = self.polish(problem, &sc, &x, &z, &y, &bounds, k) {
                            return sol;
                        }
                    }
                    return self.finish(&sc, &x, &y, QpStatus::Optimal, k, last, n_eq, n_in);
                }
                if m > 0 && primal_infeasible(&sc, &(&y - &y_prev), s.eps_infeasible) {
                    return self.finish(&sc, &x, &y, QpStatus::Infeasible, k, last, n_eq, n_in);
                }
            }
            if s.polish && k % s.polish_interval.max(1) == 0 {
                if let Some(sol) = self.polish(problem, &sc, &x, &z, &y, &bounds, k) {
                    return sol;
                }
            }
            if s.adaptive_rho_interval > 0 && k % s.adaptive_rho_interval == 0 && m > 0 {
                let r = if check { last } else { residuals(&sc, &x, &z, &y, s.eps_abs, s.eps_rel) };
                let ratio = r.rho_ratio();
                let next = (rho_base * ratio).clamp(RHO_MIN, RHO_MAX);
                if ratio.is_finite() && (next > 5.0 * rho_base || next < 0.2 * rho_base) {
                    rho_base = next;
                    rho = rho_vector(rho_base, &bounds);
                    chol = factor(&sc, &rho, s.sigma);
                }
            }
        }

        if s.polish {
            if let Some(sol) = self.polish(problem, &sc, &x, &z, &y, &bounds, s.max_iterations) {
                return sol;
            }
        }
        let last = residuals(&sc, &x, &z, &y, s.eps_abs, s.eps_rel);
        self.finish(&sc, &x, &y, QpStatus::MaxIterations, s.max_iterations, last, n_eq, n_in)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &mut self,
        sc: &Scaled,
        x: &DVector<f64>,
        y: &DVector<f64>,
        status: QpStatus,
        iterations: usize,
        r: Residuals,
        n_eq: usize,
        n_in: usize,
    ) -> QpSolution {
        let x_u = x.component_mul(&sc.dvec);
        let y_u = y.component_mul(&sc.evec) / sc.cost;
        self.store(x_u.len(), n_eq, n_in, &y_u);
        solution(x_u, &y_u, n_eq, status, iterations, r.primal, r.dual, false)
    }

    fn store(&mut self, d: usize, n_eq: usize, n_ineq: usize, y: &DVector<f64>) {
        self.warm_duals = Some(WarmDuals { d, n_eq, n_ineq, y: y.clone() });
    }

    /// Finish exactly from the active set suggested by `(z, y)`: drop guessed
    /// rows until the multipliers are dual feasible, then add violated rows
    /// one at a time with dual active-set steps. The result is accepted only
    /// if it satisfies the full KKT conditions on the original data.
    #[allow(clippy::too_many_arguments)]
    fn polish(
        &mut self,
        problem: &QpProblem,
        sc: &Scaled,
        x: &DVector<f64>,
        z: &DVector<f64>,
        y: &DVector<f64>,
        fixed: &[bool],
        iterations: usize,
    ) -> Option<QpSolution> {
        let d = x.len();
        let m = z.len();
        let guess: Vec<Bound> = (0..m)
            .map(|i| {
                if fixed[i] {
                    Bound::Fixed
                } else if z[i] - sc.l[i] < -y[i] {
                    Bound::Lower
                } else if sc.u[i] - z[i] < y[i] {
                    Bound::Upper
                } else {
                    Bound::Free
                }
            })
            .collect();
        let (x_s, y_s) = dual_active_set(sc, guess, self.settings.polish_max_changes, self.settings.eps_abs)?;
        let x_u = x_s.component_mul(&sc.dvec);
        let y_u = y_s.component_mul(&sc.evec) / sc.cost;

        let n_eq = problem.n_eq();
        let primal = problem.primal_violation(&x_u);
        let stat = stationarity(problem, &x_u, &y_u);
        let scale_p = problem.g.amax().max(1.0);
        let eps = self.settings.eps_abs;
        if primal <= eps && stat <= eps.max(1e-12 * scale_p) {
            self.store(d, n_eq, problem.n_ineq(), &y_u);
            Some(solution(x_u, &y_u, n_eq, QpStatus::Optimal, iterations, primal, stat, true))
        } else {
            None
        }
    }
}

/// One working-set entry: row `i` of `C` held at its lower or upper bound.
/// As a constraint `a·x + b ≥ 0`, the lower side is `(c_i, −l_i)` and the
/// upper side `(−c_i, u_i)`; fixed rows use the lower form with a free sign.
#[derive(Clone, Copy)]
struct Working {
    row: usize,
    kind: Bound,
}

fn constraint_value(sc: &Scaled, cx: &DVector<f64>, w: Working) -> f64 {
    match w.kind {
        Bound::Upper => sc.u[w.row] - cx[w.row],
        _ => cx[w.row] - sc.l[w.row],
    }
}

/// Solve `[P Aᵀ; A 0] [x; w] = [r1; r2]` for the working set, with a small
/// regularization removed again by iterative refinement.
fn kkt_solve(sc: &Scaled, set: &[Working], r1: &DVector<f64>, r2: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = sc.q.len();
    let na = set.len();
    let n = d + na;
    let delta = 1e-11;
    let mut kkt = DMatrix::zeros(n, n);
    kkt.view_mut((0, 0), (d, d)).copy_from(&sc.p);
    for (r, w) in set.iter().enumerate() {
        let sign = if w.kind == Bound::Upper { -1.0 } else { 1.0 };
        for j in 0..d {
            let v = sign * sc.c[(w.row, j)];
            kkt[(d + r, j)] = v;
            kkt[(j, d + r)] = v;
        }
    }
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, d).copy_from(r1);
    rhs.rows_mut(d, na).copy_from(r2);
    let exact = kkt.clone();
    for j in 0..d {
        kkt[(j, j)] += delta;
    }
    for r in 0..na {
        kkt[(d + r, d + r)] -= delta;
    }
    let lu = kkt.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..3 {
        let res = &rhs - &exact * &sol;
        sol += lu.solve(&res)?;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, d).into_owned(), sol.rows(d, na).into_owned()))
}

/// Dual active-set method on the scaled problem, seeded with `guess`.
/// Returns scaled `(x, y)` with the sign convention `y ≤ 0` at lower bounds.
fn dual_active_set(sc: &Scaled, guess: Vec<Bound>, max_changes: usize, eps: f64) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = guess.len();
    let mut set: Vec<Working> =
        (0..m).filter(|&i| guess[i] != Bound::Free).map(|i| Working { row: i, kind: guess[i] }).collect();

    // Stationarity P x + q − Σ u_k a_k = 0, so the KKT unknown is w = −u.
    let offsets = |set: &[Working]| {
        DVector::from_iterator(
            set.len(),
            set.iter().map(|w| match w.kind {
                Bound::Upper => -sc.u[w.row],
                _ => sc.l[w.row],
            }),
        )
    };
    let minus_q = -&sc.q;
    let mut changes = 0;
    let (mut x, u) = loop {
        let (x, w) = kkt_solve(sc, &set, &minus_q, &offsets(&set))?;
        let u = -w;
        let worst = (0..set.len())
            .filter(|&k| set[k].kind != Bound::Fixed)
            .min_by(|&a, &b| u[a].total_cmp(&u[b]));
        match worst {
            Some(k) if u[k] < 0.0 => {
                set.remove(k);
                changes += 1;
                if changes > max_changes {
                    return None;
                }
            }
            _ => break (x, u),
        }
    };
    let mut u: Vec<f64> = u.iter().copied().collect();

    loop {
        let cx = &sc.c * &x;
        let mut in_set = vec![false; m];
        for w in &set {
            in_set[w.row] = true;
        }
        // Most violated side of any row outside the working set.
        let mut pick: Option<(Working, f64)> = None;
        for i in (0..m).filter(|&i| !in_set[i]) {
            let tol = 0.1 * eps * sc.evec[i];
            for kind in [Bound::Lower, Bound::Upper] {
                let w = Working { row: i, kind };
                let v = constraint_value(sc, &cx, w);
                if v < -tol && pick.map_or(true, |(_, best)| v / sc.evec[i] < best) {
                    pick = Some((w, v / sc.evec[i]));
                }
            }
        }
        let Some((p, _)) = pick else { break };
        let sign_p = if p.kind == Bound::Upper { -1.0 } else { 1.0 };
        let a_p = sc.c.row(p.row).transpose() * sign_p;

        let mut u_p = 0.0;
        loop {
            changes += 1;
            if changes > max_changes {
                return None;
            }
            let (zd, r) = kkt_solve(sc, &set, &a_p, &DVector::zeros(set.len()))?;
            let s_p = constraint_value(sc, &(&sc.c * &x), p);
            // Largest step keeping the working multipliers non-negative.
            let mut t2 = f64::INFINITY;
            let mut block = None;
            for (k, w) in set.iter().enumerate() {
                if w.kind != Bound::Fixed && r[k] > 0.0 {
                    let t = u[k] / r[k];
                    if t < t2 {
                        t2 = t;
                        block = Some(k);
                    }
                }
            }
            let curvature = a_p.dot(&zd);
            let t1 = if zd.amax() > 1e-14 && curvature > 0.0 { -s_p / curvature } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                // No step restores the row: the constraints contradict.
                return None;
            }
            if t1.is_finite() {
                x.axpy(t, &zd, 1.0);
            }
            for k in 0..set.len() {
                u[k] -= t * r[k];
            }
            u_p += t;
            if t1 <= t2 {
                set.push(p);
                u.push(u_p);
                break;
            }
            let k = block.expect("finite partial step has a blocking row");
            set.remove(k);
            u.remove(k);
        }
    }

    let mut y = DVector::zeros(m);
    for (k, w) in set.iter().enumerate() {
        y[w.row] = if w.kind == Bound::Upper { u[k] } else { -u[k] };
    }
    Some((x, y))
}

#[allow(clippy::too_many_arguments)]
fn solution(
    x: DVector<f64>,
    y: &DVector<f64>,
    n_eq: usize,
    status: QpStatus,
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
    polished: bool,
) -> QpSolution {
    let m = y.len();
    QpSolution {
        x,
        status,
        iterations,
        primal_residual,
        dual_residual,
        eq_multipliers: y.rows(0, n_eq).into_owned(),
        ineq_multipliers: -y.rows(n_eq, m - n_eq).into_owned(),
        polished,
    }
}

/// `‖H x + g + Cᵀ y‖∞` with the stacked constraint matrix.
fn stationarity(problem: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n_eq = problem.n_eq();
    let mut r = &problem.h * x + &problem.g;
    if n_eq > 0 {
        r.gemv_tr(1.0, &problem.a_eq, &y.rows(0, n_eq), 1.0);
    }
    if problem.n_ineq() > 0 {
        r.gemv_tr(1.0, &problem.a_ineq, &y.rows(n_eq, problem.n_ineq()), 1.0);
    }
    r.amax()
}

#[derive(Clone, Copy, Default)]
struct Residuals {
    primal: f64,
    dual: f64,
    eps_primal: f64,
    eps_dual: f64,
    // Scaled-space norms for the penalty update.
    prim_scaled: f64,
    dual_scaled: f64,
    prim_norm: f64,
    dual_norm: f64,
}

impl Residuals {
    fn converged(&self) -> bool {
        self.primal <= self.eps_primal && self.dual <= self.eps_dual
    }

    fn rho_ratio(&self) -> f64 {
        let p = self.prim_scaled / self.prim_norm.max(1e-12);
        let d = self.dual_scaled / self.dual_norm.max(1e-12);
        (p / d.max(1e-300)).sqrt()
    }
}

fn residuals(
    sc: &Scaled,
    x: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
    eps_abs: f64,
    eps_rel: f64,
) -> Residuals {
    let cx = &sc.c * x;
    let px = &sc.p * x;
    let cty = sc.c.tr_mul(y);
    let mut primal = 0.0f64;
    let mut cx_n = 0.0f64;
    let mut z_n = 0.0f64;
    let mut prim_scaled = 0.0f64;
    for i in 0..z.len() {
        let e = sc.evec[i];
        primal = primal.max(((cx[i] - z[i]) / e).abs());
        cx_n = cx_n.max((cx[i] / e).abs());
        z_n = z_n.max((z[i] / e).abs());
        prim_scaled = prim_scaled.max((cx[i] - z[i]).abs());
    }
    let mut dual = 0.0f64;
    let mut px_n = 0.0f64;
    let mut cty_n = 0.0f64;
    let mut q_n = 0.0f64;
    let mut dual_scaled = 0.0f64;
    for j in 0..x.len() {
        let dj = sc.dvec[j] * sc.cost;
        let r = px[j] + sc.q[j] + cty[j];
        dual = dual.max((r / dj).abs());
        px_n = px_n.max((px[j] / dj).abs());
        cty_n = cty_n.max((cty[j] / dj).abs());
        q_n = q_n.max((sc.q[j] / dj).abs());
        dual_scaled = dual_scaled.max(r.abs());
    }
    Residuals {
        primal,
        dual,
        eps_primal: eps_abs + eps_rel * cx_n.max(z_n),
        eps_dual: eps_abs + eps_rel * px_n.max(cty_n).max(q_n),
        prim_scaled,
        dual_scaled,
        prim_norm: cx.amax().max(z.amax()),
        dual_norm: px.amax().max(cty.amax()).max(sc.q.amax()),
    }
}

fn primal_infeasible(sc: &Scaled, dy: &DVector<f64>, eps: f64) -> bool {
    // Unscaled δy = E δỹ / c; the common factor 1/c cancels.
    let dy_u = dy.component_mul(&sc.evec);
    let norm = dy_u.amax();
    if norm < 1e-12 {
        return false;
    }
    let cty = sc.c.tr_mul(dy).component_div(&sc.dvec);
    if cty.amax() > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        let v = dy_u[i];
        let (l, u) = (sc.l[i] / sc.evec[i], sc.u[i] / sc.evec[i]);
        if v > 0.0 {
            if u.is_infinite() {
                if v > eps * norm {
                    return false;
                }
            } else {
                support += u * v;
            }
        } else if v < 0.0 {
            if l.is_infinite() {
                if -v > eps * norm {
                    return false;
                }
            } else {
                support += l * v;
            }
        }
    }
    support < -eps * norm
}

fn rho_vector(rho: f64, fixed: &[bool]) -> DVector<f64> {
    DVector::from_iterator(fixed.len(), fixed.iter().map(|&f| if f { rho * EQ_RHO_FACTOR } else { rho }))
}

fn factor(sc: &Scaled, rho: &DVector<f64>, sigma: f64) -> Cholesky<f64, Dyn> {
    let d = sc.q.len();
    let mut k = sc.p.clone();
    for j in 0..d {
        k[(j, j)] += sigma;
    }
    let mut rc = sc.c.clone();
    for (i, mut row) in rc.row_iter_mut().enumerate() {
        row *= rho[i];
    }
    k.gemm_tr(1.0, &sc.c, &rc, 1.0);
    // P is PSD and σ > 0, so K is positive definite.
    Cholesky::new(k).expect("ADMM system matrix is positive definite")
}

fn clamp_into(z: &mut DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) {
    for i in 0..z.len() {
        z[i] = z[i].clamp(l[i], u[i]);
    }
}

/// Modified Ruiz equilibration of the KKT matrix plus a cost scaling.
fn scale(problem: &QpProblem, passes: usize) -> Scaled {
    let d = problem.dim();
    let (n_eq, n_in) = (problem.n_eq(), problem.n_ineq());
    let m = n_eq + n_in;
    let mut c = DMatrix::zeros(m, d);
    c.rows_mut(0, n_eq).copy_from(&problem.a_eq);
    c.rows_mut(n_eq, n_in).copy_from(&problem.a_ineq);
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for i in 0..n_eq {
        l[i] = -problem.b_eq[i];
        u[i] = -problem.b_eq[i];
    }
    for i in 0..n_in {
        l[n_eq + i] = -problem.b_ineq[i];
        u[n_eq + i] = -problem.b_ineq[i] + problem.range[i];
    }
    let mut p = problem.h.clone();
    let mut q = problem.g.clone();
    let mut dvec = DVector::from_element(d, 1.0);
    let mut evec = DVector::from_element(m, 1.0);
    let mut cost = 1.0;

    let limit = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..passes {
        let mut dd = DVector::zeros(d);
        for j in 0..d {
            let mut n = p.column(j).amax();
            if m > 0 {
                n = n.max(c.column(j).amax());
            }
            dd[j] = 1.0 / limit(n).sqrt();
        }
        let mut ee = DVector::zeros(m);
        for i in 0..m {
            ee[i] = 1.0 / limit(c.row(i).amax()).sqrt();
        }
        for j in 0..d {
            for i in 0..d {
                p[(i, j)] *= dd[i] * dd[j];
            }
            for i in 0..m {
                c[(i, j)] *= ee[i] * dd[j];
            }
        }
        q.component_mul_assign(&dd);
        dvec.component_mul_assign(&dd);
        evec.component_mul_assign(&ee);

        let mean_col = (0..d).map(|j| p.column(j).amax()).sum::<f64>() / d.max(1) as f64;
        let gamma = 1.0 / limit(mean_col.max(q.amax()));
        p *= gamma;
        q *= gamma;
        cost *= gamma;
    }
    l.component_mul_assign(&evec);
    u.component_mul_assign(&evec);
    Scaled { p, q, c, l, u, dvec, evec, cost }
}
