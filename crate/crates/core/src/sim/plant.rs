//! Dual-arm plant holding one object through two stiff contact springs.
//!
//! The quasi-static plant solves, every cycle, for the joint configuration
//! and object pose at which the commanded torque, gravity and the contact
//! springs balance. The torque is evaluated at each candidate
//! configuration, so the solve finds the closed-loop rest state of the
//! controller; a fixed torque vector has no unique rest state because
//! gravity softens the arms. The penalty-dynamics plant integrates the same
//! model forward in time instead.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{inverse_dynamics, mass_matrix_arm, ChainState, DualArmModel, ObjectModel, GRAVITY};
use crate::spatial::{rotation_log, Pose, Twist, Wrench};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fidelity {
    #[default]
    QuasiStatic,
    PenaltyDynamics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub fidelity: Fidelity,
    /// Contact spring stiffness: translational (N/m), rotational (N·m/rad).
    pub contact_stiffness: [f64; 2],
    /// Contact damping for the dynamic plant: N·s/m, N·m·s/rad.
    pub contact_damping: [f64; 2],
    /// Integration substeps per control cycle for the dynamic plant.
    pub substeps: usize,
    /// Residual tolerance of the static solve (N, N·m).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Uniform noise on the measured wrenches: ±force (N), ±torque (N·m).
    /// Zero disables it.
    pub sensor_noise: [f64; 2],
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            fidelity: Fidelity::QuasiStatic,
            contact_stiffness: [1e5, 1e3],
            contact_damping: [600.0, 5.0],
            substeps: 10,
            tolerance: 1e-8,
            max_iterations: 40,
            sensor_noise: [0.0, 0.0],
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.contact_stiffness.iter().any(|k| !(*k > 0.0)) {
            return Err("plant.contact_stiffness must be positive".into());
        }
        if self.contact_damping.iter().any(|c| !(*c >= 0.0)) {
            return Err("plant.contact_damping must be non-negative".into());
        }
        if self.substeps == 0 {
            return Err("plant.substeps must be at least 1".into());
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err("plant.tolerance and plant.max_iterations must be positive".into());
        }
        if self.sensor_noise.iter().any(|a| !(*a >= 0.0)) {
            return Err("plant.sensor_noise must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub q: DVector<f64>,
    /// Identically zero in the quasi-static plant.
    pub dq: DVector<f64>,
    /// Object frame (origin at the centre of mass) in the world.
    pub object: Pose,
    /// Object twist about its origin, world axes.
    pub object_twist: Twist,
    /// Wrenches the object exerts on each hand, contact frame, noise free.
    pub contact_l: Wrench,
    pub contact_r: Wrench,
    /// The same wrenches as a force sensor reports them.
    pub measured_l: Wrench,
    pub measured_r: Wrench,
    /// Whether each hand is still pressed against the object.
    pub engaged: [bool; 2],
    pub time: f64,
}

impl SimState {
    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.dq.iter()).all(|v| v.is_finite())
            && self.object.is_finite()
            && self.object_twist.is_finite()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("contact springs did not settle (residual {residual:.3e} after {iterations} iterations)")]
    Diverged { residual: f64, iterations: usize },
    #[error("plant state became non-finite")]
    NonFinite,
}

/// Torque the actuators apply, given both chain states, `q` and `q̇`.
pub type TorqueFn<'a> = dyn Fn(&ChainState, &ChainState, &[f64], &[f64]) -> DVector<f64> + 'a;

struct ContactEval {
    /// Contact-frame components.
    local: Wrench,
    /// World axes, about the hand origin.
    world: Wrench,
    engaged: bool,
}

/// Width of the band over which a contact engages (m).
const ENGAGE_BAND: f64 = 1e-5;

/// Spring (and optional damper) between a hand frame and the object's
/// contact frame. The hand is pushed out along the contact normal and back
/// toward the contact frame. The normal law is a softplus of the
/// penetration and the other five springs are scaled by the matching
/// sigmoid, so the contact fades out smoothly over `ENGAGE_BAND` as the hand
/// lifts off; past a few bands it is the plain linear spring.
fn contact(hand: &Pose, grasp: &Pose, k: [f64; 2], damper: Option<([f64; 2], Vector6<f64>)>) -> ContactEval {
    let rel = grasp.inverse() * *hand;
    let d = rel.translation;
    let theta = rotation_log(&rel.rotation);
    let rg = grasp.rotation;
    let u = -d.z / ENGAGE_BAND;
    let softplus = if u > 30.0 { u } else { u.exp().ln_1p() };
    let s = 0.5 * (1.0 + (0.5 * u).tanh());
    let mut f = Vector3::new(-k[0] * d.x * s, -k[0] * d.y * s, k[0] * ENGAGE_BAND * softplus);
    let mut t = -k[1] * s * theta;
    if let Some((c, v)) = damper {
        let w = rg.inverse() * Vector3::new(v[0], v[1], v[2]);
        let l = rg.inverse() * Vector3::new(v[3], v[4], v[5]);
        f -= c[0] * s * l;
        t -= c[1] * s * w;
        f.z = f.z.max(0.0);
    }
    let world = Wrench { torque: rg * t, force: rg * f };
    ContactEval { local: world.rotated(&hand.rotation.inverse()), world, engaged: d.z <= 0.0 }
}

/// Wrench a hand wrench applies back on the object, about the object origin.
fn on_object(hand: &Pose, object: &Pose, w: &Wrench) -> Vector6<f64> {
    let arm = hand.translation - object.translation;
    let t = -w.torque - arm.cross(&w.force);
    Vector6::new(t.x, t.y, t.z, -w.force.x, -w.force.y, -w.force.z)
}

const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Plant {
    pub dual: DualArmModel,
    pub object_model: ObjectModel,
    pub config: PlantConfig,
    state: SimState,
    /// External wrench on the object, world axes, about its origin.
    external: Wrench,
    jacobian: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    rng: ChaCha8Rng,
}

impl Plant {
    pub fn new(
        dual: DualArmModel,
        object_model: ObjectModel,
        q: &[f64],
        object: Pose,
        config: PlantConfig,
        seed: u64,
    ) -> Self {
        let n = dual.dof();
        let state = SimState {
            q: DVector::from_column_slice(q),
            dq: DVector::zeros(n),
            object,
            object_twist: Twist::zero(),
            contact_l: Wrench::zero(),
            contact_r: Wrench::zero(),
            measured_l: Wrench::zero(),
            measured_r: Wrench::zero(),
            engaged: [true, true],
            time: 0.0,
        };
        Self { dual, object_model, config, state, external: Wrench::zero(), jacobian: None, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn set_external_wrench(&mut self, w: Wrench) {
        self.external = w;
    }

    pub fn external_wrench(&self) -> Wrench {
        self.external
    }

    /// Advance one control cycle. On error the state is left unchanged apart
    /// from the clock.
    pub fn step(&mut self, torque: &TorqueFn<'_>, dt: f64) -> Result<(), PlantError> {
        let result = match self.config.fidelity {
            Fidelity::QuasiStatic => self.settle(torque),
            Fidelity::PenaltyDynamics => self.integrate(torque, dt),
        };
        self.state.time += dt;
        result
    }

    /// Solve for the static rest state under the torque law, starting from
    /// the current state.
    pub fn settle(&mut self, torque: &TorqueFn<'_>) -> Result<(), PlantError> {
        let n = self.dual.dof();
        let base = self.state.object;
        let mut x = DVector::zeros(n + 6);
        x.rows_mut(0, n).copy_from(&self.state.q);
        let mut r = self.residual(&x, &base, torque);
        let mut fresh = false;
        let mut iterations = 0;
        while r.amax() > self.config.tolerance {
            if iterations >= self.config.max_iterations {
                break;
            }
            iterations += 1;
            if self.jacobian.is_none() {
                self.jacobian = Some(self.fd_jacobian(&x, &base, torque).lu());
                fresh = true;
            }
            let dx = match self.jacobian.as_ref().and_then(|lu| lu.solve(&r)) {
                Some(dx) if dx.iter().all(|v| v.is_finite()) => -dx,
                _ => {
                    self.jacobian = None;
                    if fresh {
                        break;
                    }
                    continue;
                }
            };
            let mut scale = (0.1 / dx.amax()).min(1.0);
            let mut accepted = false;
            for _ in 0..12 {
                let xn = &x + &dx * scale;
                let rn = self.residual(&xn, &base, torque);
                if rn.amax() < r.amax() {
                    // A stale Jacobian that only just helps is refreshed.
                    if !fresh && rn.amax() > 0.5 * r.amax() {
                        self.jacobian = None;
                    }
                    x = xn;
                    r = rn;
                    accepted = true;
                    break;
                }
                if !fresh {
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                self.jacobian = None;
                if fresh {
                    break;
                }
            }
            fresh = false;
        }
        if !(r.amax() <= self.config.tolerance) {
            self.jacobian = None;
            return Err(PlantError::Diverged { residual: r.amax(), iterations });
        }
        self.commit_static(&x, &base);
        Ok(())
    }

    fn object_at(base: &Pose, x: &DVector<f64>, n: usize) -> Pose {
        base.perturbed(&Vector6::from_iterator(x.rows(n, 6).iter().copied()))
    }

    fn residual(&self, x: &DVector<f64>, base: &Pose, torque: &TorqueFn<'_>) -> DVector<f64> {
        let n = self.dual.dof();
        let n_l = self.dual.left.dof();
        let q = &x.as_slice()[..n];
        let object = Self::object_at(base, x, n);
        let (left, right) = self.dual.states(q);
        let zeros = vec![0.0; n];
        let tau = torque(&left, &right, q, &zeros);

        let mut r = DVector::zeros(n + 6);
        let mut wrench_sum = self.gravity_and_external();
        let k = self.config.contact_stiffness;
        for (arm, state, grasp, off, dof) in [
            (&self.dual.left, &left, &self.object_model.grasp_left, 0, n_l),
            (&self.dual.right, &right, &self.object_model.grasp_right, n_l, n - n_l),
        ] {
            let c = contact(&state.end_effector, &(object * *grasp), k, None);
            let z = &zeros[..dof];
            // RNEA gives G − Jᵀw at rest.
            let bias = inverse_dynamics(arm, state, z, z, true, Some(&c.world));
            for i in 0..dof {
                r[off + i] = tau[off + i] - bias[i];
            }
            wrench_sum += on_object(&state.end_effector, &object, &c.world);
        }
        r.rows_mut(n, 6).copy_from(&wrench_sum);
        r
    }

    fn gravity_and_external(&self) -> Vector6<f64> {
        let mut w = self.external.to_vector();
        w[5] -= self.object_model.mass * GRAVITY;
        w
    }

    /// Central differences, which stay non-singular when a contact sits
    /// exactly at zero penetration.
    fn fd_jacobian(&self, x: &DVector<f64>, base: &Pose, torque: &TorqueFn<'_>) -> DMatrix<f64> {
        let m = x.len();
        let mut j = DMatrix::zeros(m, m);
        let mut xp = x.clone();
        for c in 0..m {
            xp[c] = x[c] + FD_STEP;
            let rp = self.residual(&xp, base, torque);
            xp[c] = x[c] - FD_STEP;
            let rm = self.residual(&xp, base, torque);
            xp[c] = x[c];
            j.set_column(c, &((rp - rm) / (2.0 * FD_STEP)));
        }
        j
    }

    fn commit_static(&mut self, x: &DVector<f64>, base: &Pose) {
        let n = self.dual.dof();
        let object = Self::object_at(base, x, n);
        let q = &x.as_slice()[..n];
        let (left, right) = self.dual.states(q);
        let k = self.config.contact_stiffness;
        let cl = contact(&left.end_effector, &(object * self.object_model.grasp_left), k, None);
        let cr = contact(&right.end_effector, &(object * self.object_model.grasp_right), k, None);
        self.state.q.copy_from_slice(q);
        self.state.dq.fill(0.0);
        self.state.object = object;
        self.state.object_twist = Twist::zero();
        self.record_contacts(cl, cr);
    }

    fn record_contacts(&mut self, cl: ContactEval, cr: ContactEval) {
        self.state.engaged = [cl.engaged, cr.engaged];
        self.state.contact_l = cl.local;
        self.state.contact_r = cr.local;
        self.state.measured_l = self.noisy(&cl.local);
        self.state.measured_r = self.noisy(&cr.local);
    }

    fn noisy(&mut self, w: &Wrench) -> Wrench {
        let [af, at] = self.config.sensor_noise;
        if af == 0.0 && at == 0.0 {
            return *w;
        }
        let mut v = w.to_vector();
        for k in 0..6 {
            let a = if k < 3 { at } else { af };
            if a > 0.0 {
                v[k] += self.rng.random_range(-a..=a);
            }
        }
        Wrench::from_vector(&v)
    }

    /// Semi-implicit Euler with the torque held over the cycle.
    fn integrate(&mut self, torque: &TorqueFn<'_>, dt: f64) -> Result<(), PlantError> {
        let n = self.dual.dof();
        let n_l = self.dual.left.dof();
        let h = dt / self.config.substeps as f64;
        let mut q = self.state.q.clone();
        let mut dq = self.state.dq.clone();
        let mut object = self.state.object;
        let mut w_o = self.state.object_twist.angular;
        let mut v_o = self.state.object_twist.linear;
        let tau = {
            let (l, r) = self.dual.states(q.as_slice());
            torque(&l, &r, q.as_slice(), dq.as_slice())
        };
        let mass = self.object_model.mass.max(1e-3);
        let k = self.config.contact_stiffness;
        let c = self.config.contact_damping;
        let mut last = None;
        for _ in 0..self.config.substeps {
            let (left, right) = self.dual.states(q.as_slice());
            let mut wrench = self.gravity_and_external();
            let mut ddq = DVector::zeros(n);
            let mut evals = Vec::with_capacity(2);
            for (arm, state, grasp, off, dof) in [
                (&self.dual.left, &left, &self.object_model.grasp_left, 0, n_l),
                (&self.dual.right, &right, &self.object_model.grasp_right, n_l, n - n_l),
            ] {
                let dqa = dq.rows(off, dof).into_owned();
                let hand = state.jacobian_world() * &dqa;
                let lever = state.end_effector.translation - object.translation;
                let mut rel = Vector6::zeros();
                let wh = Vector3::new(hand[0], hand[1], hand[2]);
                let vh = Vector3::new(hand[3], hand[4], hand[5]);
                rel.fixed_rows_mut::<3>(0).copy_from(&(wh - w_o));
                rel.fixed_rows_mut::<3>(3).copy_from(&(vh - v_o - w_o.cross(&lever)));
                let e = contact(&state.end_effector, &(object * *grasp), k, Some((c, rel)));
                let qa = &q.as_slice()[off..off + dof];
                let bias = inverse_dynamics(arm, state, dqa.as_slice(), &vec![0.0; dof], true, Some(&e.world));
                let rhs = tau.rows(off, dof) - bias;
                let m = mass_matrix_arm(arm, qa);
                let acc = m.cholesky().ok_or(PlantError::NonFinite)?.solve(&rhs);
                ddq.rows_mut(off, dof).copy_from(&acc);
                wrench += on_object(&state.end_effector, &object, &e.world);
                evals.push(e);
            }
            let r = object.rotation.matrix();
            let inertia: Matrix3<f64> = r * Matrix3::from_diagonal(&self.object_model.inertia_diag) * r.transpose();
            let torque_o = Vector3::new(wrench[0], wrench[1], wrench[2]) - w_o.cross(&(inertia * w_o));
            let dw = inertia.try_inverse().ok_or(PlantError::NonFinite)? * torque_o;
            let dv = Vector3::new(wrench[3], wrench[4], wrench[5]) / mass;

            dq += &ddq * h;
            q += &dq * h;
            w_o += dw * h;
            v_o += dv * h;
            let mut delta = Vector6::zeros();
            delta.fixed_rows_mut::<3>(0).copy_from(&(w_o * h));
            delta.fixed_rows_mut::<3>(3).copy_from(&(v_o * h));
            object = object.perturbed(&delta);
            let cr = evals.pop();
            let cl = evals.pop();
            last = cl.zip(cr);
        }
        if !(q.iter().chain(dq.iter()).all(|v| v.is_finite()) && object.is_finite() && w_o.iter().chain(v_o.iter()).all(|v| v.is_finite())) {
            return Err(PlantError::NonFinite);
        }
        self.state.q = q;
        self.state.dq = dq;
        self.state.object = object;
        self.state.object_twist = Twist { angular: w_o, linear: v_o };
        if let Some((cl, cr)) = last {
            self.record_contacts(cl, cr);
        }
        Ok(())
    }
}
