//! The per-cycle control pipeline: operator command, admittance,
//! retargeting, interaction control and the plant.

use std::time::Instant;

use nalgebra::DVector;

use super::command::{CommandState, OperatorInput};
use super::log::{CycleStatus, Flags, LogRecord};
use super::oracle::{contact_margins, ContactMargins};
use super::plant::{Fidelity, Plant, SimState};
use super::scenario::Scenario;
use super::SimError;
use crate::admittance::{estimate_external_wrench, feasibility_bound, Admittance};
use crate::control::{ControlTarget, FicPhase, InteractionController};
use crate::model::{concat, inverse_kinematics, ChainState, DualArmModel, ObjectModel};
use crate::qp::QpProblem;
use crate::retarget::{initialize, InequalityRows, RetargetOutput, Retargeter, RowLabel};
use crate::spatial::{Pose, Wrench};

/// Re-solves allowed when the channel branches change at the rest state.
const BRANCH_PASSES: usize = 4;

/// Everything one control loop owns.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub dual: DualArmModel,
    pub object: ObjectModel,
    pub dt: f64,
    retargeter: Option<Retargeter>,
    controller: InteractionController,
    admittance: Option<Admittance>,
    plant: Plant,
    command: CommandState,
    target: ControlTarget,
    last_target: Pose,
    last_adapted: Pose,
    tau_limit: Vec<f64>,
    allowance: ContactMargins,
    cycle: usize,
    capture: bool,
    captured: Option<(QpProblem, InequalityRows)>,
    active: Vec<RowLabel>,
}

fn control_target(out: &RetargetOutput, object: &ObjectModel) -> ControlTarget {
    ControlTarget {
        q_d: out.q_d.clone(),
        x_l_d: out.x_l_d,
        x_r_d: out.x_r_d,
        relative_d: object.relative_grasp(),
        lambda_l: out.lambda_l,
        lambda_r: out.lambda_r,
    }
}

impl Pipeline {
    /// Solve the start posture by inverse kinematics, initialize the
    /// retargeter (or just the holding wrenches when adaptation is off) and
    /// let the plant settle under the initial targets.
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let dual = scenario.dual.clone();
        let object = scenario.object.clone();
        let x0 = scenario.start.object_pose();
        let ql = inverse_kinematics(&dual.left, &(x0 * object.grasp_left), &scenario.start.ik_seed_left, 1e-10, 10_000)
            .ok_or(SimError::StartIk("left"))?;
        let qr = inverse_kinematics(&dual.right, &(x0 * object.grasp_right), &scenario.start.seed_right(), 1e-10, 10_000)
            .ok_or(SimError::StartIk("right"))?;
        let q0 = concat(&DVector::from_vec(ql), &DVector::from_vec(qr));

        let (retargeter, target) = if scenario.adaptation {
            let rt = Retargeter::new(dual.clone(), object.clone(), q0.as_slice(), scenario.retarget.clone())?;
            let target = control_target(&rt.current(), &object);
            (Some(rt), target)
        } else {
            let st = initialize(&dual, &object, q0.as_slice(), &scenario.retarget)?;
            let (l, r) = dual.states(q0.as_slice());
            let target = ControlTarget {
                q_d: q0.clone(),
                x_l_d: l.end_effector,
                x_r_d: r.end_effector,
                relative_d: object.relative_grasp(),
                lambda_l: st.lambda_l,
                lambda_r: st.lambda_r,
            };
            (None, target)
        };

        let mut controller = InteractionController::new(scenario.control.clone());
        let mut plant = Plant::new(dual.clone(), object.clone(), q0.as_slice(), x0, scenario.plant.clone(), scenario.seed);
        {
            let c = &controller;
            let d = &dual;
            let t = &target;
            plant.settle(&|l, r, q, dq| c.evaluate_with(d, l, r, q, dq, t).0.total)?;
        }
        let st = plant.state();
        let (_, fic) = controller.evaluate(&dual, st.q.as_slice(), st.dq.as_slice(), &target);
        controller.commit(fic);

        let admittance = if scenario.admittance.enabled {
            Some(Admittance::new(scenario.admittance.params().map_err(SimError::Invalid)?))
        } else {
            None
        };
        let ratio = scenario.retarget.torque_ratio;
        let tau_limit = dual.tau_max().iter().map(|t| ratio * t).collect();
        let [af, at] = scenario.plant.sensor_noise;
        let allowance = ContactMargins::noise_allowance(&object, af, at);
        Ok(Self {
            dual,
            object,
            dt: scenario.dt,
            retargeter,
            controller,
            admittance,
            plant,
            command: CommandState::new(x0),
            target,
            last_target: x0,
            last_adapted: x0,
            tau_limit,
            allowance,
            cycle: 0,
            capture: false,
            captured: None,
            active: Vec::new(),
        })
    }

    pub fn time(&self) -> f64 {
        self.cycle as f64 * self.dt
    }

    /// Quasi-static plant step. The plant solve runs with every
    /// fractal-impedance channel held on one branch, so the closed loop is
    /// smooth; the branches are then re-read at the rest state and the solve
    /// repeated until they agree.
    fn settle_quasi_static(&mut self, dt: f64) -> bool {
        let c = &self.controller;
        let d = &self.dual;
        let t = &self.target;
        let phases_at = |st: &SimState| {
            let (_, fic) = c.evaluate(d, st.q.as_slice(), st.dq.as_slice(), t);
            fic.map(|s| s.phase)
        };
        let mut phases = phases_at(self.plant.state());
        let torque = |phases: [FicPhase; 12]| {
            move |l: &ChainState, r: &ChainState, q: &[f64], dq: &[f64]| {
                c.evaluate_on(d, l, r, q, dq, t, Some(&phases)).0.total
            }
        };
        if self.plant.step(&torque(phases), dt).is_err() {
            return false;
        }
        for _ in 0..BRANCH_PASSES {
            let now = phases_at(self.plant.state());
            if now == phases {
                break;
            }
            phases = now;
            if self.plant.settle(&torque(phases)).is_err() {
                return false;
            }
        }
        true
    }

    pub fn cycles_run(&self) -> usize {
        self.cycle
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn retargeter(&self) -> Option<&Retargeter> {
        self.retargeter.as_ref()
    }

    pub fn controller(&self) -> &InteractionController {
        &self.controller
    }

    pub fn control_target(&self) -> &ControlTarget {
        &self.target
    }

    /// Keep a copy of each cycle's QP, built before it is solved. The copy
    /// costs a second linearization per cycle and is outside the timed
    /// section.
    pub fn set_capture(&mut self, on: bool) {
        self.capture = on;
        if !on {
            self.captured = None;
        }
    }

    /// The last captured QP and its row labels.
    pub fn captured(&self) -> Option<&(QpProblem, InequalityRows)> {
        self.captured.as_ref()
    }

    /// Rows the last QP solution rests on.
    pub fn active_rows(&self) -> &[RowLabel] {
        &self.active
    }

    /// Per-joint torque limit `torque_ratio·τ_max` the oracle checks.
    pub fn tau_limit(&self) -> &[f64] {
        &self.tau_limit
    }

    pub fn reference(&self) -> &Pose {
        self.command.reference()
    }

    /// Run one control cycle under `input`, with `disturbance` (world axes,
    /// about the object's centre of mass) acting on the object.
    pub fn cycle(&mut self, input: &OperatorInput, disturbance: [f64; 6]) -> LogRecord {
        let time = self.time();
        let dt = self.dt;
        self.plant.set_external_wrench(Wrench::from_vector(&nalgebra::Vector6::from_row_slice(&disturbance)));
        let commanded = self.command.advance(input, dt);

        let clock = Instant::now();
        let st = self.plant.state();
        let external =
            estimate_external_wrench(&self.dual, &self.object, st.q.as_slice(), &st.measured_l, &st.measured_r);
        let target = match &mut self.admittance {
            Some(adm) => {
                let bound = feasibility_bound(&self.last_target, &self.last_adapted, dt);
                adm.update(&external, &Wrench::zero(), dt, Some(bound));
                adm.apply(&commanded)
            }
            None => commanded,
        };
        let mut compute = clock.elapsed();
        if self.capture {
            self.captured = self.retargeter.as_ref().map(|rt| rt.problem(&target));
        }
        let clock = Instant::now();
        let (adapted, status, clamped, qp_iterations) = match &mut self.retargeter {
            Some(rt) => match rt.step(&target) {
                Ok(out) => {
                    self.target = control_target(&out, &self.object);
                    self.active.clone_from(&out.active);
                    (out.object_pose, CycleStatus::Qp(out.qp_status), out.clamped, out.qp_iterations)
                }
                Err(_) => (rt.current().object_pose, CycleStatus::InfeasibleStart, true, 0),
            },
            None => {
                self.target.x_l_d = target * self.object.grasp_left;
                self.target.x_r_d = target * self.object.grasp_right;
                (target, CycleStatus::Disabled, false, 0)
            }
        };
        compute += clock.elapsed();

        let dynamic = self.plant.config.fidelity == Fidelity::PenaltyDynamics;
        let (tau, plant_ok) = if dynamic {
            let clock = Instant::now();
            let st = self.plant.state();
            let (terms, fic) = self.controller.evaluate(&self.dual, st.q.as_slice(), st.dq.as_slice(), &self.target);
            self.controller.commit(fic);
            compute += clock.elapsed();
            let total = terms.total.clone();
            let ok = self.plant.step(&|_, _, _, _| total.clone(), dt).is_ok();
            (terms.total, ok)
        } else {
            let ok = self.settle_quasi_static(dt);
            let clock = Instant::now();
            let st = self.plant.state();
            let (terms, fic) = self.controller.evaluate(&self.dual, st.q.as_slice(), st.dq.as_slice(), &self.target);
            self.controller.commit(fic);
            compute += clock.elapsed();
            (terms.total, ok)
        };

        let st = self.plant.state();
        let margins = [contact_margins(&st.measured_l, &self.object), contact_margins(&st.measured_r, &self.object)];
        let flags = Flags {
            torque_violation: tau.iter().zip(&self.tau_limit).any(|(t, l)| t.abs() > l + 1e-9),
            slippage: (0..2).any(|k| st.engaged[k] && margins[k].violated(&self.allowance)),
            crash: !plant_ok || !st.engaged.iter().all(|e| *e),
        };
        let record = LogRecord {
            time,
            commanded,
            target,
            adapted,
            object: st.object,
            tau: tau.as_slice().to_vec(),
            tau_limit: self.tau_limit.clone(),
            lambda_l: st.measured_l,
            lambda_r: st.measured_r,
            external,
            margins,
            flags,
            clamped,
            status,
            qp_iterations,
            compute_us: compute.as_secs_f64() * 1e6,
        };
        self.last_target = target;
        self.last_adapted = adapted;
        self.cycle += 1;
        record
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<LogRecord>,
    pub runtime_s: f64,
}

/// Run a scenario from start to end. Oracle flags are recorded, never
/// fatal.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, SimError> {
    let clock = Instant::now();
    let mut pipeline = Pipeline::new(scenario)?;
    let n = scenario.cycles();
    let mut records = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * scenario.dt;
        records.push(pipeline.cycle(&scenario.input_at(t), scenario.disturbance_at(t)));
    }
    Ok(RunOutput { records, runtime_s: clock.elapsed().as_secs_f64() })
}
