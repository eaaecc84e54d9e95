//! Scenario files: models, start posture, command stream, disturbances and
//! the assertions a run is expected to satisfy.
//!
//! ```toml
//! name = "translation"
//! model = "../models/franka-like.toml"     # relative to this file
//! control = "../config/control.toml"       # optional
//! duration = 8.0
//! dt = 0.001
//! adaptation = true
//! seed = 1
//!
//! [start]
//! object_position = [0.49, -0.3, 0.56]
//! object_rpy_deg = [0.0, 0.0, 0.0]
//! ik_seed_left = [1.2, -0.2, -1.0, -2.13, -1.75, 1.16, 0.0]
//!
//! [object]                                  # overrides of the model file
//! mass = 8.0
//! com_offset = [0.0, 0.0, 0.05]
//!
//! [retarget]                                # any RetargetConfig field
//! w_pose = [50.0, 50.0, 50.0, 500.0, 500.0, 500.0]
//!
//! [[commands]]
//! t = 0.0
//! command = "twist"                         # or "pose"
//! value = [0.0, 0.0, 0.0, 0.05, 0.0, 0.0]   # (angular; linear), world axes
//!
//! [[disturbances]]
//! start = 1.0
//! end = 2.0
//! wrench = [0.0, 0.0, 0.0, 0.0, 0.0, 5.0]   # on the object, world axes
//!
//! [checks]
//! max_torque_violations = 0
//! plateau = [{ quantity = "x", window = [6.0, 8.0], max_variation = 0.002, min_command_growth = 0.05 }]
//! ```

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::command::{CommandMode, OperationMode, OperatorInput};
use super::log::LogRecord;
use super::plant::PlantConfig;
use super::SimError;
use crate::admittance::AdmittanceConfig;
use crate::control::{ControlFile, ControlParams};
use crate::model::{load_model, DualArmModel, ObjectModel};
use crate::retarget::RetargetConfig;
use crate::spatial::Pose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    pub object_position: [f64; 3],
    #[serde(default)]
    pub object_rpy_deg: [f64; 3],
    /// Inverse-kinematics seed for the left arm.
    #[serde(default)]
    pub ik_seed_left: Vec<f64>,
    /// Defaults to the left seed with the odd joints (1, 3, 5, 7) negated.
    #[serde(default)]
    pub ik_seed_right: Option<Vec<f64>>,
}

impl StartSpec {
    pub fn object_pose(&self) -> Pose {
        let [r, p, y] = self.object_rpy_deg.map(f64::to_radians);
        Pose::new(
            nalgebra::Rotation3::from_euler_angles(r, p, y),
            Vector3::from_row_slice(&self.object_position),
        )
    }

    pub fn seed_right(&self) -> Vec<f64> {
        self.ik_seed_right.clone().unwrap_or_else(|| mirrored(&self.ik_seed_left))
    }
}

/// Seed for the mirror-image arm.
pub fn mirrored(seed: &[f64]) -> Vec<f64> {
    seed.iter().enumerate().map(|(i, v)| if i % 2 == 0 { -v } else { *v }).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectOverrides {
    pub mass: Option<f64>,
    /// Centre-of-mass shift in the object frame (m).
    pub com_offset: Option<[f64; 3]>,
    pub friction_mu: Option<f64>,
}

impl ObjectOverrides {
    pub fn apply(&self, mut object: ObjectModel) -> ObjectModel {
        if let Some(m) = self.mass {
            object.mass = m;
        }
        if let Some(mu) = self.friction_mu {
            object.friction_mu = mu;
        }
        if let Some(c) = self.com_offset {
            object = object.with_com_offset(Vector3::from_row_slice(&c));
        }
        object
    }
}

/// Input held from `t` until the next command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedCommand {
    pub t: f64,
    #[serde(default)]
    pub mode: OperationMode,
    #[serde(default)]
    pub command: CommandMode,
    pub value: [f64; 6],
}

impl TimedCommand {
    pub fn input(&self) -> OperatorInput {
        OperatorInput { mode: self.mode, command: self.command, value: self.value }
    }
}

/// External wrench on the object over `[start, end)`, world axes, about the
/// object's centre of mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub start: f64,
    pub end: f64,
    pub wrench: [f64; 6],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    X,
    Y,
    Z,
    Roll,
    Pitch,
    Yaw,
}

impl Quantity {
    pub fn of(&self, pose: &Pose) -> f64 {
        let (r, p, y) = pose.rotation.euler_angles();
        match self {
            Quantity::X => pose.translation.x,
            Quantity::Y => pose.translation.y,
            Quantity::Z => pose.translation.z,
            Quantity::Roll => r,
            Quantity::Pitch => p,
            Quantity::Yaw => y,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Quantity::X => "x",
            Quantity::Y => "y",
            Quantity::Z => "z",
            Quantity::Roll => "roll",
            Quantity::Pitch => "pitch",
            Quantity::Yaw => "yaw",
        }
    }
}

/// The adapted quantity stays within `max_variation` over `window` while
/// the commanded one grows by at least `min_command_growth`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauCheck {
    pub quantity: Quantity,
    pub window: [f64; 2],
    pub max_variation: f64,
    #[serde(default)]
    pub min_command_growth: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checks {
    pub max_torque_violations: Option<usize>,
    pub max_slippage: Option<usize>,
    pub max_crashes: Option<usize>,
    /// Cycles with any oracle flag raised.
    pub min_flagged_cycles: Option<usize>,
    /// Lower bound on every contact margin (friction, CoP, torsion).
    pub min_contact_margin: Option<f64>,
    pub max_runtime_s: Option<f64>,
    /// Adapted vs commanded translation, every cycle (m).
    pub max_tracking_error: Option<f64>,
    pub plateau: Vec<PlateauCheck>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Checks {
    pub fn is_empty(&self) -> bool {
        *self == Checks::default()
    }

    pub fn evaluate(&self, records: &[LogRecord], runtime_s: f64) -> Vec<CheckResult> {
        let mut out = Vec::new();
        let count = |f: &dyn Fn(&LogRecord) -> bool| records.iter().filter(|r| f(r)).count();
        let torque = count(&|r| r.flags.torque_violation);
        let slip = count(&|r| r.flags.slippage);
        let crash = count(&|r| r.flags.crash);
        let flagged = count(&|r| r.flags.any());
        let mut push = |name: &str, passed: bool, detail: String| {
            out.push(CheckResult { name: name.to_string(), passed, detail })
        };
        if let Some(max) = self.max_torque_violations {
            push("max_torque_violations", torque <= max, format!("{torque} cycles (allowed {max})"));
        }
        if let Some(max) = self.max_slippage {
            push("max_slippage", slip <= max, format!("{slip} cycles (allowed {max})"));
        }
        if let Some(max) = self.max_crashes {
            push("max_crashes", crash <= max, format!("{crash} cycles (allowed {max})"));
        }
        if let Some(min) = self.min_flagged_cycles {
            push(
                "min_flagged_cycles",
                flagged >= min,
                format!("{flagged} flagged cycles ({torque} torque, {slip} slippage, {crash} crash; required {min})"),
            );
        }
        if let Some(min) = self.min_contact_margin {
            let worst = records.iter().map(|r| r.min_margin()).fold(f64::INFINITY, f64::min);
            push("min_contact_margin", worst >= min, format!("worst margin {worst:.4e} (required {min})"));
        }
        if let Some(max) = self.max_runtime_s {
            push("max_runtime_s", runtime_s <= max, format!("{runtime_s:.2} s (allowed {max})"));
        }
        if let Some(max) = self.max_tracking_error {
            let worst = records
                .iter()
                .map(|r| (r.adapted.translation - r.commanded.translation).norm())
                .fold(0.0, f64::max);
            push("max_tracking_error", worst <= max, format!("worst {worst:.3e} m (allowed {max})"));
        }
        for p in &self.plateau {
            let name = format!("plateau[{}]", p.quantity.as_str());
            let window: Vec<&LogRecord> =
                records.iter().filter(|r| r.time >= p.window[0] - 1e-9 && r.time <= p.window[1] + 1e-9).collect();
            let (Some(first), Some(last)) = (window.first(), window.last()) else {
                push(&name, false, "no records in the window".into());
                continue;
            };
            let values = window.iter().map(|r| p.quantity.of(&r.adapted));
            let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let variation = hi - lo;
            let growth = p.quantity.of(&last.commanded) - p.quantity.of(&first.commanded);
            push(
                &name,
                variation <= p.max_variation && growth.abs() >= p.min_command_growth,
                format!(
                    "adapted varies {variation:.4e} (allowed {}), command grows {growth:.4e} (required {})",
                    p.max_variation, p.min_command_growth
                ),
            );
        }
        out
    }
}

/// A scenario with its models loaded and overrides applied.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub dual: DualArmModel,
    pub object: ObjectModel,
    pub control: ControlParams,
    pub retarget: RetargetConfig,
    pub admittance: AdmittanceConfig,
    pub plant: PlantConfig,
    pub duration: f64,
    pub dt: f64,
    pub adaptation: bool,
    pub seed: u64,
    pub start: StartSpec,
    pub commands: Vec<TimedCommand>,
    pub disturbances: Vec<Disturbance>,
    pub checks: Checks,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    name: String,
    #[serde(default)]
    description: String,
    model: PathBuf,
    #[serde(default)]
    control: Option<PathBuf>,
    duration: f64,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default = "default_true")]
    adaptation: bool,
    #[serde(default)]
    seed: u64,
    start: StartSpec,
    #[serde(default)]
    object: ObjectOverrides,
    #[serde(default)]
    retarget: RetargetConfig,
    #[serde(default)]
    admittance: AdmittanceConfig,
    #[serde(default)]
    plant: PlantConfig,
    #[serde(default)]
    commands: Vec<TimedCommand>,
    #[serde(default)]
    disturbances: Vec<Disturbance>,
    #[serde(default)]
    checks: Checks,
}

fn default_dt() -> f64 {
    0.001
}

fn default_true() -> bool {
    true
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
            .map_err(|e| e.in_file(path))
    }

    /// Parse scenario text; relative paths resolve against `dir`.
    pub fn parse(text: &str, dir: &Path) -> Result<Self, SimError> {
        let doc: ScenarioDoc = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        let model = load_model(dir.join(&doc.model))?;
        let control = match &doc.control {
            Some(p) => ControlFile::load(dir.join(p)).map_err(SimError::Invalid)?,
            None => ControlFile::default(),
        };
        let control = control.params().map_err(SimError::Invalid)?;
        let mut retarget = doc.retarget;
        retarget.dt = doc.dt;
        let scenario = Scenario {
            name: doc.name,
            description: doc.description,
            object: doc.object.apply(model.object),
            dual: model.dual,
            control,
            retarget,
            admittance: doc.admittance,
            plant: doc.plant,
            duration: doc.duration,
            dt: doc.dt,
            adaptation: doc.adaptation,
            seed: doc.seed,
            start: doc.start,
            commands: doc.commands,
            disturbances: doc.disturbances,
            checks: doc.checks,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        self.dual.validate()?;
        self.object.validate()?;
        self.retarget.validate().map_err(SimError::Invalid)?;
        self.admittance.params().map_err(SimError::Invalid)?;
        self.plant.validate().map_err(SimError::Invalid)?;
        self.control.validate().map_err(SimError::Invalid)?;
        if (self.retarget.dt - self.dt).abs() > 1e-15 {
            return bad("retarget.dt must equal the scenario dt".into());
        }
        let n_l = self.dual.left.dof();
        if self.start.ik_seed_left.len() != n_l || self.start.seed_right().len() != self.dual.right.dof() {
            return bad(format!("start IK seeds must have {n_l} entries per arm"));
        }
        for (i, c) in self.commands.iter().enumerate() {
            if !c.t.is_finite() || !c.value.iter().all(|v| v.is_finite()) {
                return bad(format!("commands[{i}] is not finite"));
            }
            if i > 0 && c.t < self.commands[i - 1].t {
                return bad(format!("commands[{i}] is earlier than the command before it"));
            }
            if c.mode == OperationMode::Independent {
                return bad(format!("commands[{i}]: independent mode cannot move a held object; use bimanual"));
            }
        }
        for (i, d) in self.disturbances.iter().enumerate() {
            if !(d.start <= d.end) || !d.wrench.iter().all(|v| v.is_finite()) {
                return bad(format!("disturbances[{i}] needs start <= end and a finite wrench"));
            }
        }
        Ok(())
    }

    pub fn cycles(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Operator input in force at time `t`; zero twist before the first one.
    pub fn input_at(&self, t: f64) -> OperatorInput {
        let k = self.commands.partition_point(|c| c.t <= t + 1e-12);
        if k == 0 {
            OperatorInput::hold()
        } else {
            self.commands[k - 1].input()
        }
    }

    /// Sum of the disturbances active at `t`.
    pub fn disturbance_at(&self, t: f64) -> [f64; 6] {
        let mut w = [0.0; 6];
        for d in &self.disturbances {
            if t + 1e-12 >= d.start && t + 1e-12 < d.end {
                for k in 0..6 {
                    w[k] += d.wrench[k];
                }
            }
        }
        w
    }
}
