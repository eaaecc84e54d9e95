//! Dual-arm manipulation control: whole-body retargeting of object-pose
//! commands through a sequential QP, object-level admittance, fractal
//! impedance torque control and a quasi-static simulator to run it all.

pub mod admittance;
pub mod bridge;
pub mod control;
pub mod model;
pub mod qp;
pub mod retarget;
pub mod sim;
pub mod spatial;

pub use admittance::{Admittance, AdmittanceConfig, AdmittanceParams, DesiredWrenchMode};
pub use control::{ControlParams, ControlTarget, InteractionController, NlpdParams, PdParams};
pub use model::{DualArmModel, ObjectModel};
pub use qp::{QpProblem, QpSettings, QpSolution, QpStatus};
pub use retarget::{RetargetConfig, RetargetOutput, Retargeter};
pub use sim::{run_scenario, LogRecord, Pipeline, Scenario, SimError};
pub use spatial::{Pose, Twist, Wrench};
