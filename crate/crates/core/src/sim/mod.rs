//! Quasi-static dual-arm simulation: operator commands, the full control
//! pipeline, a contact-spring plant and the oracles that judge each cycle.

mod command;
mod log;
mod oracle;
mod pipeline;
mod plant;
mod scenario;
mod timing;

use std::path::Path;

use thiserror::Error;

use crate::model::ModelError;
use crate::retarget::RetargetError;

pub use command::{operator_command, CommandMode, CommandState, OperationMode, OperatorInput};
pub use log::{csv_header, csv_row, pose_fields, write_csv, CycleStatus, Flags, LogRecord};
pub use oracle::{contact_margins, slippage_oracle, ContactMargins};
pub use pipeline::{run_scenario, Pipeline, RunOutput};
pub use plant::{Fidelity, Plant, PlantConfig, PlantError, SimState, TorqueFn};
pub use timing::{cycle_times, percentile, TimingReport};
pub use scenario::{
    mirrored, CheckResult, Checks, Disturbance, ObjectOverrides, PlateauCheck, Quantity, Scenario, StartSpec,
    TimedCommand,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no inverse-kinematics solution for the {0} hand at the start pose")]
    StartIk(&'static str),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error("plant failed to settle at the start: {0}")]
    Plant(#[from] PlantError),
    #[error("{file}: {source}")]
    InFile { file: String, source: Box<SimError> },
}

impl SimError {
    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            e @ SimError::InFile { .. } => e,
            e => SimError::InFile { file: path.display().to_string(), source: Box::new(e) },
        }
    }

    /// Errors caused by the inputs rather than by the program.
    pub fn is_input_error(&self) -> bool {
        match self {
            SimError::InFile { source, .. } => source.is_input_error(),
            SimError::Plant(_) => false,
            _ => true,
        }
    }
}
