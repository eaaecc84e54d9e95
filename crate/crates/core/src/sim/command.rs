//! Operator command streams in pose and twist mode.

use serde::{Deserialize, Serialize};

use crate::spatial::Pose;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperationMode {
    /// One command for the object; the hands follow the grasp.
    #[default]
    Bimanual,
    /// One command per hand.
    Independent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandMode {
    /// The input is an offset from the rest pose.
    #[default]
    Pose,
    /// The input is a velocity integrated into the reference.
    Twist,
}

/// One operator input: a 6-vector ordered (angular; linear), world-aligned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorInput {
    #[serde(default)]
    pub mode: OperationMode,
    #[serde(default)]
    pub command: CommandMode,
    pub value: [f64; 6],
}

impl OperatorInput {
    /// Zero twist: hold the current reference.
    pub fn hold() -> Self {
        Self { mode: OperationMode::Bimanual, command: CommandMode::Twist, value: [0.0; 6] }
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
    }
}

/// `pose` shifted by the world-aligned increment `(δω; δp)`.
fn offset(pose: &Pose, value: &[f64; 6], scale: f64) -> Pose {
    pose.perturbed(&nalgebra::Vector6::from_row_slice(value).scale(scale))
}

/// Reference generator. Pose mode returns `X_rest + ΔX`; twist mode advances
/// the previous reference by `ΔX·Δt`. Entering pose mode after a twist
/// segment rebases the rest pose on the current reference, so the reference
/// never jumps at a switch.
#[derive(Clone, Debug)]
pub struct CommandState {
    rest: Pose,
    reference: Pose,
    last: Option<CommandMode>,
}

impl CommandState {
    pub fn new(rest: Pose) -> Self {
        Self { rest, reference: rest, last: None }
    }

    pub fn reference(&self) -> &Pose {
        &self.reference
    }

    pub fn rest(&self) -> &Pose {
        &self.rest
    }

    /// Apply one cycle of input and return the new reference.
    pub fn advance(&mut self, input: &OperatorInput, dt: f64) -> Pose {
        match input.command {
            CommandMode::Pose => {
                if self.last == Some(CommandMode::Twist) {
                    self.rest = self.reference;
                }
                self.reference = offset(&self.rest, &input.value, 1.0);
            }
            CommandMode::Twist => {
                self.reference = offset(&self.reference, &input.value, dt);
            }
        }
        self.last = Some(input.command);
        self.reference
    }
}

/// Stateless form: the reference one cycle after `prev` under `input`, with
/// `rest` the pose-mode origin.
pub fn operator_command(input: &OperatorInput, rest: &Pose, prev: &Pose, dt: f64) -> Pose {
    match input.command {
        CommandMode::Pose => offset(rest, &input.value, 1.0),
        CommandMode::Twist => offset(prev, &input.value, dt),
    }
}
