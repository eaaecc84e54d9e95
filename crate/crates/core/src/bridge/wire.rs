//! Wire schema. Every frame is one JSON object on its own line, carrying the
//! protocol version `"v": 1` and a `"type"` tag.
//!
//! Client to server:
//!
//! | type       | fields |
//! |------------|--------|
//! | `command`  | `seq` (u64, increasing within a connection), `mode` (`bimanual` or `independent`), `command` (`pose` or `twist`), `left` (6 numbers), `right` (6 numbers, optional, ignored in bimanual mode), `adaptation` (bool, optional; must match the session) |
//! | `shutdown` | none |
//!
//! Six-vectors are ordered (angular; linear) in world axes. Twist values are
//! rad/s and m/s, pose offsets rad and m. The angular part must have norm at
//! most 1 rad/s (twist) or π rad (pose), the linear part at most 0.5 m/s or
//! 0.5 m.
//!
//! Server to client:
//!
//! | type        | fields |
//! |-------------|--------|
//! | `hello`     | `dt` (s), `decimation`, `dof`, `adaptation`, `tau_limit` (N·m per joint) |
//! | `telemetry` | `cycle`, `t` (s), `seq` and `received_cycle` of the command in force (null before the first), `commanded`, `target`, `adapted`, `object` (each `[x, y, z, roll, pitch, yaw]`, m and rad), `tau`, `tau_limit` (N·m), `friction_margin`, `cop_margin`, `torsion_margin` (`[left, right]`, N or N·m), `flags`, `clamped`, `qp_status`, `compute_us` |
//! | `error`     | `message`, `seq` (when the rejected frame had one) |

use serde::{Deserialize, Serialize};

use crate::sim::{pose_fields, CommandMode, LogRecord, OperationMode, OperatorInput};

pub const PROTOCOL_VERSION: u32 = 1;

pub const MAX_LINEAR_TWIST: f64 = 0.5;
pub const MAX_ANGULAR_TWIST: f64 = 1.0;
pub const MAX_LINEAR_OFFSET: f64 = 0.5;
pub const MAX_ANGULAR_OFFSET: f64 = std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandMessage {
    pub seq: u64,
    #[serde(default)]
    pub mode: OperationMode,
    pub command: CommandMode,
    pub left: [f64; 6],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptation: Option<bool>,
}

impl CommandMessage {
    pub fn new(seq: u64, command: CommandMode, value: [f64; 6]) -> Self {
        Self { seq, mode: OperationMode::Bimanual, command, left: value, right: None, adaptation: None }
    }

    /// Check the message against the schema bounds and the session.
    pub fn validate(&self, adaptation: bool) -> Result<(), String> {
        if self.mode == OperationMode::Independent {
            return Err("independent mode is not available while an object is held".into());
        }
        if self.adaptation.is_some_and(|a| a != adaptation) {
            return Err(format!("adaptation is fixed to {adaptation} for this session"));
        }
        if !self.left.iter().chain(self.right.iter().flatten()).all(|v| v.is_finite()) {
            return Err("command values must be finite".into());
        }
        let (max_ang, max_lin) = match self.command {
            CommandMode::Twist => (MAX_ANGULAR_TWIST, MAX_LINEAR_TWIST),
            CommandMode::Pose => (MAX_ANGULAR_OFFSET, MAX_LINEAR_OFFSET),
        };
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm(&self.left[..3]) > max_ang || norm(&self.left[3..]) > max_lin {
            return Err(format!(
                "{} command out of bounds: angular norm ≤ {max_ang}, linear norm ≤ {max_lin}",
                match self.command {
                    CommandMode::Twist => "twist",
                    CommandMode::Pose => "pose",
                }
            ));
        }
        Ok(())
    }

    pub fn input(&self) -> OperatorInput {
        OperatorInput { mode: self.mode, command: self.command, value: self.left }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub dt: f64,
    pub decimation: usize,
    pub dof: usize,
    pub adaptation: bool,
    pub tau_limit: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireFlags {
    pub torque_violation: bool,
    pub slippage: bool,
    pub crash: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryMessage {
    pub cycle: u64,
    pub t: f64,
    pub seq: Option<u64>,
    pub received_cycle: Option<u64>,
    pub commanded: [f64; 6],
    pub target: [f64; 6],
    pub adapted: [f64; 6],
    pub object: [f64; 6],
    pub tau: Vec<f64>,
    pub tau_limit: Vec<f64>,
    pub friction_margin: [f64; 2],
    pub cop_margin: [f64; 2],
    pub torsion_margin: [f64; 2],
    pub flags: WireFlags,
    pub clamped: bool,
    pub qp_status: String,
    pub compute_us: f64,
}

impl TelemetryMessage {
    pub fn from_record(cycle: u64, record: &LogRecord, applied: Option<(u64, u64)>) -> Self {
        let m = &record.margins;
        Self {
            cycle,
            t: record.time,
            seq: applied.map(|a| a.0),
            received_cycle: applied.map(|a| a.1),
            commanded: pose_fields(&record.commanded),
            target: pose_fields(&record.target),
            adapted: pose_fields(&record.adapted),
            object: pose_fields(&record.object),
            tau: record.tau.clone(),
            tau_limit: record.tau_limit.clone(),
            friction_margin: [m[0].friction, m[1].friction],
            cop_margin: [m[0].cop, m[1].cop],
            torsion_margin: [m[0].torsion, m[1].torsion],
            flags: WireFlags {
                torque_violation: record.flags.torque_violation,
                slippage: record.flags.slippage,
                crash: record.flags.crash,
            },
            clamped: record.clamped,
            qp_status: record.status.as_str().to_string(),
            compute_us: record.compute_us,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ClientFrame {
    Command(CommandMessage),
    Shutdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ServerFrame {
    Hello(Hello),
    Telemetry(TelemetryMessage),
    Error(ErrorFrame),
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

/// Serialize a frame as one line, newline included.
pub fn encode<T: Serialize>(frame: &T) -> String {
    let mut line = serde_json::to_string(&Envelope { v: PROTOCOL_VERSION, body: frame })
        .expect("frames always serialize");
    line.push('\n');
    line
}

/// Parse one line. Errors name the problem for an error frame.
pub fn decode<T: for<'de> Deserialize<'de>>(line: &str) -> Result<T, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("malformed frame: {e}"))?;
    match value.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        Some(v) => return Err(format!("unsupported protocol version {v}")),
        None => return Err("missing protocol version field \"v\"".into()),
    }
    let mut value = value;
    if let Some(map) = value.as_object_mut() {
        map.remove("v");
    }
    serde_json::from_value(value).map_err(|e| format!("invalid frame: {e}"))
}

/// The sequence number of a frame that failed to decode, when it has one.
pub fn salvage_seq(line: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(line).ok()?.get("seq")?.as_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_round_trips() {
        let msg = ClientFrame::Command(CommandMessage::new(7, CommandMode::Twist, [0.0, 0.0, 0.0, 0.05, 0.0, 0.0]));
        let line = encode(&msg);
        assert!(line.starts_with("{\"v\":1,\"type\":\"command\""));
        assert_eq!(decode::<ClientFrame>(&line).unwrap(), msg);
    }

    #[test]
    fn version_is_required() {
        assert!(decode::<ClientFrame>(r#"{"type":"shutdown"}"#).unwrap_err().contains("version"));
        assert!(decode::<ClientFrame>(r#"{"v":2,"type":"shutdown"}"#).unwrap_err().contains("version 2"));
        assert_eq!(decode::<ClientFrame>(r#"{"v":1,"type":"shutdown"}"#).unwrap(), ClientFrame::Shutdown);
    }

    #[test]
    fn bounds_follow_the_command_mode() {
        let twist = CommandMessage::new(1, CommandMode::Twist, [0.0, 0.0, 0.0, 0.6, 0.0, 0.0]);
        assert!(twist.validate(true).is_err());
        let pose = CommandMessage::new(1, CommandMode::Pose, [0.0, 0.0, 0.0, 0.4, 0.3, 0.0]);
        assert!(pose.validate(true).is_ok());
        let spin = CommandMessage::new(1, CommandMode::Twist, [0.8, 0.8, 0.0, 0.0, 0.0, 0.0]);
        assert!(spin.validate(true).is_err());
        let mut toggled = CommandMessage::new(1, CommandMode::Twist, [0.0; 6]);
        toggled.adaptation = Some(false);
        assert!(toggled.validate(true).is_err());
    }
}
