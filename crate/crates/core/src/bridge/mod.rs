//! Live teleoperation bridge: newline-delimited JSON commands in, decimated
//! telemetry out, over a local TCP connection.

mod mailbox;
mod server;
mod wire;

pub use mailbox::{CommandMailbox, Posted, TelemetryQueue};
pub use server::{
    BridgeError, Pacing, ServeOptions, ServeSummary, Server, ShutdownHandle, DEFAULT_DECIMATION, DEFAULT_ENDPOINT,
    ENDPOINT_ENV,
};
pub use wire::{
    decode, encode, ClientFrame, CommandMessage, ErrorFrame, Hello, ServerFrame, TelemetryMessage, WireFlags,
    MAX_ANGULAR_OFFSET, MAX_ANGULAR_TWIST, MAX_LINEAR_OFFSET, MAX_LINEAR_TWIST, PROTOCOL_VERSION,
};
