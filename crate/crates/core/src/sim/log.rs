//! Per-cycle log records and their CSV form.
//!
//! Columns, in order (poses as x, y, z in m then roll, pitch, yaw in rad;
//! wrenches as tx, ty, tz in N·m then fx, fy, fz in N):
//!
//! | columns | meaning |
//! |---|---|
//! | `t` | time at the start of the cycle (s) |
//! | `cmd_*` | operator command |
//! | `tgt_*` | command after the admittance offset |
//! | `adp_*` | adapted object pose (the raw target when adaptation is off) |
//! | `obj_*` | simulated object pose |
//! | `tau_<j>` | commanded joint torque (N·m) |
//! | `tau_limit_<j>` | torque oracle limit (N·m) |
//! | `lambda_l_*`, `lambda_r_*` | measured contact wrenches, contact frame |
//! | `ext_*` | estimated external wrench, object frame |
//! | `margin_{l,r}_{friction,cop,torsion}` | contact margins (N, N·m, N·m) |
//! | `torque_violation`, `slippage`, `crash` | oracle flags, 0 or 1 |
//! | `clamped` | the retargeter ended on a constraint, 0 or 1 |
//! | `qp_status`, `qp_iterations` | retargeting QP outcome |
//! | `compute_us` | admittance + retargeting + controller time (µs) |

use std::io::Write;

use crate::qp::QpStatus;
use crate::spatial::{Pose, Wrench};

use super::oracle::ContactMargins;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flags {
    pub torque_violation: bool,
    pub slippage: bool,
    pub crash: bool,
}

impl Flags {
    pub fn any(&self) -> bool {
        self.torque_violation || self.slippage || self.crash
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CycleStatus {
    Qp(QpStatus),
    /// The retargeter refused to start from its current state and held it.
    InfeasibleStart,
    /// Adaptation is off; targets go to the controller unchanged.
    Disabled,
}

impl CycleStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CycleStatus::Qp(s) => s.as_str(),
            CycleStatus::InfeasibleStart => "infeasible_start",
            CycleStatus::Disabled => "disabled",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub time: f64,
    pub commanded: Pose,
    pub target: Pose,
    pub adapted: Pose,
    pub object: Pose,
    pub tau: Vec<f64>,
    pub tau_limit: Vec<f64>,
    pub lambda_l: Wrench,
    pub lambda_r: Wrench,
    pub external: Wrench,
    pub margins: [ContactMargins; 2],
    pub flags: Flags,
    pub clamped: bool,
    pub status: CycleStatus,
    pub qp_iterations: usize,
    pub compute_us: f64,
}

impl LogRecord {
    pub fn min_margin(&self) -> f64 {
        self.margins[0].min().min(self.margins[1].min())
    }

    /// Largest `|τ_j| / τ_limit_j`.
    pub fn torque_ratio(&self) -> f64 {
        self.tau.iter().zip(&self.tau_limit).map(|(t, l)| t.abs() / l).fold(0.0, f64::max)
    }
}

const POSE: [&str; 6] = ["x", "y", "z", "roll", "pitch", "yaw"];
const WRENCH: [&str; 6] = ["tx", "ty", "tz", "fx", "fy", "fz"];

/// Header line for `n` joints, without the trailing newline.
pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for p in ["cmd", "tgt", "adp", "obj"] {
        cols.extend(POSE.iter().map(|c| format!("{p}_{c}")));
    }
    cols.extend((0..n).map(|j| format!("tau_{j}")));
    cols.extend((0..n).map(|j| format!("tau_limit_{j}")));
    for w in ["lambda_l", "lambda_r", "ext"] {
        cols.extend(WRENCH.iter().map(|c| format!("{w}_{c}")));
    }
    for s in ["l", "r"] {
        cols.extend(["friction", "cop", "torsion"].iter().map(|m| format!("margin_{s}_{m}")));
    }
    cols.extend(
        ["torque_violation", "slippage", "crash", "clamped", "qp_status", "qp_iterations", "compute_us"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

/// `[x, y, z, roll, pitch, yaw]` with fixed-axis roll-pitch-yaw angles.
pub fn pose_fields(p: &Pose) -> [f64; 6] {
    let (r, pi, y) = p.rotation.euler_angles();
    [p.translation.x, p.translation.y, p.translation.z, r, pi, y]
}

pub fn csv_row(r: &LogRecord) -> String {
    let mut f: Vec<String> = vec![r.time.to_string()];
    for p in [&r.commanded, &r.target, &r.adapted, &r.object] {
        f.extend(pose_fields(p).iter().map(f64::to_string));
    }
    f.extend(r.tau.iter().chain(&r.tau_limit).map(f64::to_string));
    for w in [&r.lambda_l, &r.lambda_r, &r.external] {
        f.extend(w.to_vector().iter().map(f64::to_string));
    }
    for m in &r.margins {
        f.extend([m.friction, m.cop, m.torsion].iter().map(f64::to_string));
    }
    let b = |v: bool| if v { "1".to_string() } else { "0".to_string() };
    f.push(b(r.flags.torque_violation));
    f.push(b(r.flags.slippage));
    f.push(b(r.flags.crash));
    f.push(b(r.clamped));
    f.push(r.status.as_str().to_string());
    f.push(r.qp_iterations.to_string());
    f.push(format!("{:.1}", r.compute_us));
    f.join(",")
}

pub fn write_csv<W: Write>(records: &[LogRecord], n: usize, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", csv_header(n))?;
    for r in records {
        writeln!(out, "{}", csv_row(r))?;
    }
    out.flush()
}
