//! Per-tick snapshots and the trajectory CSV format.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

pub const TRAJECTORY_COLUMNS: [&str; 15] = [
    "t",
    "ee_x",
    "ee_y",
    "ee_z",
    "ee_qw",
    "ee_qx",
    "ee_qy",
    "ee_qz",
    "tip_x",
    "tip_y",
    "tip_z",
    "rcm_drift_m",
    "jaw_rad",
    "clearance_m",
    "enabled",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    /// Session time at the end of the tick (s).
    pub t: f64,
    pub ee_position: [f64; 3],
    /// End-effector orientation as `[w, x, y, z]`.
    pub ee_orientation: [f64; 4],
    pub tip: [f64; 3],
    /// Jaw opening (rad).
    pub jaw: f64,
    /// Distance from the pivot point to the shaft line (m).
    pub rcm_drift: f64,
    pub enabled: bool,
    /// Controller output before the interlock, `[v; ω]` in `{EE}`.
    pub commanded: [f64; 6],
    /// Twist actually delivered to the robot.
    pub gated: [f64; 6],
    /// Channel clearance (m); negative when the shaft touches the wall.
    pub clearance: f64,
    pub last_seq_applied: Option<u64>,
}

impl TelemetryFrame {
    fn csv_fields(&self) -> [f64; 14] {
        let [x, y, z] = self.ee_position;
        let [qw, qx, qy, qz] = self.ee_orientation;
        let [tx, ty, tz] = self.tip;
        [
            self.t,
            x,
            y,
            z,
            qw,
            qx,
            qy,
            qz,
            tx,
            ty,
            tz,
            self.rcm_drift,
            self.jaw,
            self.clearance,
        ]
    }
}

/// Writes the header and one row per frame. Floats use the shortest representation
/// that parses back to the same value.
pub fn write_trajectory_csv<W: Write>(frames: &[TelemetryFrame], mut out: W) -> io::Result<()> {
    writeln!(out, "{}", TRAJECTORY_COLUMNS.join(","))?;
    for f in frames {
        let mut line = String::with_capacity(256);
        for v in f.csv_fields() {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push(if f.enabled { '1' } else { '0' });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn trajectory_csv_string(frames: &[TelemetryFrame]) -> String {
    let mut buf = Vec::new();
    write_trajectory_csv(frames, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// Summary figures printed after a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub ticks: usize,
    pub rms_accel_tip: f64,
    pub max_rcm_drift: f64,
    pub min_clearance: f64,
}

impl RunSummary {
    /// `rate` is the tick rate (Hz). Traces shorter than three samples report zero
    /// acceleration.
    pub fn from_frames(frames: &[TelemetryFrame], rate: f64) -> Self {
        use crate::metrics::{rms_accel_norm, SampledSignal};
        use crate::spatial::Vec3;

        let tips: Vec<Vec3> = frames.iter().map(|f| Vec3::from(f.tip)).collect();
        let rms_accel_tip = SampledSignal::new(rate, tips)
            .ok()
            .and_then(|s| rms_accel_norm(&s).ok())
            .unwrap_or(0.0);
        Self {
            ticks: frames.len(),
            rms_accel_tip,
            max_rcm_drift: frames.iter().map(|f| f.rcm_drift).fold(0.0, f64::max),
            min_clearance: frames
                .iter()
                .map(|f| f.clearance)
                .fold(f64::INFINITY, f64::min),
        }
    }
}
