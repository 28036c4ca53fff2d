//! Software remote-center-of-motion teleoperation for a transoral forceps.
//!
//! - [`spatial`]: rigid transforms, twists and pose integration.
//! - [`controller`]: operator twist to end-effector twist under the pivot constraint.
//! - [`safety`]: two-pedal enable interlock.
//! - [`simulator`]: kinematic robot, jaw, laryngoscope channel and tremor models.
//! - [`session`]: the fixed-rate loop shared by scripted runs, the live service and replay.
//! - [`metrics`]: acceleration RMS and windowed RMS / median-frequency features.
//! - [`protocol`] and [`telemetry`]: wire messages and trajectory output.

pub mod config;
pub mod controller;
pub mod metrics;
pub mod protocol;
pub mod safety;
pub mod session;
pub mod simulator;
pub mod spatial;
pub mod telemetry;
