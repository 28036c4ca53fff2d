//! Kinematic stand-in for the robot, end-effector and forceps.
//!
//! The robot is an ideal Cartesian velocity follower: commanded end-effector twists
//! are integrated directly into the end-effector pose.

mod channel;
mod jaw;
pub mod scenario;
mod tremor;

pub use channel::{channel_clearance, LaryngoscopeChannel};
pub use jaw::{jaw_step, JawModel};
pub use scenario::{run_scenario, Scenario, ScenarioAction, ScenarioError, ScenarioEvent};
pub use tremor::{inject_tremor, Tremor, TremorModel, TREMOR_COMPONENTS};

use thiserror::Error;

use crate::controller::{ControllerError, FrameSet, ToolGeometry};
use crate::spatial::{cross, integrate_pose, RigidTransform, SpatialError, Twist, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("pivot offset {offset} m is outside the shaft [0, {shaft_length}] m")]
    RcmOffsetOutOfRange { offset: f64, shaft_length: f64 },
    #[error("jaw command {0} outside [0, 1]")]
    JawCommandOutOfRange(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolState {
    pub world_ee: RigidTransform,
    /// Jaw opening (rad), within `[0, jaw_max]`.
    pub jaw_angle: f64,
    pub jaw_target: f64,
    /// Simulated time (s).
    pub time: f64,
}

impl ToolState {
    pub fn new(world_ee: RigidTransform) -> Self {
        Self {
            world_ee,
            jaw_angle: 0.0,
            jaw_target: 0.0,
            time: 0.0,
        }
    }

    /// World pose of the tip frame `{F}`.
    pub fn world_tip(&self, geom: &ToolGeometry) -> RigidTransform {
        self.world_ee.compose(&geom.ee_to_tip)
    }
}

/// Integrates an end-effector body twist for one tick.
pub fn apply_twist(state: &ToolState, tw_ee: &Twist, dt: f64) -> Result<ToolState, SimError> {
    let world_ee = if tw_ee.is_zero() {
        if !(dt > 0.0 && dt <= crate::spatial::MAX_INTEGRATION_STEP) {
            return Err(SpatialError::StepOutOfRange(dt).into());
        }
        state.world_ee
    } else {
        integrate_pose(&state.world_ee, tw_ee, dt)?
    };
    Ok(ToolState {
        world_ee,
        time: state.time + dt,
        ..*state
    })
}

/// Frames with `{F}` at the tip and `{C}` = `{RCM}` placed `rcm_offset` back along the
/// shaft.
pub fn derive_frames(
    state: &ToolState,
    geom: &ToolGeometry,
    rcm_offset: f64,
) -> Result<FrameSet, SimError> {
    if !(0.0..=geom.shaft_length).contains(&rcm_offset) {
        return Err(SimError::RcmOffsetOutOfRange {
            offset: rcm_offset,
            shaft_length: geom.shaft_length,
        });
    }
    let world_f = state.world_tip(geom);
    let world_c = world_f.compose(&RigidTransform::from_translation(Vec3::new(
        -rcm_offset,
        0.0,
        0.0,
    )));
    Ok(FrameSet::new(world_c, world_f, world_c, state.world_ee)?)
}

/// Signed distance from a world point to the tip, measured back along the shaft axis.
pub fn shaft_offset_of(state: &ToolState, geom: &ToolGeometry, point: &Vec3) -> f64 {
    let tip = state.world_tip(geom);
    (tip.translation - point).dot(&tip.rotation.x_axis())
}

/// Frames for a world-fixed pivot: `{C}` is the shaft point closest to `pivot`, `{RCM}`
/// sits at `pivot` itself. Returns the frames and the pivot arm (tip-to-`{C}` distance).
pub fn anchored_frames(
    state: &ToolState,
    geom: &ToolGeometry,
    pivot: &Vec3,
) -> Result<(FrameSet, f64), SimError> {
    let offset = shaft_offset_of(state, geom, pivot);
    let frames = derive_frames(state, geom, offset)?.with_rcm_origin(*pivot);
    Ok((frames, offset))
}

/// Distance from a world point to the infinite shaft line.
pub fn rcm_drift(state: &ToolState, geom: &ToolGeometry, pivot: &Vec3) -> f64 {
    let tip = state.world_tip(geom);
    cross(&(pivot - tip.translation), &tip.rotation.x_axis()).norm()
}
