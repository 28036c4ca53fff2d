use serde::{Deserialize, Serialize};

use super::{SimError, ToolState};

/// Forceps jaw actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JawModel {
    /// Fully open angle (rad).
    pub jaw_max: f64,
    /// Slew limit (rad/s).
    pub rate_limit: f64,
    /// Motor output torque limit (N·m). Informational.
    pub torque_limit: f64,
}

impl Default for JawModel {
    fn default() -> Self {
        Self {
            jaw_max: 0.5,
            rate_limit: 1.0,
            torque_limit: 0.5,
        }
    }
}

impl JawModel {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("jaw_max", self.jaw_max),
            ("rate_limit", self.rate_limit),
            ("torque_limit", self.torque_limit),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidModel(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Moves the jaw toward `command · jaw_max` at no more than `rate_limit`.
pub fn jaw_step(
    state: &ToolState,
    model: &JawModel,
    command: f64,
    dt: f64,
) -> Result<ToolState, SimError> {
    if !(0.0..=1.0).contains(&command) {
        return Err(SimError::JawCommandOutOfRange(command));
    }
    let target = command * model.jaw_max;
    let max_step = model.rate_limit * dt;
    let gap = target - state.jaw_angle;
    let angle = if gap.abs() <= max_step {
        target
    } else {
        state.jaw_angle + max_step.copysign(gap)
    };
    Ok(ToolState {
        jaw_angle: angle.clamp(0.0, model.jaw_max),
        jaw_target: target,
        ..*state
    })
}
