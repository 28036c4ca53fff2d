//! Remote-center-of-motion velocity controller.
//!
//! Maps an operator twist into an end-effector twist in four stages:
//!
//! 1. [`scale_input`]: rotate the operator twist into the application frame `{C}` and
//!    scale it by `alpha_t` / `alpha_r`.
//! 2. [`pivot_map`]: the lateral (y, z) translation demanded at the tip `{F}` becomes
//!    a rotation about the pivot, `ω^F = [ω_x, −v_z/l, v_y/l]`.
//! 3. [`drift_correct`]: the lateral translation is replaced by `k·Δ`, where `Δ` is the
//!    offset from the shaft point `{C}` to the pivot `{RCM}`. Insertion along the shaft
//!    (`v_x` in `{F}`) passes through.
//! 4. [`to_end_effector`]: the `{C}` twist is re-expressed at `{EE}`.
//!
//! `{C}` sits on the shaft at the point that should coincide with the pivot, with its
//! x-axis along the shaft like `{F}`. `{RCM}` shares the orientation of `{C}` but its
//! origin is the pivot point itself; the two origins separate only when the shaft
//! drifts off the pivot.

use thiserror::Error;

use crate::spatial::{cross, transform_twist, Rotation, RigidTransform, Twist, Vec3};

/// Shortest accepted pivot arm (m). The pivot mapping divides by the arm length.
pub const MIN_PIVOT_ARM: f64 = 0.005;

/// Insertion is stopped this close (m) to either end of the usable shaft.
pub const INSERTION_MARGIN: f64 = 0.002;

const FRAME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("pivot arm {0} m is shorter than the {MIN_PIVOT_ARM} m minimum")]
    DegenerateGeometry(f64),
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid tool geometry: {0}")]
    InvalidGeometry(String),
    #[error("inconsistent frame set: {0}")]
    InvalidFrames(String),
    #[error("non-finite input twist")]
    NonFiniteInput,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Translational scale.
    pub alpha_t: f64,
    /// Rotational scale.
    pub alpha_r: f64,
    /// Drift-correction gain (1/s).
    pub gain_k: f64,
    /// Alignment of the operator input frame with `{C}`.
    pub input_rotation: Rotation,
    /// Linear speed clamp (m/s).
    pub v_max: f64,
    /// Angular speed clamp (rad/s).
    pub omega_max: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            alpha_t: 0.25,
            alpha_r: 0.4,
            gain_k: 5.0,
            input_rotation: Rotation::identity(),
            v_max: 0.05,
            omega_max: 0.5,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let fields = [
            ("alpha_t", self.alpha_t),
            ("alpha_r", self.alpha_r),
            ("gain_k", self.gain_k),
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(ControllerError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolGeometry {
    /// Distance from the pivot point to the tip frame `{F}` along the shaft (m).
    pub pivot_arm: f64,
    /// Usable distal shaft length measured back from the tip (m).
    pub shaft_length: f64,
    /// Mounting transform `T^EE_F`: tip frame expressed in the end-effector frame.
    pub ee_to_tip: RigidTransform,
}

impl Default for ToolGeometry {
    fn default() -> Self {
        Self {
            pivot_arm: 0.08,
            shaft_length: 0.2,
            ee_to_tip: RigidTransform::from_translation(Vec3::new(0.2, 0.0, 0.0)),
        }
    }
}

impl ToolGeometry {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.shaft_length.is_finite() && self.shaft_length > 0.0) {
            return Err(ControllerError::InvalidGeometry(format!(
                "shaft_length must be positive, got {}",
                self.shaft_length
            )));
        }
        if !(self.pivot_arm > 0.0 && self.pivot_arm <= self.shaft_length) {
            return Err(ControllerError::InvalidGeometry(format!(
                "pivot_arm {} must lie in (0, {}]",
                self.pivot_arm, self.shaft_length
            )));
        }
        if !self.ee_to_tip.translation.iter().all(|c| c.is_finite()) {
            return Err(ControllerError::InvalidGeometry(
                "ee_to_tip translation is not finite".into(),
            ));
        }
        Ok(())
    }

    pub fn with_pivot_arm(&self, pivot_arm: f64) -> Self {
        Self { pivot_arm, ..*self }
    }
}

/// World poses of the frames the controller works with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSet {
    world_c: RigidTransform,
    world_f: RigidTransform,
    world_rcm: RigidTransform,
    world_ee: RigidTransform,
}

impl FrameSet {
    /// Checks that `{C}` lies on the shaft line of `{F}` with the same x-axis, and that
    /// `{RCM}` is oriented like `{C}`. The `{RCM}` origin may sit off the shaft; that
    /// offset is the deviation the controller corrects.
    pub fn new(
        world_c: RigidTransform,
        world_f: RigidTransform,
        world_rcm: RigidTransform,
        world_ee: RigidTransform,
    ) -> Result<Self, ControllerError> {
        let shaft = world_f.rotation.x_axis();
        let c_axis = world_c.rotation.x_axis();
        if (shaft - c_axis).norm() > FRAME_TOL {
            return Err(ControllerError::InvalidFrames(
                "{C} x-axis is not aligned with the shaft".into(),
            ));
        }
        let off_line = cross(&(world_c.translation - world_f.translation), &shaft).norm();
        if off_line > FRAME_TOL {
            return Err(ControllerError::InvalidFrames(format!(
                "{{C}} origin lies {off_line:e} m off the shaft line"
            )));
        }
        if (world_rcm.rotation.x_axis() - c_axis).norm() > FRAME_TOL {
            return Err(ControllerError::InvalidFrames(
                "{RCM} x-axis is not aligned with {C}".into(),
            ));
        }
        Ok(Self {
            world_c,
            world_f,
            world_rcm,
            world_ee,
        })
    }

    /// Same frames with the `{RCM}` origin moved to a world point.
    pub fn with_rcm_origin(&self, origin: Vec3) -> Self {
        Self {
            world_rcm: RigidTransform {
                rotation: self.world_c.rotation,
                translation: origin,
            },
            ..*self
        }
    }

    pub fn world_c(&self) -> &RigidTransform {
        &self.world_c
    }

    pub fn world_f(&self) -> &RigidTransform {
        &self.world_f
    }

    pub fn world_rcm(&self) -> &RigidTransform {
        &self.world_rcm
    }

    pub fn world_ee(&self) -> &RigidTransform {
        &self.world_ee
    }

    /// `R^C_F`, rotating `{F}` coordinates into `{C}`.
    pub fn c_from_f(&self) -> Rotation {
        self.world_c.rotation.transpose() * self.world_f.rotation
    }

    /// `Δ = t^F_RCM − t^F_C`.
    pub fn deviation(&self) -> Vec3 {
        let rf_t = self.world_f.rotation.transpose();
        rf_t * (self.world_rcm.translation - self.world_c.translation)
    }

    /// `T^EE_C`.
    pub fn ee_from_c(&self) -> RigidTransform {
        self.world_ee.inverse().compose(&self.world_c)
    }
}

/// Rotates and scales the operator twist into `{C}`.
pub fn scale_input(tw_in: &Twist, cfg: &ControllerConfig) -> Twist {
    let r = &cfg.input_rotation;
    Twist {
        linear: r * &tw_in.linear * cfg.alpha_t,
        angular: r * &tw_in.angular * cfg.alpha_r,
    }
}

/// Angular velocity in `{C}` that produces the lateral tip velocity demanded by `v_c`,
/// keeping the roll rate `omega_c_x`.
pub fn pivot_map(
    v_c: &Vec3,
    omega_c_x: f64,
    frames: &FrameSet,
    geom: &ToolGeometry,
) -> Result<Vec3, ControllerError> {
    let l = geom.pivot_arm;
    if !(l > MIN_PIVOT_ARM) {
        return Err(ControllerError::DegenerateGeometry(l));
    }
    let c_from_f = frames.c_from_f();
    let v_f = c_from_f.transpose() * *v_c;
    let omega_f = Vec3::new(omega_c_x, -v_f.z / l, v_f.y / l);
    Ok(c_from_f * omega_f)
}

/// Translational velocity in `{C}`: insertion from `v_c` kept, lateral part replaced by
/// `k·Δ`.
pub fn drift_correct(v_c: &Vec3, frames: &FrameSet, cfg: &ControllerConfig) -> Vec3 {
    let c_from_f = frames.c_from_f();
    let v_f = c_from_f.transpose() * *v_c;
    let delta = frames.deviation();
    c_from_f * Vec3::new(v_f.x, cfg.gain_k * delta.y, cfg.gain_k * delta.z)
}

/// Re-expresses a `{C}` twist at the end-effector.
pub fn to_end_effector(tw_c: &Twist, frames: &FrameSet) -> Twist {
    transform_twist(tw_c, &frames.ee_from_c())
}

/// Scales the whole twist by one factor so both clamps hold.
pub fn clamp_twist(tw: &Twist, v_max: f64, omega_max: f64) -> Twist {
    let v = tw.linear.norm();
    let w = tw.angular.norm();
    let mut s: f64 = 1.0;
    if v > v_max {
        s = s.min(v_max / v);
    }
    if w > omega_max {
        s = s.min(omega_max / w);
    }
    if s < 1.0 {
        tw.scaled(s)
    } else {
        *tw
    }
}

fn limit_insertion(v_c: &Vec3, frames: &FrameSet, geom: &ToolGeometry) -> Vec3 {
    let c_from_f = frames.c_from_f();
    let mut v_f = c_from_f.transpose() * *v_c;
    let too_deep = v_f.x > 0.0 && geom.pivot_arm >= geom.shaft_length - INSERTION_MARGIN;
    let too_shallow = v_f.x < 0.0 && geom.pivot_arm <= MIN_PIVOT_ARM + INSERTION_MARGIN;
    if too_deep || too_shallow {
        v_f.x = 0.0;
        c_from_f * v_f
    } else {
        *v_c
    }
}

/// Constrained `{C}` twist before clamping.
///
/// Insertion that would push the pivot within [`INSERTION_MARGIN`] of either end of the
/// usable shaft is dropped.
pub fn constrain(
    tw_in: &Twist,
    frames: &FrameSet,
    geom: &ToolGeometry,
    cfg: &ControllerConfig,
) -> Result<Twist, ControllerError> {
    if !tw_in.is_finite() {
        return Err(ControllerError::NonFiniteInput);
    }
    let scaled = scale_input(tw_in, cfg);
    let v_c = limit_insertion(&scaled.linear, frames, geom);
    let angular = pivot_map(&v_c, scaled.angular.x, frames, geom)?;
    let linear = drift_correct(&v_c, frames, cfg);
    Ok(Twist { linear, angular })
}

/// Full pipeline: operator twist in, end-effector twist out.
pub fn step(
    tw_in: &Twist,
    frames: &FrameSet,
    geom: &ToolGeometry,
    cfg: &ControllerConfig,
) -> Result<Twist, ControllerError> {
    let tw_c = constrain(tw_in, frames, geom, cfg)?;
    let clamped = clamp_twist(&tw_c, cfg.v_max, cfg.omega_max);
    Ok(to_end_effector(&clamped, frames))
}
