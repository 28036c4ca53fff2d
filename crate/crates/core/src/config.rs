//! Human-readable session configuration (TOML).
//!
//! Angles are degrees in the file and radians everywhere else. Every field has a
//! default, so an empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerConfig, ToolGeometry};
use crate::safety::DEFAULT_DEBOUNCE;
use crate::simulator::{JawModel, LaryngoscopeChannel, TremorModel};
use crate::spatial::{RigidTransform, Rotation, Vec3};

pub const MIN_RATE: f64 = 100.0;
pub const MAX_RATE: f64 = 2000.0;
pub const DEFAULT_STALENESS: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseFile {
    pub translation: [f64; 3],
    pub rpy_deg: [f64; 3],
}

impl Default for PoseFile {
    fn default() -> Self {
        Self {
            translation: [0.0; 3],
            rpy_deg: [0.0; 3],
        }
    }
}

impl PoseFile {
    pub fn resolve(&self) -> Result<RigidTransform, ConfigError> {
        RigidTransform::new(rotation_from_deg(self.rpy_deg)?, Vec3::from(self.translation))
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

fn rotation_from_deg([r, p, y]: [f64; 3]) -> Result<Rotation, ConfigError> {
    if ![r, p, y].iter().all(|c| c.is_finite()) {
        return Err(ConfigError::Invalid("rotation angles must be finite".into()));
    }
    Ok(Rotation::from_rpy(r.to_radians(), p.to_radians(), y.to_radians()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerFile {
    pub alpha_t: f64,
    pub alpha_r: f64,
    pub gain_k: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub input_rpy_deg: [f64; 3],
}

impl Default for ControllerFile {
    fn default() -> Self {
        let d = ControllerConfig::default();
        Self {
            alpha_t: d.alpha_t,
            alpha_r: d.alpha_r,
            gain_k: d.gain_k,
            v_max: d.v_max,
            omega_max: d.omega_max,
            input_rpy_deg: [0.0; 3],
        }
    }
}

impl ControllerFile {
    pub fn resolve(&self) -> Result<ControllerConfig, ConfigError> {
        let cfg = ControllerConfig {
            alpha_t: self.alpha_t,
            alpha_r: self.alpha_r,
            gain_k: self.gain_k,
            v_max: self.v_max,
            omega_max: self.omega_max,
            input_rotation: rotation_from_deg(self.input_rpy_deg)?,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryFile {
    /// Initial pivot distance back from the tip (m).
    pub rcm_offset: f64,
    pub shaft_length: f64,
    /// Tip frame in the end-effector frame.
    pub ee_to_tip: PoseFile,
}

impl Default for GeometryFile {
    fn default() -> Self {
        let d = ToolGeometry::default();
        Self {
            rcm_offset: d.pivot_arm,
            shaft_length: d.shaft_length,
            ee_to_tip: PoseFile {
                translation: d.ee_to_tip.translation.into(),
                rpy_deg: [0.0; 3],
            },
        }
    }
}

impl GeometryFile {
    pub fn resolve(&self) -> Result<ToolGeometry, ConfigError> {
        let geom = ToolGeometry {
            pivot_arm: self.rcm_offset,
            shaft_length: self.shaft_length,
            ee_to_tip: self.ee_to_tip.resolve()?,
        };
        geom.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(geom)
    }
}

/// Tremor settings; `seed` defaults to the session seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TremorFile {
    pub amplitude: f64,
    #[serde(default = "default_band")]
    pub band: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_band() -> [f64; 2] {
    [6.0, 12.0]
}

/// Everything a session needs, in file form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionFile {
    /// Control rate (Hz).
    pub rate: f64,
    /// Telemetry is published every this many ticks.
    pub telemetry_decimation: u32,
    /// Press-to-enable delay (s).
    pub debounce_window: f64,
    /// Operator twists older than this are dropped to zero (s); 0 disables.
    pub staleness_horizon: f64,
    pub seed: u64,
    pub controller: ControllerFile,
    pub geometry: GeometryFile,
    pub channel: LaryngoscopeChannel,
    pub jaw: JawModel,
    pub initial_pose: PoseFile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tremor: Option<TremorFile>,
}

impl Default for SessionFile {
    fn default() -> Self {
        Self {
            rate: 1000.0,
            telemetry_decimation: 20,
            debounce_window: DEFAULT_DEBOUNCE,
            staleness_horizon: DEFAULT_STALENESS,
            seed: 0,
            controller: ControllerFile::default(),
            geometry: GeometryFile::default(),
            channel: LaryngoscopeChannel::default(),
            jaw: JawModel::default(),
            initial_pose: PoseFile::default(),
            tremor: None,
        }
    }
}

impl SessionFile {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("session file serializes")
    }

    pub fn resolve(&self) -> Result<SessionConfig, ConfigError> {
        if !(MIN_RATE..=MAX_RATE).contains(&self.rate) {
            return Err(ConfigError::Invalid(format!(
                "rate {} Hz outside [{MIN_RATE}, {MAX_RATE}]",
                self.rate
            )));
        }
        if self.telemetry_decimation == 0 {
            return Err(ConfigError::Invalid("telemetry_decimation must be >= 1".into()));
        }
        if !(self.debounce_window.is_finite() && self.debounce_window >= 0.0) {
            return Err(ConfigError::Invalid("debounce_window must be >= 0".into()));
        }
        if !(self.staleness_horizon.is_finite() && self.staleness_horizon >= 0.0) {
            return Err(ConfigError::Invalid("staleness_horizon must be >= 0".into()));
        }
        let invalid = |e: crate::simulator::SimError| ConfigError::Invalid(e.to_string());
        let channel = self.channel.validated().map_err(invalid)?;
        self.jaw.validate().map_err(invalid)?;
        let tremor = match self.tremor {
            Some(t) => {
                let model = TremorModel {
                    amplitude: t.amplitude,
                    band: t.band,
                    seed: t.seed.unwrap_or(self.seed),
                };
                model.validate().map_err(invalid)?;
                Some(model)
            }
            None => None,
        };
        Ok(SessionConfig {
            rate: self.rate,
            telemetry_decimation: self.telemetry_decimation,
            controller: self.controller.resolve()?,
            geometry: self.geometry.resolve()?,
            channel,
            jaw: self.jaw,
            debounce_window: self.debounce_window,
            staleness_horizon: (self.staleness_horizon > 0.0).then_some(self.staleness_horizon),
            initial_pose: self.initial_pose.resolve()?,
            tremor,
            seed: self.seed,
        })
    }
}

/// Resolved session parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub rate: f64,
    pub telemetry_decimation: u32,
    pub controller: ControllerConfig,
    /// `pivot_arm` holds the initial pivot offset.
    pub geometry: ToolGeometry,
    pub channel: LaryngoscopeChannel,
    pub jaw: JawModel,
    pub debounce_window: f64,
    pub staleness_horizon: Option<f64>,
    pub initial_pose: RigidTransform,
    pub tremor: Option<TremorModel>,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionFile::default()
            .resolve()
            .expect("default configuration is valid")
    }
}

impl SessionConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.rate
    }
}
