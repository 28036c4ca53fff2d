//! Scripted sessions: timestamped operator events read from TOML.
//!
//! ```toml
//! duration = 2.0
//! [[events]]
//! at = 0.0
//! kind = "pedal"
//! left = true
//! right = true
//! [[events]]
//! at = 0.1
//! kind = "twist"
//! value = [0.0, 0.01, 0.0, 0.0, 0.0, 0.0]
//! ```
//!
//! Scripted twists hold until the next twist event; the staleness timeout is off.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SessionFile, TremorFile, MAX_RATE, MIN_RATE};
use crate::protocol::{self, Command, CommandMessage, ConfigPatch};
use crate::session::{Session, SessionError};
use crate::spatial::Twist;
use crate::telemetry::TelemetryFrame;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioAction {
    /// `[vx, vy, vz, wx, wy, wz]` in the operator input frame.
    Twist { value: [f64; 6] },
    Gripper { value: f64 },
    Pedal { left: bool, right: bool },
    SetRcm { offset: f64 },
    SetConfig { patch: ConfigPatch },
}

impl ScenarioAction {
    fn command(&self) -> Command {
        match self {
            ScenarioAction::Twist { value } => Command::Twist(Twist::from_array(*value)),
            ScenarioAction::Gripper { value } => Command::Gripper(*value),
            ScenarioAction::Pedal { left, right } => Command::Pedal {
                left: *left,
                right: *right,
            },
            ScenarioAction::SetRcm { offset } => Command::SetRcm(*offset),
            ScenarioAction::SetConfig { patch } => Command::SetConfig(*patch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    /// Time of the event (s); applied before the tick nearest to it.
    pub at: f64,
    #[serde(flatten)]
    pub action: ScenarioAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub duration: f64,
    /// Overrides the configured tick rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// Overrides the configured seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Applied on top of the configured controller before the first tick.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ConfigPatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tremor: Option<TremorFile>,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The session configuration this scenario runs under.
    pub fn session_file(&self, base: &SessionFile) -> Result<SessionFile, ScenarioError> {
        let mut file = base.clone();
        if let Some(rate) = self.rate {
            file.rate = rate;
        }
        if let Some(seed) = self.seed {
            file.seed = seed;
        }
        if let Some(tremor) = self.tremor {
            file.tremor = Some(tremor);
        }
        if let Some(patch) = &self.controller {
            patch
                .validate()
                .map_err(|e| ScenarioError::Invalid(format!("controller: {e}")))?;
            let c = &mut file.controller;
            c.alpha_t = patch.alpha_t.unwrap_or(c.alpha_t);
            c.alpha_r = patch.alpha_r.unwrap_or(c.alpha_r);
            c.gain_k = patch.gain_k.unwrap_or(c.gain_k);
            c.v_max = patch.v_max.unwrap_or(c.v_max);
            c.omega_max = patch.omega_max.unwrap_or(c.omega_max);
            c.input_rpy_deg = patch.input_rpy_deg.unwrap_or(c.input_rpy_deg);
        }
        file.staleness_horizon = 0.0;
        Ok(file)
    }

    /// Checks timing and payloads; returns the events as messages with their tick,
    /// in time order.
    pub fn schedule(&self, rate: f64) -> Result<Vec<(u64, CommandMessage)>, ScenarioError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(ScenarioError::Invalid(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !(MIN_RATE..=MAX_RATE).contains(&rate) {
            return Err(ScenarioError::Invalid(format!(
                "rate {rate} Hz outside [{MIN_RATE}, {MAX_RATE}]"
            )));
        }
        let mut order: Vec<usize> = (0..self.events.len()).collect();
        order.sort_by(|&a, &b| self.events[a].at.total_cmp(&self.events[b].at));
        let mut out = Vec::with_capacity(order.len());
        for (n, &i) in order.iter().enumerate() {
            let ev = &self.events[i];
            if !(ev.at.is_finite() && (0.0..=self.duration).contains(&ev.at)) {
                return Err(ScenarioError::Invalid(format!(
                    "event {} at {} s is outside [0, {}] s",
                    i + 1,
                    ev.at,
                    self.duration
                )));
            }
            let msg = CommandMessage {
                seq: n as u64 + 1,
                t_client: (ev.at * 1000.0).round() as u64,
                command: ev.action.command(),
            };
            // Same checks as a message arriving over the wire.
            let msg = protocol::decode_value(&protocol::encode_value(&msg))
                .map_err(|e| ScenarioError::Invalid(format!("event {}: {e}", i + 1)))?;
            out.push(((ev.at * rate).round() as u64, msg));
        }
        Ok(out)
    }

    pub fn ticks(&self, rate: f64) -> u64 {
        (self.duration * rate).round() as u64
    }
}

/// Runs the scenario under `base` and returns one frame per tick.
pub fn run_scenario(sc: &Scenario, base: &SessionFile) -> Result<Vec<TelemetryFrame>, ScenarioError> {
    let file = sc.session_file(base)?;
    let cfg = file.resolve()?;
    let schedule = sc.schedule(cfg.rate)?;
    let ticks = sc.ticks(cfg.rate);
    let mut session = Session::new(cfg)?;
    let mut pending = schedule.iter().peekable();
    let mut frames = Vec::with_capacity(ticks as usize);
    for tick in 0..ticks {
        while let Some((_, msg)) = pending.next_if(|(t, _)| *t <= tick) {
            session.apply(msg).map_err(|e| {
                ScenarioError::Invalid(format!("event at tick {tick} rejected: {e}"))
            })?;
        }
        frames.push(session.tick()?);
    }
    Ok(frames)
}
