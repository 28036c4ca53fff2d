//! Operator command messages and their line-oriented JSON encoding.
//!
//! Every message is one JSON object on one line:
//!
//! ```text
//! {"kind":"twist","seq":12,"t_client":40210,"payload":[0.01,0,0,0,0,0]}
//! ```
//!
//! Unknown top-level and `set_config` fields are ignored so newer clients can talk to
//! older services. See `docs/protocol.md` for the field-by-field schema.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::controller::ControllerConfig;
use crate::spatial::{Rotation, Twist};
use crate::telemetry::TelemetryFrame;

/// Largest accepted magnitude of any operator twist component (m/s or rad/s).
pub const MAX_TWIST_COMPONENT: f64 = 10.0;
/// Largest accepted pivot offset in a `set_rcm` message (m).
pub const MAX_RCM_OFFSET: f64 = 1.0;
/// Largest accepted `input_rpy_deg` component.
pub const MAX_ALIGNMENT_DEG: f64 = 360.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    /// `[vx, vy, vz, wx, wy, wz]` in the operator input frame.
    Twist(Twist),
    /// Normalized jaw command, 0 = closed, 1 = open.
    Gripper(f64),
    Pedal { left: bool, right: bool },
    /// Pivot distance back from the tip along the shaft (m).
    SetRcm(f64),
    SetConfig(ConfigPatch),
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Command::Twist(_) => "twist",
            Command::Gripper(_) => "gripper",
            Command::Pedal { .. } => "pedal",
            Command::SetRcm(_) => "set_rcm",
            Command::SetConfig(_) => "set_config",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandMessage {
    pub seq: u64,
    /// Client timestamp (ms).
    pub t_client: u64,
    pub command: Command,
}

/// Partial controller configuration; absent fields keep their current value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_max: Option<f64>,
    /// Input alignment as roll/pitch/yaw in degrees.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_rpy_deg: Option<[f64; 3]>,
}

const PATCH_SCALARS: [&str; 5] = ["alpha_t", "alpha_r", "gain_k", "v_max", "omega_max"];

impl ConfigPatch {
    fn scalar_mut(&mut self, name: &str) -> &mut Option<f64> {
        match name {
            "alpha_t" => &mut self.alpha_t,
            "alpha_r" => &mut self.alpha_r,
            "gain_k" => &mut self.gain_k,
            "v_max" => &mut self.v_max,
            "omega_max" => &mut self.omega_max,
            _ => unreachable!("unknown patch field {name}"),
        }
    }

    fn scalars(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("alpha_t", self.alpha_t),
            ("alpha_r", self.alpha_r),
            ("gain_k", self.gain_k),
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
        ]
    }

    pub fn is_empty(&self) -> bool {
        self.scalars().iter().all(|(_, v)| v.is_none()) && self.input_rpy_deg.is_none()
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        for (name, v) in self.scalars() {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(DecodeError::OutOfRange {
                        field: format!("payload.{name}"),
                        value: v.to_string(),
                        expected: "a positive number",
                    });
                }
            }
        }
        if let Some(rpy) = self.input_rpy_deg {
            if let Some(bad) = rpy
                .iter()
                .find(|c| !(c.is_finite() && c.abs() <= MAX_ALIGNMENT_DEG))
            {
                return Err(DecodeError::OutOfRange {
                    field: "payload.input_rpy_deg".into(),
                    value: bad.to_string(),
                    expected: "degrees within ±360",
                });
            }
        }
        Ok(())
    }

    pub fn apply(&self, cfg: &ControllerConfig) -> ControllerConfig {
        let mut out = *cfg;
        out.alpha_t = self.alpha_t.unwrap_or(cfg.alpha_t);
        out.alpha_r = self.alpha_r.unwrap_or(cfg.alpha_r);
        out.gain_k = self.gain_k.unwrap_or(cfg.gain_k);
        out.v_max = self.v_max.unwrap_or(cfg.v_max);
        out.omega_max = self.omega_max.unwrap_or(cfg.omega_max);
        if let Some([r, p, y]) = self.input_rpy_deg {
            out.input_rotation = Rotation::from_rpy(r.to_radians(), p.to_radians(), y.to_radians());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("empty message")]
    Empty,
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("message is not a JSON object")]
    NotAnObject,
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` must be {expected}")]
    WrongType {
        field: String,
        expected: &'static str,
    },
    #[error("unknown message kind `{0}`")]
    UnknownKind(String),
    #[error("field `{field}` = {value} out of range: expected {expected}")]
    OutOfRange {
        field: String,
        value: String,
        expected: &'static str,
    },
    #[error("stale sequence number {seq} (last accepted {last})")]
    StaleSequence { seq: u64, last: u64 },
}

impl DecodeError {
    /// Stable machine-readable code used in error replies.
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::Empty => "empty",
            DecodeError::Syntax(_) => "syntax",
            DecodeError::NotAnObject => "not_an_object",
            DecodeError::MissingField(_) => "missing_field",
            DecodeError::WrongType { .. } => "wrong_type",
            DecodeError::UnknownKind(_) => "unknown_kind",
            DecodeError::OutOfRange { .. } => "range_violation",
            DecodeError::StaleSequence { .. } => "stale_seq",
        }
    }
}

/// Message as a JSON value.
pub fn encode_value(msg: &CommandMessage) -> Value {
    let payload = match &msg.command {
        Command::Twist(tw) => json!(tw.to_array()),
        Command::Gripper(v) => json!(v),
        Command::Pedal { left, right } => json!({ "left": left, "right": right }),
        Command::SetRcm(offset) => json!(offset),
        Command::SetConfig(patch) => serde_json::to_value(patch).expect("patch serializes"),
    };
    json!({
        "kind": msg.command.kind(),
        "seq": msg.seq,
        "t_client": msg.t_client,
        "payload": payload,
    })
}

/// One line of JSON, without the trailing newline.
pub fn encode(msg: &CommandMessage) -> String {
    encode_value(msg).to_string()
}

pub fn decode_bytes(bytes: &[u8]) -> Result<CommandMessage, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    decode(text)
}

/// Stateless decode; sequence ordering is checked by [`Decoder`].
pub fn decode(line: &str) -> Result<CommandMessage, DecodeError> {
    let line = line.trim();
    if line.is_empty() {
        return Err(DecodeError::Empty);
    }
    let value: Value = serde_json::from_str(line).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    decode_value(&value)
}

pub fn decode_value(value: &Value) -> Result<CommandMessage, DecodeError> {
    let obj = value.as_object().ok_or(DecodeError::NotAnObject)?;
    let kind = match obj.get("kind") {
        None => return Err(DecodeError::MissingField("kind")),
        Some(Value::String(s)) => s.as_str(),
        Some(_) => return Err(wrong_type("kind", "a string")),
    };
    let seq = unsigned(obj, "seq")?;
    let t_client = unsigned(obj, "t_client")?;
    let payload = obj.get("payload");
    let command = match kind {
        "twist" => Command::Twist(twist_payload(required(payload)?)?),
        "gripper" => {
            let v = number(required(payload)?, "payload")?;
            if !(0.0..=1.0).contains(&v) {
                return Err(out_of_range("payload", v, "a value in [0, 1]"));
            }
            Command::Gripper(v)
        }
        "pedal" => {
            let p = required(payload)?
                .as_object()
                .ok_or_else(|| wrong_type("payload", "an object"))?;
            Command::Pedal {
                left: flag(p, "left")?,
                right: flag(p, "right")?,
            }
        }
        "set_rcm" => {
            let v = number(required(payload)?, "payload")?;
            if !(v > 0.0 && v <= MAX_RCM_OFFSET) {
                return Err(out_of_range("payload", v, "an offset in (0, 1] m"));
            }
            Command::SetRcm(v)
        }
        "set_config" => Command::SetConfig(config_payload(required(payload)?)?),
        other => return Err(DecodeError::UnknownKind(other.to_string())),
    };
    Ok(CommandMessage {
        seq,
        t_client,
        command,
    })
}

fn wrong_type(field: &str, expected: &'static str) -> DecodeError {
    DecodeError::WrongType {
        field: field.to_string(),
        expected,
    }
}

fn out_of_range(field: &str, v: f64, expected: &'static str) -> DecodeError {
    DecodeError::OutOfRange {
        field: field.to_string(),
        value: v.to_string(),
        expected,
    }
}

fn required(payload: Option<&Value>) -> Result<&Value, DecodeError> {
    payload.ok_or(DecodeError::MissingField("payload"))
}

fn unsigned(obj: &Map<String, Value>, field: &'static str) -> Result<u64, DecodeError> {
    match obj.get(field) {
        None => Err(DecodeError::MissingField(field)),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| wrong_type(field, "a non-negative integer")),
    }
}

fn number(v: &Value, field: &str) -> Result<f64, DecodeError> {
    v.as_f64().ok_or_else(|| wrong_type(field, "a number"))
}

fn flag(obj: &Map<String, Value>, field: &'static str) -> Result<bool, DecodeError> {
    match obj.get(field) {
        None => Err(DecodeError::MissingField(field)),
        Some(v) => v
            .as_bool()
            .ok_or_else(|| wrong_type(&format!("payload.{field}"), "a boolean")),
    }
}

fn twist_payload(v: &Value) -> Result<Twist, DecodeError> {
    let items = v
        .as_array()
        .filter(|a| a.len() == 6)
        .ok_or_else(|| wrong_type("payload", "an array of 6 numbers"))?;
    let mut out = [0.0; 6];
    for (i, item) in items.iter().enumerate() {
        let field = format!("payload[{i}]");
        let c = number(item, &field)?;
        if c.abs() > MAX_TWIST_COMPONENT {
            return Err(out_of_range(&field, c, "|component| <= 10"));
        }
        out[i] = c;
    }
    Ok(Twist::from_array(out))
}

fn config_payload(v: &Value) -> Result<ConfigPatch, DecodeError> {
    let obj = v
        .as_object()
        .ok_or_else(|| wrong_type("payload", "an object"))?;
    let mut patch = ConfigPatch::default();
    for name in PATCH_SCALARS {
        if let Some(item) = obj.get(name) {
            *patch.scalar_mut(name) = Some(number(item, &format!("payload.{name}"))?);
        }
    }
    if let Some(item) = obj.get("input_rpy_deg") {
        let arr = item
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| wrong_type("payload.input_rpy_deg", "an array of 3 numbers"))?;
        let mut rpy = [0.0; 3];
        for (i, c) in arr.iter().enumerate() {
            rpy[i] = number(c, "payload.input_rpy_deg")?;
        }
        patch.input_rpy_deg = Some(rpy);
    }
    patch.validate()?;
    Ok(patch)
}

/// Per-session decoder enforcing strictly increasing sequence numbers.
#[derive(Debug, Clone, Default)]
pub struct Decoder {
    last_seq: Option<u64>,
}

impl Decoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.last_seq
    }

    /// Decodes a line; a message whose `seq` does not exceed the last accepted one is
    /// rejected and leaves the decoder unchanged.
    pub fn decode(&mut self, line: &str) -> Result<CommandMessage, DecodeError> {
        let msg = decode(line)?;
        self.accept(msg)
    }

    pub fn accept(&mut self, msg: CommandMessage) -> Result<CommandMessage, DecodeError> {
        if let Some(last) = self.last_seq {
            if msg.seq <= last {
                return Err(DecodeError::StaleSequence { seq: msg.seq, last });
            }
        }
        self.last_seq = Some(msg.seq);
        Ok(msg)
    }
}

/// Messages from the service to the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Telemetry(TelemetryFrame),
    Error {
        code: String,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
    },
}

impl ServerMessage {
    pub fn error(code: &str, message: impl Into<String>, seq: Option<u64>) -> Self {
        ServerMessage::Error {
            code: code.to_string(),
            message: message.into(),
            seq,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}
