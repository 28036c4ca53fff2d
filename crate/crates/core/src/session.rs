//! Deterministic teleoperation session: command hold, interlock, controller and
//! simulator advanced one tick at a time.
//!
//! The live service and offline replay both drive a [`Session`]; given the same
//! configuration and the same messages applied before the same ticks, the produced
//! frames are bit-identical.

use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, SessionConfig, SessionFile};
use crate::controller::{self, ControllerConfig, ControllerError, MIN_PIVOT_ARM};
use crate::protocol::{self, Command, CommandMessage, DecodeError};
use crate::safety::{self, InterlockState, PedalState, SafetyError};
use crate::simulator::{
    anchored_frames, apply_twist, channel_clearance, inject_tremor, jaw_step, rcm_drift,
    shaft_offset_of, SimError, ToolState, Tremor,
};
use crate::spatial::{Twist, Vec3};
use crate::telemetry::TelemetryFrame;

const TIME_EPS: f64 = 1e-9;
pub const LOG_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation fault: {0}")]
    Sim(#[from] SimError),
    #[error("controller fault: {0}")]
    Controller(#[from] ControllerError),
    #[error("interlock fault: {0}")]
    Safety(#[from] SafetyError),
    #[error("command log line {line}: {message}")]
    Log { line: usize, message: String },
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Config(_) => "config",
            SessionError::Log { .. } => "log",
            _ => "runtime",
        }
    }
}

/// Operator inputs as last received.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CommandHold {
    twist: Twist,
    twist_tick: Option<u64>,
    gripper: f64,
    pedals: PedalState,
}

/// One applied message and the tick it preceded.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedCommand {
    pub tick: u64,
    pub message: CommandMessage,
}

/// Everything needed to reproduce a session.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandLog {
    pub config: SessionFile,
    pub commands: Vec<LoggedCommand>,
    pub ticks: u64,
}

impl CommandLog {
    /// NDJSON: a header line, one line per command, and an end line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let header = json!({
            "type": "header",
            "version": LOG_VERSION,
            "config": serde_json::to_value(&self.config).expect("config serializes"),
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for c in &self.commands {
            let line = json!({
                "type": "command",
                "tick": c.tick,
                "message": protocol::encode_value(&c.message),
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out.push_str(&json!({ "type": "end", "ticks": self.ticks }).to_string());
        out.push('\n');
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, SessionError> {
        let err = |line: usize, message: String| SessionError::Log { line, message };
        let mut config = None;
        let mut commands = Vec::new();
        let mut ticks = None;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            if ticks.is_some() {
                return Err(err(n, "content after end line".into()));
            }
            let v: Value = serde_json::from_str(raw).map_err(|e| err(n, e.to_string()))?;
            match v.get("type").and_then(Value::as_str) {
                Some("header") => {
                    if config.is_some() {
                        return Err(err(n, "duplicate header".into()));
                    }
                    let version = v.get("version").and_then(Value::as_u64);
                    if version != Some(LOG_VERSION) {
                        return Err(err(n, format!("unsupported log version {version:?}")));
                    }
                    let file: SessionFile =
                        serde_json::from_value(v.get("config").cloned().unwrap_or(Value::Null))
                            .map_err(|e| err(n, format!("bad config: {e}")))?;
                    config = Some(file);
                }
                Some("command") => {
                    if config.is_none() {
                        return Err(err(n, "command before header".into()));
                    }
                    let tick = v
                        .get("tick")
                        .and_then(Value::as_u64)
                        .ok_or_else(|| err(n, "missing tick".into()))?;
                    if commands.last().is_some_and(|c: &LoggedCommand| c.tick > tick) {
                        return Err(err(n, "ticks out of order".into()));
                    }
                    let message = v
                        .get("message")
                        .ok_or_else(|| err(n, "missing message".into()))
                        .and_then(|m| {
                            protocol::decode_value(m)
                                .map_err(|e| err(n, format!("bad message: {e}")))
                        })?;
                    commands.push(LoggedCommand { tick, message });
                }
                Some("end") => {
                    let t = v
                        .get("ticks")
                        .and_then(Value::as_u64)
                        .ok_or_else(|| err(n, "missing ticks".into()))?;
                    if commands.last().is_some_and(|c: &LoggedCommand| c.tick > t) {
                        return Err(err(n, "command after the final tick".into()));
                    }
                    ticks = Some(t);
                }
                _ => return Err(err(n, "unknown line type".into())),
            }
        }
        let config = config.ok_or_else(|| err(0, "missing header".into()))?;
        let ticks = ticks.ok_or_else(|| err(0, "missing end line (truncated log?)".into()))?;
        Ok(Self {
            config,
            commands,
            ticks,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    cfg: SessionConfig,
    controller: ControllerConfig,
    state: ToolState,
    /// World-fixed pivot point.
    anchor: Vec3,
    interlock: InterlockState,
    hold: CommandHold,
    tremor: Option<Tremor>,
    tick: u64,
    last_seq: Option<u64>,
    log: Option<CommandLog>,
}

impl Session {
    pub fn new(cfg: SessionConfig) -> Result<Self, SessionError> {
        let state = ToolState::new(cfg.initial_pose);
        let tip = state.world_tip(&cfg.geometry);
        let anchor = tip.translation - tip.rotation.x_axis() * cfg.geometry.pivot_arm;
        let tremor = cfg.tremor.map(Tremor::new).transpose()?;
        Ok(Self {
            controller: cfg.controller,
            interlock: InterlockState::new(cfg.debounce_window)?,
            hold: CommandHold {
                twist: Twist::zero(),
                twist_tick: None,
                gripper: 0.0,
                pedals: PedalState::default(),
            },
            state,
            anchor,
            tremor,
            tick: 0,
            last_seq: None,
            log: None,
            cfg,
        })
    }

    /// A session that records every applied message for later replay.
    pub fn recorded(file: &SessionFile) -> Result<Self, SessionError> {
        let mut s = Self::new(file.resolve()?)?;
        s.log = Some(CommandLog {
            config: file.clone(),
            commands: Vec::new(),
            ticks: 0,
        });
        Ok(s)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn controller(&self) -> &ControllerConfig {
        &self.controller
    }

    pub fn state(&self) -> &ToolState {
        &self.state
    }

    pub fn anchor(&self) -> Vec3 {
        self.anchor
    }

    /// Moves the pivot point directly, bypassing the message path.
    pub fn set_anchor(&mut self, anchor: Vec3) {
        self.anchor = anchor;
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    /// Session time (s) at the start of the next tick.
    pub fn now(&self) -> f64 {
        self.tick as f64 / self.cfg.rate
    }

    pub fn enabled(&self) -> bool {
        self.interlock.enabled()
    }

    pub fn last_seq_applied(&self) -> Option<u64> {
        self.last_seq
    }

    pub fn command_log(&self) -> Option<&CommandLog> {
        self.log.as_ref()
    }

    /// Applies one message before the next tick. A rejected message changes nothing.
    pub fn apply(&mut self, msg: &CommandMessage) -> Result<(), DecodeError> {
        if let Some(last) = self.last_seq {
            if msg.seq <= last {
                return Err(DecodeError::StaleSequence { seq: msg.seq, last });
            }
        }
        match &msg.command {
            Command::Twist(tw) => {
                if !tw.is_finite() {
                    return Err(range("payload", f64::NAN, "finite components"));
                }
                self.hold.twist = *tw;
                self.hold.twist_tick = Some(self.tick);
            }
            Command::Gripper(v) => {
                if !(0.0..=1.0).contains(v) {
                    return Err(range("payload", *v, "a value in [0, 1]"));
                }
                self.hold.gripper = *v;
            }
            Command::Pedal { left, right } => {
                let now = self.now();
                let p = &mut self.hold.pedals;
                if p.left != *left || p.right != *right {
                    p.left = *left;
                    p.right = *right;
                    p.last_change = now;
                }
            }
            Command::SetRcm(offset) => {
                let limit = self.cfg.geometry.shaft_length;
                if !(*offset > MIN_PIVOT_ARM && *offset <= limit) {
                    return Err(range("payload", *offset, "an offset within the shaft"));
                }
                let tip = self.state.world_tip(&self.cfg.geometry);
                self.anchor = tip.translation - tip.rotation.x_axis() * *offset;
            }
            Command::SetConfig(patch) => {
                patch.validate()?;
                let next = patch.apply(&self.controller);
                next.validate()
                    .map_err(|_| range("payload", f64::NAN, "a valid controller configuration"))?;
                self.controller = next;
            }
        }
        self.last_seq = Some(msg.seq);
        if let Some(log) = &mut self.log {
            log.commands.push(LoggedCommand {
                tick: self.tick,
                message: msg.clone(),
            });
        }
        Ok(())
    }

    /// Operator twist in effect for the coming tick, before tremor.
    fn held_twist(&self) -> Twist {
        match (self.hold.twist_tick, self.cfg.staleness_horizon) {
            (None, _) => Twist::zero(),
            (Some(_), None) => self.hold.twist,
            (Some(at), Some(horizon)) => {
                let age = (self.tick - at) as f64 / self.cfg.rate;
                if age >= horizon - TIME_EPS {
                    Twist::zero()
                } else {
                    self.hold.twist
                }
            }
        }
    }

    pub fn tick(&mut self) -> Result<TelemetryFrame, SessionError> {
        let now = self.now();
        let dt = self.cfg.dt();
        self.interlock = safety::update(&self.hold.pedals, now, &self.interlock)?;

        let mut input = self.held_twist();
        if let Some(tremor) = &self.tremor {
            input = inject_tremor(&input, tremor, now);
        }

        let (frames, arm) = anchored_frames(&self.state, &self.cfg.geometry, &self.anchor)?;
        let geom = self.cfg.geometry.with_pivot_arm(arm);
        let commanded = controller::step(&input, &frames, &geom, &self.controller)?;
        let gated = safety::gate(&commanded, &self.interlock);

        let moved = apply_twist(&self.state, &gated, dt)?;
        self.state = jaw_step(&moved, &self.cfg.jaw, self.hold.gripper, dt)?;
        self.tick += 1;
        if let Some(log) = &mut self.log {
            log.ticks = self.tick;
        }
        Ok(self.snapshot(commanded, gated))
    }

    fn snapshot(&self, commanded: Twist, gated: Twist) -> TelemetryFrame {
        let geom = &self.cfg.geometry;
        let ee = &self.state.world_ee;
        let q = ee.rotation.to_quaternion();
        TelemetryFrame {
            t: self.tick as f64 / self.cfg.rate,
            ee_position: ee.translation.into(),
            ee_orientation: q,
            tip: self.state.world_tip(geom).translation.into(),
            jaw: self.state.jaw_angle,
            rcm_drift: rcm_drift(&self.state, geom, &self.anchor),
            enabled: self.interlock.enabled(),
            commanded: commanded.to_array(),
            gated: gated.to_array(),
            clearance: channel_clearance(&self.state, geom, &self.cfg.channel),
            last_seq_applied: self.last_seq,
        }
    }

    /// Current pivot arm: distance from the tip back to the pivot along the shaft.
    pub fn pivot_arm(&self) -> f64 {
        shaft_offset_of(&self.state, &self.cfg.geometry, &self.anchor)
    }
}

fn range(field: &str, v: f64, expected: &'static str) -> DecodeError {
    DecodeError::OutOfRange {
        field: field.to_string(),
        value: v.to_string(),
        expected,
    }
}

/// Re-runs a recorded session and returns one frame per tick.
///
pub fn replay(log: &CommandLog) -> Result<Vec<TelemetryFrame>, SessionError> {
    let mut session = Session::new(log.config.resolve()?)?;
    let mut frames = Vec::with_capacity(log.ticks as usize);
    let mut pending = log.commands.iter().peekable();
    for tick in 0..log.ticks {
        while let Some(c) = pending.next_if(|c| c.tick == tick) {
            let _ = session.apply(&c.message);
        }
        frames.push(session.tick()?);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DEFAULT_STALENESS;

    fn msg(seq: u64, command: Command) -> CommandMessage {
        CommandMessage {
            seq,
            t_client: seq,
            command,
        }
    }

    fn pedals(seq: u64, down: bool) -> CommandMessage {
        msg(
            seq,
            Command::Pedal {
                left: down,
                right: down,
            },
        )
    }

    fn twist(seq: u64, v: [f64; 6]) -> CommandMessage {
        msg(seq, Command::Twist(Twist::from_array(v)))
    }

    fn run(s: &mut Session, n: usize) -> Vec<TelemetryFrame> {
        (0..n).map(|_| s.tick().unwrap()).collect()
    }

    #[test]
    fn idle_session_is_stationary() {
        let mut s = Session::new(SessionConfig::default()).unwrap();
        let start = s.state().world_ee;
        let frames = run(&mut s, 100);
        assert_eq!(s.state().world_ee, start);
        assert!(frames.iter().all(|f| !f.enabled && f.gated == [0.0; 6]));
        assert_eq!(frames[99].t, 0.1);
        assert!(frames.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn enable_after_debounce() {
        let mut s = Session::new(SessionConfig::default()).unwrap();
        s.apply(&pedals(1, true)).unwrap();
        let frames = run(&mut s, 60);
        let first = frames.iter().position(|f| f.enabled).unwrap();
        // Pressed at t = 0, enabled on the tick starting at t = 0.05.
        assert_eq!(first, 50);
        assert!(frames[first..].iter().all(|f| f.enabled));
    }

    #[test]
    fn release_stops_next_tick_despite_fresh_twist() {
        let mut s = Session::new(SessionConfig::default()).unwrap();
        s.apply(&pedals(1, true)).unwrap();
        run(&mut s, 60);
        s.apply(&twist(2, [0.01, 0.005, 0.0, 0.0, 0.0, 0.0])).unwrap();
        let f = s.tick().unwrap();
        assert!(f.enabled && f.gated != [0.0; 6]);
        s.apply(&pedals(3, false)).unwrap();
        s.apply(&twist(4, [0.01, 0.005, 0.0, 0.0, 0.0, 0.0])).unwrap();
        let f = s.tick().unwrap();
        assert!(!f.enabled);
        assert_eq!(f.gated, [0.0; 6]);
        assert_ne!(f.commanded, [0.0; 6]);
    }

    #[test]
    fn stale_twist_decays_within_horizon_plus_tick() {
        let cfg = SessionConfig::default();
        let rate = cfg.rate;
        let mut s = Session::new(cfg).unwrap();
        s.apply(&pedals(1, true)).unwrap();
        s.apply(&twist(2, [0.0, 0.0, 0.01, 0.0, 0.0, 0.0])).unwrap();
        let frames = run(&mut s, 400);
        // Drift correction leaves a residue of order k·Δ ~ 1e-12 once input stops.
        let moving = |f: &TelemetryFrame| Twist::from_array(f.commanded).angular.norm() > 1e-9;
        let stop = frames.iter().position(|f| !moving(f)).unwrap();
        assert!(frames[stop..].iter().all(|f| !moving(f)));
        let stop_time = stop as f64 / rate;
        assert!(stop_time <= DEFAULT_STALENESS + 1.0 / rate + 1e-12, "{stop_time}");
        assert!(stop_time >= DEFAULT_STALENESS - 1.0 / rate);
    }

    #[test]
    fn steady_stream_never_decays() {
        let mut s = Session::new(SessionConfig::default()).unwrap();
        let mut seq = 1;
        for k in 0..2000 {
            // ~60 Hz client.
            if k % 16 == 0 {
                s.apply(&twist(seq, [0.0, 0.002, 0.0, 0.0, 0.0, 0.0])).unwrap();
                seq += 1;
            }
            let f = s.tick().unwrap();
            assert_ne!(f.commanded, [0.0; 6], "tick {k}");
        }
    }

    #[test]
    fn stale_sequence_rejected_without_effect() {
        let mut s = Session::new(SessionConfig::default()).unwrap();
        s.apply(&msg(5, Command::Gripper(0.5))).unwrap();
        let before = s.clone().tick().unwrap();
        for seq in [5, 4, 0] {
            let e = s.apply(&msg(seq, Command::Gripper(1.0))).unwrap_err();
            assert_eq!(e.code(), "stale_seq");
        }
        assert_eq!(s.last_seq_applied(), Some(5));
        assert_eq!(s.tick().unwrap(), before);
    }

    #[test]
    fn drift_correction_is_gated_when_disabled() {
        let mut s = Session::new(SessionConfig::default()).unwrap();
        s.set_anchor(s.anchor() + Vec3::new(0.0, 0.002, 0.0));
        let start = s.state().world_ee;
        let frames = run(&mut s, 50);
        assert_eq!(s.state().world_ee, start);
        assert!(frames.iter().all(|f| f.commanded != [0.0; 6] && f.gated == [0.0; 6]));
    }

    #[test]
    fn set_rcm_moves_anchor_and_checks_range() {
        let mut s = Session::new(SessionConfig::default()).unwrap();
        assert!((s.pivot_arm() - 0.08).abs() < 1e-15);
        s.apply(&msg(1, Command::SetRcm(0.05))).unwrap();
        assert!((s.pivot_arm() - 0.05).abs() < 1e-15);
        assert_eq!(
            s.apply(&msg(2, Command::SetRcm(0.5))).unwrap_err().code(),
            "range_violation"
        );
        assert_eq!(s.last_seq_applied(), Some(1));
    }

    #[test]
    fn set_config_updates_controller() {
        let mut s = Session::new(SessionConfig::default()).unwrap();
        let patch = protocol::ConfigPatch {
            alpha_t: Some(1.0),
            ..Default::default()
        };
        s.apply(&msg(1, Command::SetConfig(patch))).unwrap();
        assert_eq!(s.controller().alpha_t, 1.0);
        assert_eq!(s.controller().alpha_r, ControllerConfig::default().alpha_r);
    }

    #[test]
    fn gripper_latches() {
        let mut s = Session::new(SessionConfig::default()).unwrap();
        s.apply(&msg(1, Command::Gripper(1.0))).unwrap();
        let frames = run(&mut s, 700);
        assert_eq!(frames[699].jaw, 0.5);
        assert!(frames.windows(2).all(|w| w[1].jaw - w[0].jaw <= 1e-3 + 1e-15));
    }

    fn scripted(file: &SessionFile) -> Session {
        let mut s = Session::recorded(file).unwrap();
        let mut seq = 1;
        for k in 0..1500u64 {
            match k {
                0 => s.apply(&pedals(seq, true)).unwrap(),
                300 => s.apply(&msg(seq, Command::Gripper(1.0))).unwrap(),
                900 => s.apply(&pedals(seq, false)).unwrap(),
                _ if k % 17 == 0 => {
                    let w = (k as f64 * 0.01).sin();
                    s.apply(&twist(seq, [0.01 * w, 0.02, -0.01 * w, 0.3, 0.1, 0.0]))
                        .unwrap()
                }
                _ => {
                    s.tick().unwrap();
                    continue;
                }
            }
            seq += 1;
            s.tick().unwrap();
        }
        // Rejected messages are not logged.
        assert!(s.apply(&msg(seq, Command::SetRcm(0.9))).is_err());
        s
    }

    #[test]
    fn replay_matches_live_bit_for_bit() {
        let mut file = SessionFile::default();
        file.tremor = Some(crate::config::TremorFile {
            amplitude: 0.003,
            band: [6.0, 12.0],
            seed: None,
        });
        file.seed = 17;
        let mut live = Session::recorded(&file).unwrap();
        let mut live_frames = Vec::new();
        let mut seq = 1;
        for k in 0..1500u64 {
            if k == 0 {
                live.apply(&pedals(seq, true)).unwrap();
                seq += 1;
            }
            if k % 17 == 0 {
                let w = (k as f64 * 0.01).sin();
                live.apply(&twist(seq, [0.01 * w, 0.02, -0.01 * w, 0.3, 0.1, 0.0]))
                    .unwrap();
                seq += 1;
            }
            live_frames.push(live.tick().unwrap());
        }
        let log = live.command_log().unwrap().clone();
        let parsed = CommandLog::from_ndjson(&log.to_ndjson()).unwrap();
        assert_eq!(parsed, log);
        let a = replay(&parsed).unwrap();
        let b = replay(&parsed).unwrap();
        assert_eq!(a, live_frames);
        assert_eq!(a, b);
        assert!(a.iter().any(|f| f.enabled));
    }

    #[test]
    fn scripted_session_replays() {
        let s = scripted(&SessionFile::default());
        let log = s.command_log().unwrap();
        assert_eq!(log.ticks, 1500);
        let frames = replay(log).unwrap();
        assert_eq!(frames.len(), 1500);
        assert_eq!(frames.last().unwrap().ee_position, <[f64; 3]>::from(s.state().world_ee.translation));
    }

    #[test]
    fn log_parse_errors() {
        let good = scripted(&SessionFile::default()).command_log().unwrap().to_ndjson();
        let truncated: String = good.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(CommandLog::from_ndjson(&truncated), Err(SessionError::Log { .. })));
        assert!(CommandLog::from_ndjson("").is_err());
        assert!(CommandLog::from_ndjson("{\"type\":\"end\",\"ticks\":1}").is_err());
        let bad_version = good.replacen("\"version\":1", "\"version\":9", 1);
        assert!(CommandLog::from_ndjson(&bad_version).is_err());
    }
}
