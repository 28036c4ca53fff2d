//! Dual foot-pedal enabling interlock.
//!
//! Motion is enabled only after both pedals have been held together for the debounce
//! window, and drops the moment either pedal is released.

use thiserror::Error;

use crate::spatial::Twist;

/// Default press-to-enable delay (s).
pub const DEFAULT_DEBOUNCE: f64 = 0.05;

/// Slack on the debounce comparison so tick arithmetic such as `50 × 1e-3` is not
/// rejected by a rounding ulp.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SafetyError {
    #[error("time went backwards: {now} s after {last} s")]
    TimeRegression { now: f64, last: f64 },
    #[error("debounce window must be finite and non-negative, got {0}")]
    InvalidDebounce(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PedalState {
    pub left: bool,
    pub right: bool,
    /// Time of the last change of either pedal (s).
    pub last_change: f64,
}

impl PedalState {
    pub fn both_pressed(&self) -> bool {
        self.left && self.right
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterlockState {
    enabled: bool,
    debounce_window: f64,
    /// Start of the current both-pressed interval, if any.
    held_since: Option<f64>,
    last_update: Option<f64>,
}

impl InterlockState {
    pub fn new(debounce_window: f64) -> Result<Self, SafetyError> {
        if !(debounce_window.is_finite() && debounce_window >= 0.0) {
            return Err(SafetyError::InvalidDebounce(debounce_window));
        }
        Ok(Self {
            enabled: false,
            debounce_window,
            held_since: None,
            last_update: None,
        })
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn debounce_window(&self) -> f64 {
        self.debounce_window
    }

    pub fn held_since(&self) -> Option<f64> {
        self.held_since
    }
}

/// Advances the interlock to `now`.
///
/// A both-pressed interval is dated from the pedals' `last_change`, but never earlier
/// than the previous update that saw a pedal released.
pub fn update(
    pedals: &PedalState,
    now: f64,
    state: &InterlockState,
) -> Result<InterlockState, SafetyError> {
    if let Some(last) = state.last_update {
        if now < last {
            return Err(SafetyError::TimeRegression { now, last });
        }
    }
    let mut next = *state;
    next.last_update = Some(now);
    if !pedals.both_pressed() {
        next.enabled = false;
        next.held_since = None;
        return Ok(next);
    }
    let since = match state.held_since {
        Some(t) => t,
        None => {
            let floor = state.last_update.unwrap_or(f64::NEG_INFINITY);
            pedals.last_change.max(floor).min(now)
        }
    };
    next.held_since = Some(since);
    next.enabled = now - since >= state.debounce_window - TIME_EPS;
    Ok(next)
}

/// Passes the twist through when enabled, otherwise returns an exact zero twist.
pub fn gate(tw: &Twist, state: &InterlockState) -> Twist {
    if state.enabled {
        *tw
    } else {
        Twist::zero()
    }
}
