use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::SimError;
use crate::spatial::{Twist, Vec3};

pub const TREMOR_COMPONENTS: usize = 8;

/// Synthetic operator tremor: band-limited linear velocity noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TremorModel {
    /// RMS of the injected velocity on each axis (m/s).
    pub amplitude: f64,
    /// Frequency band `[low, high]` (Hz).
    #[serde(default = "default_band")]
    pub band: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

fn default_band() -> [f64; 2] {
    [6.0, 12.0]
}

impl TremorModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let [low, high] = self.band;
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(SimError::InvalidModel("tremor amplitude must be >= 0".into()));
        }
        if !(low.is_finite() && high.is_finite() && 0.0 <= low && low < high) {
            return Err(SimError::InvalidModel(format!(
                "tremor band must satisfy 0 <= low < high, got [{low}, {high}]"
            )));
        }
        Ok(())
    }
}

/// Precomputed sum-of-sinusoids generator for a [`TremorModel`].
///
/// Each axis carries [`TREMOR_COMPONENTS`] sinusoids at the centres of equal
/// sub-bands, with independent seeded phases.
#[derive(Debug, Clone, PartialEq)]
pub struct Tremor {
    model: TremorModel,
    frequencies: [f64; TREMOR_COMPONENTS],
    phases: [[f64; TREMOR_COMPONENTS]; 3],
    component_amplitude: f64,
}

impl Tremor {
    pub fn new(model: TremorModel) -> Result<Self, SimError> {
        model.validate()?;
        let [low, high] = model.band;
        let width = (high - low) / TREMOR_COMPONENTS as f64;
        let mut frequencies = [0.0; TREMOR_COMPONENTS];
        for (i, f) in frequencies.iter_mut().enumerate() {
            *f = low + (i as f64 + 0.5) * width;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        let mut phases = [[0.0; TREMOR_COMPONENTS]; 3];
        for axis in phases.iter_mut() {
            for p in axis.iter_mut() {
                *p = rng.gen_range(0.0..TAU);
            }
        }
        // Per-axis RMS of N equal sinusoids is a·sqrt(N/2).
        let component_amplitude = model.amplitude * (2.0 / TREMOR_COMPONENTS as f64).sqrt();
        Ok(Self {
            model,
            frequencies,
            phases,
            component_amplitude,
        })
    }

    pub fn model(&self) -> &TremorModel {
        &self.model
    }

    pub fn frequencies(&self) -> &[f64; TREMOR_COMPONENTS] {
        &self.frequencies
    }

    pub fn component_amplitude(&self) -> f64 {
        self.component_amplitude
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        let mut v = Vec3::zeros();
        for (axis, phases) in self.phases.iter().enumerate() {
            v[axis] = self
                .frequencies
                .iter()
                .zip(phases)
                .map(|(f, p)| (TAU * f * t + p).sin())
                .sum::<f64>()
                * self.component_amplitude;
        }
        v
    }
}

/// Adds the tremor velocity at time `t` to the linear part of `tw`.
pub fn inject_tremor(tw: &Twist, tremor: &Tremor, t: f64) -> Twist {
    if tremor.model.amplitude == 0.0 {
        return *tw;
    }
    Twist {
        linear: tw.linear + tremor.velocity(t),
        angular: tw.angular,
    }
}
