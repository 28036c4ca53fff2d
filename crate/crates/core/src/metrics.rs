//! Stability and signal features: RMS of the acceleration norm, windowed RMS and
//! windowed median frequency.

use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

use crate::spatial::Vec3;

pub const MIN_MDF_WINDOW: usize = 64;

/// Relative slack when testing the cumulative spectrum against half the total power,
/// so that an exact tie between two lines resolves to the lower one despite FFT
/// rounding.
const HALF_POWER_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("sample rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("window of {got} samples is shorter than the {needed}-sample minimum")]
    WindowTooShort { needed: usize, got: usize },
    #[error("hop must be positive, got {0} s")]
    InvalidHop(f64),
}

/// Uniformly sampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal<T> {
    rate: f64,
    samples: Vec<T>,
}

impl<T> SampledSignal<T> {
    pub fn new(rate: f64, samples: Vec<T>) -> Result<Self, MetricsError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(MetricsError::InvalidRate(rate));
        }
        Ok(Self { rate, samples })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Feature values, one per window; window `i` starts at `i · hop` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub window: f64,
    pub hop: f64,
    pub values: Vec<f64>,
}

impl FeatureSeries {
    pub fn window_starts(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |i| i as f64 * self.hop)
    }
}

/// Second-order central difference; the output has two fewer samples and sample `i`
/// is the acceleration at input sample `i + 1`.
pub fn acceleration(sig: &SampledSignal<Vec3>) -> Result<SampledSignal<Vec3>, MetricsError> {
    let n = sig.len();
    if n < 3 {
        return Err(MetricsError::TooFewSamples { needed: 3, got: n });
    }
    let inv_dt2 = sig.rate * sig.rate;
    let samples = sig
        .samples
        .windows(3)
        .map(|w| (w[2] - w[1] * 2.0 + w[0]) * inv_dt2)
        .collect();
    SampledSignal::new(sig.rate, samples)
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// RMS over the whole trace of the Euclidean norm of the acceleration.
pub fn rms_accel_norm(positions: &SampledSignal<Vec3>) -> Result<f64, MetricsError> {
    let acc = acceleration(positions)?;
    let sq: f64 = acc.samples.iter().map(|a| a.norm_squared()).sum();
    Ok((sq / acc.len() as f64).sqrt())
}

/// Number of full windows of `window` samples advancing by `hop` samples over `n`
/// samples: `floor((n − window) / hop) + 1` when `n ≥ window`, else zero.
pub fn window_count(n: usize, window: usize, hop: usize) -> usize {
    if window == 0 || hop == 0 || n < window {
        0
    } else {
        (n - window) / hop + 1
    }
}

fn window_geometry(
    rate: f64,
    window: f64,
    hop: f64,
    min_window: usize,
) -> Result<(usize, usize), MetricsError> {
    if !(hop.is_finite() && hop > 0.0) {
        return Err(MetricsError::InvalidHop(hop));
    }
    let w = if window.is_finite() && window > 0.0 {
        (window * rate).round() as usize
    } else {
        0
    };
    if w < min_window {
        return Err(MetricsError::WindowTooShort {
            needed: min_window,
            got: w,
        });
    }
    let h = ((hop * rate).round() as usize).max(1);
    Ok((w, h))
}

fn windowed(
    sig: &SampledSignal<f64>,
    window: f64,
    hop: f64,
    min_window: usize,
    mut feature: impl FnMut(&[f64]) -> f64,
) -> Result<FeatureSeries, MetricsError> {
    let (w, h) = window_geometry(sig.rate, window, hop, min_window)?;
    let values = (0..window_count(sig.len(), w, h))
        .map(|i| feature(&sig.samples[i * h..i * h + w]))
        .collect();
    Ok(FeatureSeries {
        window,
        hop,
        values,
    })
}

/// Per-window RMS. A trailing partial window is discarded.
pub fn window_rms(sig: &SampledSignal<f64>, window: f64, hop: f64) -> Result<FeatureSeries, MetricsError> {
    windowed(sig, window, hop, 2, rms)
}

/// Per-window median frequency (Hz). A trailing partial window is discarded.
pub fn window_mdf(sig: &SampledSignal<f64>, window: f64, hop: f64) -> Result<FeatureSeries, MetricsError> {
    let mut planner = FftPlanner::new();
    let rate = sig.rate;
    windowed(sig, window, hop, MIN_MDF_WINDOW, |w| {
        median_frequency_with(&mut planner, w, rate)
    })
}

/// Median frequency of one window: mean removed, untapered one-sided periodogram, the
/// first bin whose cumulative power reaches half the total. An all-zero window
/// (after mean removal) reports 0 Hz.
pub fn median_frequency(samples: &[f64], rate: f64) -> f64 {
    median_frequency_with(&mut FftPlanner::new(), samples, rate)
}

fn median_frequency_with(planner: &mut FftPlanner<f64>, samples: &[f64], rate: f64) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|x| Complex::new(x - mean, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);

    let half = n / 2;
    let power: Vec<f64> = (0..=half)
        .map(|k| {
            let p = buf[k].norm_sqr();
            // Interior bins carry the mirrored negative frequency too.
            if k == 0 || (n.is_multiple_of(2) && k == half) {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    let total: f64 = power.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let target = 0.5 * total * (1.0 - HALF_POWER_SLACK);
    let mut cumulative = 0.0;
    for (k, p) in power.iter().enumerate() {
        cumulative += p;
        if cumulative >= target {
            return k as f64 * rate / n as f64;
        }
    }
    half as f64 * rate / n as f64
}
