//! Harmonic content of the three-level echo transmitter output.
//!
//! The waveform is +1 for a pulse of `duty` of the period, 0, then -1 for
//! another pulse of the same width half a period later. Its Fourier series
//! holds odd harmonics only, `b_n = (4 / (n pi)) sin(n pi duty)`. Amplitudes
//! here are normalized to the square wave's fundamental `4 / pi`, so the square
//! wave (duty 0.5) has `b_n = 1/n`.

use serde::Serialize;
use thiserror::Error;

/// Suppression reported where the third harmonic vanishes exactly.
pub const SUPPRESSION_CAP_DB: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("duty must lie in (0, 0.5], got {0}")]
    InvalidDuty(f64),
    #[error("harmonic count must be >= 1")]
    InvalidOrder,
}

pub type Result<T> = std::result::Result<T, SpectrumError>;

/// `sin(pi x)`, exact at integers and half-integers.
pub fn sin_pi(x: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).round();
    if r == r.trunc() {
        0.0
    } else if r == 0.5 {
        1.0
    } else if r == -0.5 {
        -1.0
    } else {
        (std::f64::consts::PI * r).sin()
    }
}

fn check_duty(duty: f64) -> Result<()> {
    if duty > 0.0 && duty <= 0.5 {
        Ok(())
    } else {
        Err(SpectrumError::InvalidDuty(duty))
    }
}

/// Normalized amplitudes of harmonics `1..=n_max` (index `n - 1`).
pub fn three_level_spectrum(duty: f64, n_max: usize) -> Result<Vec<f64>> {
    check_duty(duty)?;
    if n_max == 0 {
        return Err(SpectrumError::InvalidOrder);
    }
    Ok((1..=n_max).map(|n| if n % 2 == 0 { 0.0 } else { sin_pi(n as f64 * duty) / n as f64 }).collect())
}

/// Mean-square value of the unit three-level waveform.
pub fn waveform_power(duty: f64) -> f64 {
    2.0 * duty
}

/// Power carried by the first `n_max` harmonics, in the waveform's units
/// (the normalization is undone).
pub fn harmonic_power(duty: f64, n_max: usize) -> Result<f64> {
    let scale = 4.0 / std::f64::consts::PI;
    Ok(three_level_spectrum(duty, n_max)?.iter().map(|b| (scale * b).powi(2) / 2.0).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tradeoff {
    pub duty: f64,
    /// Fundamental drop against the square wave, dB (positive = lower).
    pub fundamental_loss_db: f64,
    /// Third-harmonic drop against the square wave's third harmonic, dB.
    pub third_harmonic_suppression_db: f64,
}

pub fn harmonic_tradeoff(duty: f64) -> Result<Tradeoff> {
    let b = three_level_spectrum(duty, 3)?;
    let third = (3.0 * b[2]).abs();
    let suppression = if third == 0.0 { SUPPRESSION_CAP_DB } else { (-20.0 * third.log10()).min(SUPPRESSION_CAP_DB) };
    Ok(Tradeoff { duty, fundamental_loss_db: -20.0 * b[0].log10(), third_harmonic_suppression_db: suppression })
}

/// Tradeoff at `steps` evenly spaced duties across `[lo, hi]`.
pub fn duty_sweep(lo: f64, hi: f64, steps: usize) -> Result<Vec<Tradeoff>> {
    check_duty(lo)?;
    check_duty(hi)?;
    if steps < 2 {
        return Ok(vec![harmonic_tradeoff(lo)?]);
    }
    (0..steps).map(|i| harmonic_tradeoff(lo + (hi - lo) * i as f64 / (steps - 1) as f64)).collect()
}
