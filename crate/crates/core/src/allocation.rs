//! Optimal per-coil current allocation from sensed couplings.
//!
//! Efficiency is maximized when each current is proportional to its coupling
//! divided by its tank resistance, with the coupling's sign as polarity. The
//! allocation is scaled to the fixed `sum I^2` budget. Channels much weaker
//! than the strongest are switched off, and target currents are turned into
//! PWM duty cycles through the driver's measured transfer table.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{DriveConfig, Phasor, Polarity};

pub const DEFAULT_DEACTIVATION_THRESHOLD: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocationError {
    #[error("no coupling on any active channel; cannot steer")]
    NoCoupling,
    #[error("expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("deactivation threshold must be > 1, got {0}")]
    InvalidThreshold(f64),
    #[error("power budget must be > 0, got {0}")]
    InvalidBudget(f64),
    #[error("invalid PWM table: {0}")]
    InvalidLut(String),
    #[error("target current {target} A exceeds table maximum {max} A (clamped duty {clamped_duty})")]
    Saturated { target: f64, max: f64, clamped_duty: f64 },
    #[error("target current {0} A is negative or not finite")]
    InvalidTarget(f64),
}

pub type Result<T> = std::result::Result<T, AllocationError>;

/// Allocation over every channel with equal tank resistances.
pub fn optimal_allocation(couplings: &[f64], budget: f64) -> Result<DriveConfig> {
    let mask = vec![true; couplings.len()];
    optimal_allocation_masked(couplings, &mask, None, budget)
}

/// Allocation restricted to the channels in `active_mask`.
///
/// With `resistances` given, amplitudes follow `|k_i| / R_i`; otherwise `|k_i|`.
pub fn optimal_allocation_masked(
    couplings: &[f64],
    active_mask: &[bool],
    resistances: Option<&[f64]>,
    budget: f64,
) -> Result<DriveConfig> {
    let n = couplings.len();
    if active_mask.len() != n {
        return Err(AllocationError::LengthMismatch { expected: n, found: active_mask.len() });
    }
    if let Some(r) = resistances {
        if r.len() != n {
            return Err(AllocationError::LengthMismatch { expected: n, found: r.len() });
        }
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(AllocationError::InvalidBudget(budget));
    }
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            if !active_mask[i] {
                return 0.0;
            }
            let r = resistances.map_or(1.0, |r| r[i]);
            couplings[i] / r
        })
        .collect();
    let norm_sq: f64 = weights.iter().map(|w| w * w).sum();
    if !(norm_sq > 0.0) {
        return Err(AllocationError::NoCoupling);
    }
    let scale = (budget / norm_sq).sqrt();
    let currents = weights.iter().map(|w| Phasor::new((w * scale).abs(), Polarity::of(*w))).collect();
    Ok(DriveConfig { currents, active_mask: active_mask.to_vec(), power_budget: budget })
}

/// Active mask: channel `i` is off iff `max |k| / |k_i| > threshold`.
/// The strongest channel always stays on.
pub fn apply_deactivation(magnitudes: &[f64], threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > 1.0) {
        return Err(AllocationError::InvalidThreshold(threshold));
    }
    let strongest = magnitudes.iter().enumerate().fold(None, |best: Option<(usize, f64)>, (i, m)| match best {
        Some((_, b)) if b >= m.abs() => best,
        _ => Some((i, m.abs())),
    });
    let Some((top, max)) = strongest else {
        return Ok(Vec::new());
    };
    Ok(magnitudes.iter().enumerate().map(|(i, m)| i == top || max <= threshold * m.abs()).collect())
}

/// Driver transfer curve from PWM duty cycle to delivered coil current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PwmLut {
    pub duty: Vec<f64>,
    pub current_a: Vec<f64>,
    /// Marks a table that was not measured on hardware.
    #[serde(default)]
    pub synthetic: bool,
}

impl PwmLut {
    pub fn new(duty: Vec<f64>, current_a: Vec<f64>) -> Result<Self> {
        let lut = Self { duty, current_a, synthetic: false };
        lut.validate()?;
        Ok(lut)
    }

    /// Half-bridge fundamental `I_max sin(pi d)` sampled at 0.05 duty steps up
    /// to d = 0.5. Not measured; flagged synthetic.
    pub fn synthetic_half_bridge(max_current_a: f64) -> Self {
        let duty: Vec<f64> = (0..=10).map(|i| i as f64 * 0.05).collect();
        let current_a = duty.iter().map(|d| max_current_a * (std::f64::consts::PI * d).sin()).collect();
        Self { duty, current_a, synthetic: true }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AllocationError::InvalidLut(m.to_string()));
        if self.duty.len() != self.current_a.len() {
            return bad("duty and current_a lengths differ");
        }
        if self.duty.len() < 2 {
            return bad("at least two points required");
        }
        if self.duty[0] != 0.0 || self.current_a[0] != 0.0 {
            return bad("table must start at duty 0, current 0");
        }
        if self.duty.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return bad("duty values must lie in [0, 1]");
        }
        if self.duty.windows(2).any(|w| w[1] <= w[0]) {
            return bad("duty must be strictly increasing");
        }
        if self.current_a.windows(2).any(|w| w[1] < w[0]) {
            return bad("current must be non-decreasing");
        }
        if *self.current_a.last().unwrap() <= 0.0 {
            return bad("maximum current must be > 0");
        }
        Ok(())
    }

    pub fn max_current(&self) -> f64 {
        *self.current_a.last().expect("validated table is non-empty")
    }

    pub fn max_duty(&self) -> f64 {
        *self.duty.last().expect("validated table is non-empty")
    }

    /// Piecewise-linear forward map, clamped to the table.
    pub fn current_from_duty(&self, duty: f64) -> f64 {
        if duty <= self.duty[0] {
            return self.current_a[0];
        }
        let i = self.duty.partition_point(|d| *d < duty);
        if i >= self.duty.len() {
            return self.max_current();
        }
        let (d0, d1) = (self.duty[i - 1], self.duty[i]);
        let (c0, c1) = (self.current_a[i - 1], self.current_a[i]);
        c0 + (c1 - c0) * (duty - d0) / (d1 - d0)
    }

    /// Inverse of [`current_from_duty`](Self::current_from_duty) by
    /// piecewise-linear interpolation. Flat segments resolve to their lowest duty.
    pub fn duty_from_current(&self, target: f64) -> Result<f64> {
        if !(target >= 0.0 && target.is_finite()) {
            return Err(AllocationError::InvalidTarget(target));
        }
        let max = self.max_current();
        if target > max {
            return Err(AllocationError::Saturated { target, max, clamped_duty: self.max_duty() });
        }
        let i = self.current_a.partition_point(|c| *c < target);
        if i == 0 {
            return Ok(self.duty[0]);
        }
        let (c0, c1) = (self.current_a[i - 1], self.current_a[i]);
        let (d0, d1) = (self.duty[i - 1], self.duty[i]);
        Ok(d0 + (d1 - d0) * (target - c0) / (c1 - c0))
    }
}

/// Duty cycle for every channel of `drive`; saturating channels are clamped
/// and reported in the second vector.
pub fn duty_cycles(lut: &PwmLut, drive: &DriveConfig) -> (Vec<f64>, Vec<bool>) {
    drive
        .currents
        .iter()
        .map(|p| match lut.duty_from_current(p.amplitude) {
            Ok(d) => (d, false),
            Err(AllocationError::Saturated { clamped_duty, .. }) => (clamped_duty, true),
            Err(_) => (0.0, true),
        })
        .unzip()
}
