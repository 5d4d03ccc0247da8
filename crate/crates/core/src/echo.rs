//! Behavioral model of the active-echo sensing chain.
//!
//! The implant's echo coil radiates a short tone; by reciprocity each
//! transmitter coil picks up a voltage proportional to its coupling with the
//! implant. The receiver amplifies each channel, detects the peak, and
//! digitizes it with a reverse-ramp single-slope converter: the ramp falls
//! from full scale, so stronger inputs trip their comparator earlier and
//! produce smaller codes. The first channel to finish becomes the polarity
//! reference, and every channel's polarity is reported relative to it.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{self, CoilSpec, MagneticsError, Quadrature, ReceiverModel};

/// Largest tolerated spread of calibrated channel gains, dB.
pub const MAX_GAIN_MISMATCH_DB: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EchoError {
    #[error("every channel is below one LSB; echo must be retried")]
    AllWeak,
    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("invalid receiver chain configuration: {0}")]
    InvalidConfig(String),
    #[error("inconsistent echo reading: {0}")]
    InvalidReading(String),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
}

pub type Result<T> = std::result::Result<T, EchoError>;

/// Analog front end, peak detector and converter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RxChainConfig {
    /// Calibrated voltage gain of each channel at the default gain setting.
    pub channel_gain_db: Vec<f64>,
    pub input_noise_density_dbm_hz: f64,
    pub noise_bandwidth_hz: f64,
    /// Impedance the dBm noise density is referred to.
    pub noise_reference_ohm: f64,
    pub adc_bits: u32,
    pub ramp_full_scale_v: f64,
    pub adc_clock_hz: f64,
    pub ae_frequency_hz: f64,
    pub ae_cycles: u32,
    pub warmup_cycles: u32,
    /// Echo coil drive current amplitude in the implant.
    pub ae_current_a: f64,
    /// Echo coil ring-up/ring-down allowance per burst.
    pub ring_margin_s: f64,
    /// Programmable-gain offsets relative to `channel_gain_db`, ascending; must include 0.
    pub pga_steps_db: Vec<f64>,
    pub noise_enabled: bool,
}

impl RxChainConfig {
    pub fn default_for(channels: usize) -> Self {
        Self {
            channel_gain_db: vec![63.0; channels],
            input_noise_density_dbm_hz: -161.0,
            noise_bandwidth_hz: 500e3,
            noise_reference_ohm: 50.0,
            adc_bits: 8,
            ramp_full_scale_v: 1.0,
            adc_clock_hz: 400e6,
            ae_frequency_hz: 1.35e6,
            ae_cycles: 16,
            warmup_cycles: 8,
            ae_current_a: 5e-3,
            ring_margin_s: 50e-6,
            pga_steps_db: vec![-30.0, -24.0, -18.0, -12.0, -6.0, 0.0, 6.0],
            noise_enabled: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.channel_gain_db.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EchoError::InvalidConfig(m));
        if self.channel_gain_db.is_empty() {
            return bad("channel_gain_db must list one gain per channel".into());
        }
        if self.channel_gain_db.iter().any(|g| !g.is_finite()) {
            return bad("channel gains must be finite".into());
        }
        let (lo, hi) =
            self.channel_gain_db.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), g| (l.min(*g), h.max(*g)));
        if hi - lo > MAX_GAIN_MISMATCH_DB + 1e-12 {
            return bad(format!("inter-channel gain mismatch {:.3} dB exceeds {MAX_GAIN_MISMATCH_DB} dB", hi - lo));
        }
        if !(1..=24).contains(&self.adc_bits) {
            return bad(format!("adc_bits must be in 1..=24, got {}", self.adc_bits));
        }
        for (name, v) in [
            ("noise_bandwidth_hz", self.noise_bandwidth_hz),
            ("noise_reference_ohm", self.noise_reference_ohm),
            ("ramp_full_scale_v", self.ramp_full_scale_v),
            ("adc_clock_hz", self.adc_clock_hz),
            ("ae_frequency_hz", self.ae_frequency_hz),
            ("ae_current_a", self.ae_current_a),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0"));
            }
        }
        if self.ae_cycles == 0 {
            return bad("ae_cycles must be >= 1".into());
        }
        if !(self.ring_margin_s >= 0.0) {
            return bad("ring_margin_s must be >= 0".into());
        }
        if !self.pga_steps_db.contains(&0.0) || self.pga_steps_db.windows(2).any(|w| w[1] <= w[0]) {
            return bad("pga_steps_db must be strictly ascending and contain 0".into());
        }
        Ok(())
    }

    pub fn omega_ae(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.ae_frequency_hz
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.adc_bits) - 1
    }

    pub fn lsb_v(&self) -> f64 {
        self.ramp_full_scale_v / (1u64 << self.adc_bits) as f64
    }

    /// Input-referred RMS noise integrated over the noise bandwidth, volts.
    pub fn noise_sigma_v(&self) -> f64 {
        let watts_per_hz = 10f64.powf((self.input_noise_density_dbm_hz - 30.0) / 10.0);
        (watts_per_hz * self.noise_reference_ohm * self.noise_bandwidth_hz).sqrt()
    }

    /// Copy with every channel gain shifted by `offset_db`.
    pub fn with_gain_offset(&self, offset_db: f64) -> Self {
        let mut out = self.clone();
        out.channel_gain_db.iter_mut().for_each(|g| *g += offset_db);
        out
    }

    pub fn default_pga_index(&self) -> usize {
        self.pga_steps_db.iter().position(|g| *g == 0.0).unwrap_or(0)
    }
}

/// Noise realization for one sensing burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSource {
    Noiseless,
    Seeded(u64),
}

/// Digitized output of one echo burst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoReading {
    /// Reverse-ramp codes; smaller means larger amplitude.
    pub amplitude_codes: Vec<u32>,
    /// Channels in the order their conversions finished.
    pub completion_order: Vec<usize>,
    pub reference_channel: usize,
    /// 0 = same polarity as the reference, 1 = opposite.
    pub relative_polarities: Vec<u8>,
    /// Channels whose amplified peak reached the ramp's full scale.
    pub saturated: Vec<bool>,
    /// Gains the burst was taken with.
    pub channel_gain_db: Vec<f64>,
}

impl EchoReading {
    pub fn validate(&self) -> Result<()> {
        let n = self.amplitude_codes.len();
        let bad = |m: &str| Err(EchoError::InvalidReading(m.to_string()));
        if self.completion_order.len() != n
            || self.relative_polarities.len() != n
            || self.saturated.len() != n
            || self.channel_gain_db.len() != n
        {
            return bad("per-channel vectors differ in length");
        }
        let mut seen = vec![false; n];
        for &i in &self.completion_order {
            if i >= n || seen[i] {
                return bad("completion_order is not a permutation");
            }
            seen[i] = true;
        }
        if self.completion_order.first() != Some(&self.reference_channel) {
            return bad("reference channel must finish first");
        }
        if self.relative_polarities[self.reference_channel] != 0 {
            return bad("reference polarity bit must be 0");
        }
        if self.relative_polarities.iter().any(|b| *b > 1) {
            return bad("polarity bits must be 0 or 1");
        }
        let codes: Vec<u32> = self.completion_order.iter().map(|&i| self.amplitude_codes[i]).collect();
        if codes.windows(2).any(|w| w[1] < w[0]) {
            return bad("codes must not decrease along completion order");
        }
        Ok(())
    }

    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|s| *s)
    }
}

/// Voltages induced on the transmitter coils by the echo burst, with the
/// drivers in high impedance (unloaded tanks): `V_i = jw M_i I_ae`.
pub fn ae_forward(rx: &ReceiverModel, tx_coils: &[CoilSpec], ae_current: f64, omega_ae: f64) -> Result<Vec<Complex64>> {
    ae_forward_with(rx, tx_coils, ae_current, omega_ae, &Quadrature::default())
}

pub fn ae_forward_with(
    rx: &ReceiverModel,
    tx_coils: &[CoilSpec],
    ae_current: f64,
    omega_ae: f64,
    quad: &Quadrature,
) -> Result<Vec<Complex64>> {
    tx_coils
        .iter()
        .map(|c| {
            let m = magnetics::ae_mutual_with(c, rx, quad)?;
            Ok(Complex64::new(0.0, omega_ae * m * ae_current))
        })
        .collect()
}

/// Polarity bits of `signs` relative to channel `reference`.
pub fn relative_polarities(signs: &[f64], reference: usize) -> Vec<u8> {
    let r = signs[reference] < 0.0;
    signs.iter().map(|s| u8::from((*s < 0.0) != r)).collect()
}

/// Reverse-ramp code of an amplified peak amplitude.
pub fn ramp_code(amplitude_v: f64, cfg: &RxChainConfig) -> u32 {
    let steps = ((cfg.ramp_full_scale_v - amplitude_v) / cfg.lsb_v()).floor();
    steps.clamp(0.0, cfg.max_code() as f64) as u32
}

/// Amplifies, adds noise, peak-detects, digitizes and polarity-detects one burst.
pub fn sense(voltages: &[Complex64], cfg: &RxChainConfig, noise: NoiseSource) -> Result<EchoReading> {
    let n = voltages.len();
    if n != cfg.channels() {
        return Err(EchoError::ChannelMismatch { expected: cfg.channels(), found: n });
    }
    // Common phase: the echo reaches every coil in phase or in antiphase.
    let strongest =
        voltages.iter().copied().fold(Complex64::new(0.0, 0.0), |a, v| if v.norm() > a.norm() { v } else { a });
    let phase = if strongest.norm() > 0.0 { strongest / strongest.norm() } else { Complex64::new(1.0, 0.0) };
    let mut rng = match noise {
        NoiseSource::Seeded(seed) if cfg.noise_enabled => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let normal = Normal::new(0.0, cfg.noise_sigma_v()).expect("noise sigma is finite and non-negative");
    let analog: Vec<f64> = voltages
        .iter()
        .zip(&cfg.channel_gain_db)
        .map(|(v, g)| {
            let signed = (v * phase.conj()).re;
            let noisy = signed + rng.as_mut().map_or(0.0, |r| normal.sample(r));
            noisy * 10f64.powf(g / 20.0)
        })
        .collect();
    let amplitudes: Vec<f64> = analog.iter().map(|a| a.abs()).collect();
    if amplitudes.iter().all(|a| *a < cfg.lsb_v()) {
        return Err(EchoError::AllWeak);
    }
    let mut completion_order: Vec<usize> = (0..n).collect();
    completion_order.sort_by(|&a, &b| amplitudes[b].total_cmp(&amplitudes[a]));
    let reference_channel = completion_order[0];
    Ok(EchoReading {
        amplitude_codes: amplitudes.iter().map(|a| ramp_code(*a, cfg)).collect(),
        relative_polarities: relative_polarities(&analog, reference_channel),
        saturated: amplitudes.iter().map(|a| *a >= cfg.ramp_full_scale_v).collect(),
        completion_order,
        reference_channel,
        channel_gain_db: cfg.channel_gain_db.clone(),
    })
}

/// Signed coupling estimates recovered from a reading, in henries of
/// echo-coil mutual inductance.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedCouplings {
    pub couplings: Vec<f64>,
    /// Saturated channels: their estimates are lower bounds and the gain
    /// should be reduced.
    pub saturated: Vec<bool>,
}

impl DecodedCouplings {
    pub fn lower_bound_warning(&self) -> bool {
        self.saturated.iter().any(|s| *s)
    }
}

/// Inverts the code mapping (bin midpoints), divides out the channel gain and
/// the `w_ae I_ae` scale, and applies the polarity bits. Channels at the
/// bottom code carry no detectable signal and decode to zero.
pub fn decode_couplings(reading: &EchoReading, cfg: &RxChainConfig) -> Result<DecodedCouplings> {
    reading.validate()?;
    let scale = cfg.omega_ae() * cfg.ae_current_a;
    let couplings = reading
        .amplitude_codes
        .iter()
        .zip(&reading.relative_polarities)
        .zip(&reading.channel_gain_db)
        .map(|((&code, &pol), g)| {
            if code >= cfg.max_code() {
                return 0.0;
            }
            let amplitude = if code == 0 {
                cfg.ramp_full_scale_v
            } else {
                cfg.ramp_full_scale_v - (code as f64 + 0.5) * cfg.lsb_v()
            };
            let sign = if pol == 0 { 1.0 } else { -1.0 };
            sign * amplitude / 10f64.powf(g / 20.0) / scale
        })
        .collect();
    Ok(DecodedCouplings { couplings, saturated: reading.saturated.clone() })
}

/// Duration of one echo operation: oscillator warm-up and burst cycles,
/// ring-up/down margin, and a full-range ramp conversion.
pub fn ae_cycle_duration(cfg: &RxChainConfig, ring_updown_margin_s: f64) -> f64 {
    let burst = (cfg.warmup_cycles + cfg.ae_cycles) as f64 / cfg.ae_frequency_hz;
    let conversion = (1u64 << cfg.adc_bits) as f64 / cfg.adc_clock_hz;
    burst + ring_updown_margin_s.max(0.0) + conversion
}
