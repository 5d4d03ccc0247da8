//! Scenario files: every parameter of a simulation run in one TOML document.
//!
//! Parsing is strict. Unknown keys and duplicated keys are rejected by the
//! deserializer, then every nested invariant is checked and reported with the
//! dotted path of the offending field.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::PwmLut;
use crate::echo::RxChainConfig;
use crate::magnetics::{CoilSpec, ReceiverModel, Vec3};

/// The bundled scenario: three overlapped 4.2 cm pancake coils with cancelled
/// mutual inductance, the implant 20 mm above their centroid.
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.toml");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub rule: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid scenario: {}", list(.0))]
    Invalid(Vec<FieldError>),
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("cannot serialize scenario: {0}")]
    Emit(String),
}

fn list(errors: &[FieldError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

/// Operation-flow timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Storage-capacitor charge time before the first downlink.
    pub charge_time_s: f64,
    /// Delay between a downlink command and the task starting.
    pub downlink_latency_s: f64,
    /// Echo update rate during tracking.
    pub activation_hz: f64,
    /// Implant identifier checked on every downlink command.
    pub implant_id: u32,
}

/// Single-coil reference transmitters. The small one is the first array coil
/// moved to the origin; the large one is given here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baselines {
    pub single_large: CoilSpec,
}

/// Implant motion for `simulate` runs. Angles tilt the film axis from +z
/// towards +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Static {
        position_mm: Vec3,
        angle_deg: f64,
    },
    /// `angle(t) = center + amplitude sin(2 pi f t)`.
    XzRotation {
        position_mm: Vec3,
        center_deg: f64,
        amplitude_deg: f64,
        frequency_hz: f64,
    },
    /// Straight constant-speed move over the whole run.
    Lateral {
        start_mm: Vec3,
        end_mm: Vec3,
        angle_deg: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub duration_s: f64,
    /// Trajectory and power-evaluation sample rate.
    pub sample_hz: f64,
    pub trajectory: TrajectorySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub power_frequency_hz: f64,
    /// Constant `sum I_i^2` over the transmitter coils, A^2 (RMS).
    pub budget: f64,
    pub deactivation_threshold: f64,
    pub coils: Vec<CoilSpec>,
    pub receiver: ReceiverModel,
    pub rx_chain: RxChainConfig,
    pub pwm_lut: PwmLut,
    pub baselines: Baselines,
    pub protocol: ProtocolConfig,
    pub simulation: SimulationConfig,
}

impl ScenarioConfig {
    pub fn bundled_default() -> Self {
        parse_scenario(DEFAULT_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
        parse_scenario(&text)
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.power_frequency_hz
    }

    pub fn channels(&self) -> usize {
        self.coils.len()
    }

    pub fn resistances(&self) -> Vec<f64> {
        self.coils.iter().map(|c| c.series_resistance_ohm).collect()
    }

    /// The small single-coil baseline: the first array coil at the origin.
    pub fn single_small(&self) -> CoilSpec {
        let mut c = self.coils[0].clone().with_center(Vec3::zeros());
        c.name = "single_small".into();
        c
    }

    pub fn single_large(&self) -> CoilSpec {
        self.baselines.single_large.clone()
    }

    /// Every invariant, collected rather than stopping at the first failure.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut push = |path: String, rule: String| errors.push(FieldError { path, rule });
        let positive = |v: f64| v > 0.0 && v.is_finite();

        if !positive(self.power_frequency_hz) {
            push("power_frequency_hz".into(), "must be > 0".into());
        }
        if !positive(self.budget) {
            push("budget".into(), "must be > 0".into());
        }
        if !(self.deactivation_threshold > 1.0) {
            push("deactivation_threshold".into(), "must be > 1".into());
        }
        if self.coils.is_empty() {
            push("coils".into(), "must list at least one coil".into());
        }
        for (i, c) in self.coils.iter().enumerate() {
            if let Err(e) = c.validate() {
                push(format!("coils[{i}]"), e.to_string());
            }
        }
        if let Err(e) = self.receiver.validate() {
            push("receiver".into(), e.to_string());
        }
        if let Err(e) = self.rx_chain.validate() {
            push("rx_chain".into(), e.to_string());
        }
        if self.rx_chain.channels() != self.coils.len() {
            push(
                "rx_chain.channel_gain_db".into(),
                format!("expected one gain per coil ({}), found {}", self.coils.len(), self.rx_chain.channels()),
            );
        }
        if let Err(e) = self.pwm_lut.validate() {
            push("pwm_lut".into(), e.to_string());
        }
        if let Err(e) = self.baselines.single_large.validate() {
            push("baselines.single_large".into(), e.to_string());
        }
        let p = &self.protocol;
        if !(p.charge_time_s >= 0.0 && p.charge_time_s.is_finite()) {
            push("protocol.charge_time_s".into(), "must be >= 0".into());
        }
        if !(p.downlink_latency_s >= 0.0 && p.downlink_latency_s.is_finite()) {
            push("protocol.downlink_latency_s".into(), "must be >= 0".into());
        }
        if !positive(p.activation_hz) {
            push("protocol.activation_hz".into(), "must be > 0".into());
        }
        let s = &self.simulation;
        if !positive(s.duration_s) {
            push("simulation.duration_s".into(), "must be > 0".into());
        }
        if !positive(s.sample_hz) {
            push("simulation.sample_hz".into(), "must be > 0".into());
        } else if positive(p.activation_hz) && p.activation_hz > s.sample_hz {
            push("protocol.activation_hz".into(), "must not exceed simulation.sample_hz".into());
        }
        if let TrajectorySpec::XzRotation { frequency_hz, .. } = s.trajectory {
            if !(frequency_hz >= 0.0 && frequency_hz.is_finite()) {
                push("simulation.trajectory.frequency_hz".into(), "must be >= 0".into());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errors))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ScenarioError::Emit(e.to_string()))
    }
}

/// `[[coils]]` tables for pasting into a scenario file.
pub fn coils_fragment(coils: &[CoilSpec]) -> Result<String> {
    #[derive(Serialize)]
    struct Fragment<'a> {
        coils: &'a [CoilSpec],
    }
    toml::to_string(&Fragment { coils }).map_err(|e| ScenarioError::Emit(e.to_string()))
}

/// Strict parse followed by full validation.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ScenarioError::Syntax { line, column, message: e.message().trim().to_string() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}
