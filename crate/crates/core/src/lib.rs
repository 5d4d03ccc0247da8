//! Simulation of omnidirectional magnetoelectric wireless power transfer with
//! a multi-coil transmitter steered by active-echo coupling sensing.
//!
//! The crate is organized bottom-up:
//!
//! * [`magnetics`]: fields and mutual inductances of posed circular coils.
//! * [`circuit`]: phasor network solve, efficiency and its Cauchy-Schwarz bound.
//! * [`allocation`]: optimal current allocation, channel deactivation, PWM table.
//! * [`echo`]: behavioral model of the echo sensing chain.
//! * [`arraydesign`]: mutual-inductance-cancelled coil placement.
//! * [`paspectrum`]: harmonic content of the three-level echo transmitter.
//! * [`controlloop`]: operation state machine, echo updates, tracking and baselines.
//! * [`scenario`], [`sweep`], [`report`]: configuration, sweeps and output files.

pub mod allocation;
pub mod arraydesign;
pub mod circuit;
pub mod controlloop;
pub mod echo;
pub mod magnetics;
pub mod paspectrum;
pub mod quadrature;
pub mod report;
pub mod scenario;
pub mod special;
pub mod sweep;

use thiserror::Error;

/// Vacuum permeability, H/m.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
/// Millimetres to metres.
pub const MM: f64 = 1e-3;

pub use circuit::{CouplingState, DriveConfig, Phasor, Polarity};
pub use magnetics::{CoilSpec, Pose, ReceiverModel, Vec3, Winding};
pub use scenario::ScenarioConfig;

/// Crate-level error for the orchestration layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Magnetics(#[from] magnetics::MagneticsError),
    #[error(transparent)]
    Circuit(#[from] circuit::CircuitError),
    #[error(transparent)]
    Allocation(#[from] allocation::AllocationError),
    #[error(transparent)]
    Echo(#[from] echo::EchoError),
    #[error(transparent)]
    Protocol(#[from] controlloop::ProtocolError),
    #[error(transparent)]
    ArrayDesign(#[from] arraydesign::ArrayDesignError),
    #[error(transparent)]
    Spectrum(#[from] paspectrum::SpectrumError),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
}

pub type Result<T> = std::result::Result<T, Error>;
