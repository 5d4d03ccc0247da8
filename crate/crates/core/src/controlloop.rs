//! Closed-loop operation: the implant's operation-flow state machine, echo
//! updates of the transmitter drive, tracking runs over implant trajectories
//! and the baseline comparisons.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{self, AllocationError};
use crate::circuit::{self, CircuitError, CouplingState, DriveConfig};
use crate::echo::{self, EchoError, EchoReading, NoiseSource, RxChainConfig};
use crate::magnetics::{self, CoilSpec, MagneticsError, Pose, Quadrature, ReceiverModel};
use crate::scenario::{ScenarioConfig, SimulationConfig, TrajectorySpec};

/// Relative slack for activation-boundary checks on the simulation clock.
const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Charging,
    Downlink,
    AeSensing,
    Stimulating,
}

impl Phase {
    /// Whether the transmitter delivers power in this phase.
    pub fn delivers_power(self) -> bool {
        matches!(self, Phase::Charging | Phase::Downlink | Phase::Stimulating)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Charging => "charging",
            Phase::Downlink => "downlink",
            Phase::AeSensing => "ae_sensing",
            Phase::Stimulating => "stimulating",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Programmed stimulation: pulses of `amplitude_v` and `pulse_width_s`,
/// separated (start to start) by `intervals_s` used cyclically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulationParams {
    pub amplitude_v: f64,
    pub pulse_width_s: f64,
    pub intervals_s: Vec<f64>,
    pub pulses: usize,
}

impl Default for StimulationParams {
    fn default() -> Self {
        Self { amplitude_v: 3.0, pulse_width_s: 0.4e-3, intervals_s: vec![10e-3, 20e-3], pulses: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulationPulse {
    pub start_s: f64,
    pub width_s: f64,
    pub amplitude_v: f64,
}

/// Pulse timing trace for `params` starting at `start_s`.
pub fn stimulation_trace(params: &StimulationParams, start_s: f64) -> Vec<StimulationPulse> {
    let mut t = start_s;
    (0..params.pulses)
        .map(|k| {
            let pulse = StimulationPulse { start_s: t, width_s: params.pulse_width_s, amplitude_v: params.amplitude_v };
            if !params.intervals_s.is_empty() {
                t += params.intervals_s[k % params.intervals_s.len()];
            }
            pulse
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Task {
    AeSensing,
    Stimulate(StimulationParams),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    PowerOn,
    PowerOff,
    /// Moves the simulation clock forward.
    Advance(f64),
    ChargeComplete,
    /// Downlink command addressed by implant identifier.
    Command {
        token: u32,
        task: Task,
    },
    AeTrigger,
    AeComplete,
    StimulationDone,
}

impl Event {
    fn name(&self) -> &'static str {
        match self {
            Event::PowerOn => "power_on",
            Event::PowerOff => "power_off",
            Event::Advance(_) => "advance",
            Event::ChargeComplete => "charge_complete",
            Event::Command { .. } => "command",
            Event::AeTrigger => "ae_trigger",
            Event::AeComplete => "ae_complete",
            Event::StimulationDone => "stimulation_done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("event `{event}` is not legal in phase `{phase}`")]
    IllegalTransition { phase: Phase, event: &'static str },
    #[error("charging for {elapsed_s} s, needs {required_s} s")]
    ChargeIncomplete { elapsed_s: f64, required_s: f64 },
    #[error("echo trigger at t = {t_s} s is not on an activation boundary")]
    NotAtBoundary { t_s: f64 },
    #[error("time step must be finite and >= 0, got {0}")]
    InvalidTimeStep(f64),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Echo(#[from] EchoError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// Fixed parameters of the state machine.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTiming {
    pub charge_time_s: f64,
    pub downlink_latency_s: f64,
    pub activation_hz: f64,
    pub implant_id: u32,
    pub ae_cycle_s: f64,
}

impl LoopTiming {
    pub fn from_scenario(s: &ScenarioConfig) -> Self {
        Self {
            charge_time_s: s.protocol.charge_time_s,
            downlink_latency_s: s.protocol.downlink_latency_s,
            activation_hz: s.protocol.activation_hz,
            implant_id: s.protocol.implant_id,
            ae_cycle_s: echo::ae_cycle_duration(&s.rx_chain, s.rx_chain.ring_margin_s),
        }
    }

    fn at_boundary(&self, t: f64) -> bool {
        let periods = t * self.activation_hz;
        (periods - periods.round()).abs() <= BOUNDARY_TOL * periods.abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    pub phase: Phase,
    pub current_drive: DriveConfig,
    pub last_reading: Option<EchoReading>,
    pub sim_time: f64,
    /// Clock value when the current phase was entered.
    pub phase_started: f64,
    /// Phase to return to after an echo burst.
    pub resume_phase: Option<Phase>,
    /// Index into the receiver's programmable-gain steps.
    pub gain_index: usize,
    /// Set when the last echo update found every channel too weak.
    pub retry_pending: bool,
    pub stimulation_trace: Vec<StimulationPulse>,
}

impl LoopState {
    pub fn new(channels: usize, budget: f64, rx_chain: &RxChainConfig) -> Self {
        Self {
            phase: Phase::Idle,
            current_drive: DriveConfig::off(channels, budget),
            last_reading: None,
            sim_time: 0.0,
            phase_started: 0.0,
            resume_phase: None,
            gain_index: rx_chain.default_pga_index(),
            retry_pending: false,
            stimulation_trace: Vec::new(),
        }
    }

    /// Drive actually applied to the coils: zero outside power phases.
    pub fn effective_drive(&self) -> DriveConfig {
        if self.phase.delivers_power() {
            self.current_drive.clone()
        } else {
            DriveConfig::off(self.current_drive.currents.len(), self.current_drive.power_budget)
        }
    }

    fn enter(mut self, phase: Phase) -> Self {
        self.phase = phase;
        self.phase_started = self.sim_time;
        self
    }
}

/// Deterministic transition function of the operation flow.
pub fn step(timing: &LoopTiming, state: LoopState, event: Event) -> Result<LoopState> {
    use Phase::*;
    let illegal = |s: &LoopState, e: &Event| ProtocolError::IllegalTransition { phase: s.phase, event: e.name() };
    match (&state.phase, &event) {
        (_, Event::Advance(dt)) => {
            if !(*dt >= 0.0 && dt.is_finite()) {
                return Err(ProtocolError::InvalidTimeStep(*dt));
            }
            let mut s = state;
            s.sim_time += dt;
            Ok(s)
        }
        (Idle, Event::PowerOn) => Ok(state.enter(Charging)),
        (Idle, _) => Err(illegal(&state, &event)),
        (_, Event::PowerOff) => {
            let mut s = state.enter(Idle);
            s.resume_phase = None;
            Ok(s)
        }
        (Charging, Event::ChargeComplete) => {
            let elapsed = state.sim_time - state.phase_started;
            if elapsed + BOUNDARY_TOL < timing.charge_time_s {
                return Err(ProtocolError::ChargeIncomplete { elapsed_s: elapsed, required_s: timing.charge_time_s });
            }
            Ok(state.enter(Downlink))
        }
        (Downlink, Event::Command { token, task }) => {
            let mut s = state.clone();
            s.sim_time += timing.downlink_latency_s;
            if *token != timing.implant_id {
                return Ok(s.enter(Charging));
            }
            match task {
                Task::AeSensing => {
                    s.resume_phase = Some(Charging);
                    Ok(s.enter(AeSensing))
                }
                Task::Stimulate(params) => {
                    s.stimulation_trace = stimulation_trace(params, s.sim_time);
                    Ok(s.enter(Stimulating))
                }
            }
        }
        (Charging | Stimulating, Event::AeTrigger) => {
            if !timing.at_boundary(state.sim_time) {
                return Err(ProtocolError::NotAtBoundary { t_s: state.sim_time });
            }
            let resume = state.phase;
            let mut s = state.enter(AeSensing);
            s.resume_phase = Some(resume);
            Ok(s)
        }
        (AeSensing, Event::AeComplete) => {
            let mut s = state;
            s.sim_time = s.sim_time.max(s.phase_started + timing.ae_cycle_s);
            let resume = s.resume_phase.take().unwrap_or(Charging);
            Ok(s.enter(resume))
        }
        (Stimulating, Event::StimulationDone) => Ok(state.enter(Charging)),
        _ => Err(illegal(&state, &event)),
    }
}

/// Time-ordered implant poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, Pose)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(ProtocolError::InvalidTrajectory("no samples".into()));
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(ProtocolError::InvalidTrajectory("sample times must be strictly increasing".into()));
        }
        for (_, p) in &samples {
            p.validate()?;
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    /// Samples at `sample_hz` over `[0, duration_s)`.
    pub fn from_spec(sim: &SimulationConfig) -> Result<Self> {
        let n = ((sim.duration_s * sim.sample_hz).round() as usize).max(1);
        let samples = (0..n)
            .map(|k| {
                let t = k as f64 / sim.sample_hz;
                let pose = match &sim.trajectory {
                    TrajectorySpec::Static { position_mm, angle_deg } => Pose::xz_rotated(*position_mm, *angle_deg),
                    TrajectorySpec::XzRotation { position_mm, center_deg, amplitude_deg, frequency_hz } => {
                        let angle = center_deg + amplitude_deg * (2.0 * std::f64::consts::PI * frequency_hz * t).sin();
                        Pose::xz_rotated(*position_mm, angle)
                    }
                    TrajectorySpec::Lateral { start_mm, end_mm, angle_deg } => {
                        let f = t / sim.duration_s;
                        Pose::xz_rotated(start_mm + (end_mm - start_mm) * f, *angle_deg)
                    }
                };
                (t, pose)
            })
            .collect();
        Self::new(samples)
    }
}

/// Transmitter array with its geometry-only quantities computed once.
#[derive(Debug, Clone)]
pub struct ArrayModel {
    pub coils: Vec<CoilSpec>,
    pub omega: f64,
    pub quad: Quadrature,
    tanks: Vec<Complex64>,
    tx_tx: DMatrix<f64>,
}

impl ArrayModel {
    pub fn new(coils: &[CoilSpec], omega: f64, quad: Quadrature) -> Result<Self> {
        let n = coils.len();
        let mut tx_tx = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in (i + 1)..n {
                let m = magnetics::mutual_inductance_with(&coils[i], &coils[k], &quad)?;
                tx_tx[(i, k)] = m;
                tx_tx[(k, i)] = m;
            }
        }
        Ok(Self { coils: coils.to_vec(), omega, quad, tanks: circuit::tank_impedances(coils, omega), tx_tx })
    }

    pub fn from_scenario(s: &ScenarioConfig) -> Result<Self> {
        Self::new(&s.coils, s.omega(), Quadrature::default())
    }

    pub fn channels(&self) -> usize {
        self.coils.len()
    }

    pub fn resistances(&self) -> Vec<f64> {
        self.coils.iter().map(|c| c.series_resistance_ohm).collect()
    }

    pub fn rx_mutuals(&self, rx: &ReceiverModel) -> Result<Vec<f64>> {
        self.coils.iter().map(|c| Ok(magnetics::rx_mutual_with(c, rx, &self.quad)?)).collect()
    }

    pub fn state_for(&self, rx: &ReceiverModel) -> Result<CouplingState> {
        Ok(CouplingState::new(
            self.omega,
            self.tanks.clone(),
            self.tx_tx.clone(),
            self.rx_mutuals(rx)?,
            Complex64::new(rx.load_resistance_ohm, rx.load_reactance_at(self.omega)),
        )?)
    }
}

/// How the echo update obtains couplings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sensing {
    /// True couplings, no receiver chain.
    Ideal,
    /// Full receiver chain: gain, noise, quantization and polarity detection.
    Quantized(NoiseSource),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeUpdate {
    pub drive: DriveConfig,
    /// Last burst's raw reading; `None` for ideal sensing or when every burst was too weak.
    pub reading: Option<EchoReading>,
    pub duties: Vec<f64>,
    /// Channels whose target current exceeded the PWM table.
    pub duty_saturated: Vec<bool>,
    /// Bursts fired, including gain re-ranging.
    pub bursts: usize,
    pub gain_index: usize,
    /// Every burst was below one LSB; the previous drive is retained.
    pub retry: bool,
}

fn burst_noise(noise: NoiseSource, burst: usize) -> NoiseSource {
    match noise {
        NoiseSource::Noiseless => NoiseSource::Noiseless,
        NoiseSource::Seeded(seed) => {
            NoiseSource::Seeded(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(burst as u64))
        }
    }
}

/// Fires echo bursts, re-ranging the programmable gain until no channel
/// saturates and the strongest uses at least a quarter of the ramp.
fn ranged_reading(
    chain: &RxChainConfig,
    voltages: &[Complex64],
    start_index: usize,
    noise: NoiseSource,
) -> Result<(Option<EchoReading>, usize, usize)> {
    let steps = &chain.pga_steps_db;
    let mut gi = start_index.min(steps.len() - 1);
    let mut stepped_down = false;
    let mut last = None;
    for burst in 0..2 * steps.len() {
        let cfg = chain.with_gain_offset(steps[gi]);
        match echo::sense(voltages, &cfg, burst_noise(noise, burst)) {
            Err(EchoError::AllWeak) => {
                if gi + 1 < steps.len() && !stepped_down {
                    gi += 1;
                    continue;
                }
                return Ok((last, burst + 1, gi));
            }
            Err(e) => return Err(e.into()),
            Ok(r) => {
                let strongest = r.amplitude_codes[r.reference_channel];
                let weak = strongest > cfg.max_code() - cfg.max_code() / 4;
                if r.any_saturated() && gi > 0 {
                    gi -= 1;
                    stepped_down = true;
                    last = Some(r);
                    continue;
                }
                if weak && gi + 1 < steps.len() && !stepped_down {
                    gi += 1;
                    last = Some(r);
                    continue;
                }
                return Ok((Some(r), burst + 1, gi));
            }
        }
    }
    Ok((last, 2 * steps.len(), gi))
}

/// One echo update at `pose`: high-impedance drivers, echo burst(s), decode,
/// channel deactivation, optimal allocation and duty lookup.
pub fn ae_update(
    scenario: &ScenarioConfig,
    model: &ArrayModel,
    state: &LoopState,
    pose: &Pose,
    sensing: Sensing,
) -> Result<AeUpdate> {
    let rx = scenario.receiver.with_pose(*pose);
    let chain = &scenario.rx_chain;
    let (couplings, reading, bursts, gain_index) = match sensing {
        Sensing::Ideal => {
            let m = model
                .coils
                .iter()
                .map(|c| magnetics::ae_mutual_with(c, &rx, &model.quad))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            (Some(m), None, 1, state.gain_index)
        }
        Sensing::Quantized(noise) => {
            let v = echo::ae_forward_with(&rx, &model.coils, chain.ae_current_a, chain.omega_ae(), &model.quad)?;
            let (reading, bursts, gi) = ranged_reading(chain, &v, state.gain_index, noise)?;
            let decoded = match &reading {
                Some(r) => Some(echo::decode_couplings(r, chain)?.couplings),
                None => None,
            };
            (decoded, reading, bursts, gi)
        }
    };
    let usable = couplings.filter(|m| m.iter().any(|x| *x != 0.0));
    let Some(m) = usable else {
        let (duties, duty_saturated) = allocation::duty_cycles(&scenario.pwm_lut, &state.current_drive);
        return Ok(AeUpdate {
            drive: state.current_drive.clone(),
            reading,
            duties,
            duty_saturated,
            bursts,
            gain_index,
            retry: true,
        });
    };
    let magnitudes: Vec<f64> = m.iter().map(|x| x.abs()).collect();
    let mask = allocation::apply_deactivation(&magnitudes, scenario.deactivation_threshold)?;
    let drive = allocation::optimal_allocation_masked(&m, &mask, Some(&model.resistances()), scenario.budget)?;
    let (duties, duty_saturated) = allocation::duty_cycles(&scenario.pwm_lut, &drive);
    Ok(AeUpdate { drive, reading, duties, duty_saturated, bursts, gain_index, retry: false })
}

/// PTE of `drive` on `state`; an all-off drive delivers nothing.
pub fn drive_pte(state: &CouplingState, drive: &DriveConfig) -> Result<f64> {
    if drive.is_off() {
        return Ok(0.0);
    }
    Ok(circuit::pte(state, &drive.complex_currents())?)
}

/// Efficiency-optimal drive on the true couplings, no deactivation.
pub fn ideal_drive(state: &CouplingState, budget: f64) -> Result<DriveConfig> {
    let r: Vec<f64> = state.tx_tank_impedances.iter().map(|z| z.re).collect();
    let mask = vec![true; state.channels()];
    match allocation::optimal_allocation_masked(&state.tx_rx_mutuals, &mask, Some(&r), budget) {
        Err(AllocationError::NoCoupling) => Ok(DriveConfig::off(state.channels(), budget)),
        other => Ok(other?),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSample {
    pub t_s: f64,
    pub phase: Phase,
    pub drive: DriveConfig,
    pub duties: Vec<f64>,
    pub pte: f64,
    pub received_power_w: f64,
    pub cumulative_delivered_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingRun {
    pub samples: Vec<TrackingSample>,
    pub ae_updates: usize,
    pub retries: usize,
    /// Total time spent in echo windows.
    pub ae_time_s: f64,
    pub duration_s: f64,
    pub delivered_j: f64,
    /// Energy a continuously re-optimized, uninterrupted drive would deliver.
    pub ideal_delivered_j: f64,
}

impl TrackingRun {
    pub fn interruption_fraction(&self) -> f64 {
        self.ae_time_s / self.duration_s
    }

    pub fn energy_loss_fraction(&self) -> f64 {
        if self.ideal_delivered_j > 0.0 {
            1.0 - self.delivered_j / self.ideal_delivered_j
        } else {
            0.0
        }
    }
}

fn received_power(state: &CouplingState, drive: &DriveConfig) -> Result<f64> {
    if drive.is_off() {
        return Ok(0.0);
    }
    Ok(circuit::power_split(state, &drive.complex_currents())?.0)
}

/// Runs the loop along `trajectory`. Echo updates fire at every activation
/// boundary; between them the drive is held. Each trajectory sample opens a
/// power interval lasting until the next sample (the last one reuses the
/// preceding spacing), minus any echo window inside it.
pub fn run_tracking(
    scenario: &ScenarioConfig,
    model: &ArrayModel,
    trajectory: &Trajectory,
    activation_hz: f64,
    sensing: Sensing,
) -> Result<TrackingRun> {
    let mut timing = LoopTiming::from_scenario(scenario);
    timing.activation_hz = activation_hz;
    let samples = trajectory.samples();
    let mut state = LoopState::new(model.channels(), scenario.budget, &scenario.rx_chain);
    state.sim_time = samples[0].0;
    state = step(&timing, state, Event::PowerOn)?;
    let period = 1.0 / activation_hz;
    let mut next_update = (samples[0].0 / period).ceil() * period;
    let mut out = Vec::with_capacity(samples.len());
    let (mut delivered, mut ideal, mut ae_time) = (0.0, 0.0, 0.0);
    let (mut updates, mut retries, mut burst_counter) = (0usize, 0usize, 0u64);
    let mut duties = vec![0.0; model.channels()];
    let default_dt = samples.get(1).map_or(1.0 / activation_hz, |s| s.0 - samples[0].0);
    let end = samples.last().unwrap().0 + samples.windows(2).last().map_or(default_dt, |w| w[1].0 - w[0].0);

    let states = samples
        .par_iter()
        .map(|(_, pose)| model.state_for(&scenario.receiver.with_pose(*pose)))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    for (k, ((t, pose), cs)) in samples.iter().zip(states).enumerate() {
        let t_next = samples.get(k + 1).map_or(end, |s| s.0);
        let dt = (t - state.sim_time).max(0.0);
        state = step(&timing, state, Event::Advance(dt))?;
        let mut window = 0.0;
        let mut phase_here = state.phase;
        while next_update < t_next - BOUNDARY_TOL * period {
            let dt = (next_update - state.sim_time).max(0.0);
            state = step(&timing, state, Event::Advance(dt))?;
            state = step(&timing, state, Event::AeTrigger)?;
            phase_here = Phase::AeSensing;
            let noise = match sensing {
                Sensing::Quantized(NoiseSource::Seeded(seed)) => {
                    Sensing::Quantized(NoiseSource::Seeded(seed.wrapping_add(burst_counter.wrapping_mul(1_000_003))))
                }
                other => other,
            };
            let upd = ae_update(scenario, model, &state, pose, noise)?;
            burst_counter += 1;
            updates += 1;
            if upd.retry {
                retries += 1;
            }
            state.current_drive = upd.drive;
            state.gain_index = upd.gain_index;
            state.retry_pending = upd.retry;
            if upd.reading.is_some() {
                state.last_reading = upd.reading;
            }
            duties = upd.duties;
            let burst_time = timing.ae_cycle_s * upd.bursts as f64;
            state = step(&timing, state, Event::AeComplete)?;
            state.sim_time = state.sim_time.max(next_update + burst_time);
            window += burst_time;
            next_update += period;
        }
        ae_time += window;
        let effective = state.effective_drive();
        let p = received_power(&cs, &effective)?;
        let dt = (t_next - t - window).max(0.0);
        delivered += p * dt;
        let best = ideal_drive(&cs, scenario.budget)?;
        ideal += received_power(&cs, &best)? * (t_next - t);
        out.push(TrackingSample {
            t_s: *t,
            phase: phase_here,
            drive: effective.clone(),
            duties: duties.clone(),
            pte: drive_pte(&cs, &effective)?,
            received_power_w: p,
            cumulative_delivered_j: delivered,
        });
    }
    Ok(TrackingRun {
        samples: out,
        ae_updates: updates,
        retries,
        ae_time_s: ae_time,
        duration_s: end - samples[0].0,
        delivered_j: delivered,
        ideal_delivered_j: ideal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselinePtes {
    pub single_small: f64,
    pub single_large: f64,
    pub three_coil_fixed: f64,
    pub three_coil_ae: f64,
}

/// Efficiency of a single coil centred at the origin driven at the full budget.
pub fn single_coil_pte(coil: &CoilSpec, rx: &ReceiverModel, omega: f64, budget: f64, quad: &Quadrature) -> Result<f64> {
    let state = CouplingState::from_geometry(std::slice::from_ref(coil), rx, omega, quad)?;
    Ok(circuit::pte(&state, &[Complex64::new(budget.sqrt(), 0.0)])?)
}

/// Per-pose efficiency of the four transmitter strategies, each at the same
/// `sum I^2` budget. The echo-driven array uses `sensing` from a fresh state.
pub fn compare_baselines(
    scenario: &ScenarioConfig,
    model: &ArrayModel,
    poses: &[Pose],
    sensing: Sensing,
) -> Result<Vec<BaselinePtes>> {
    let small = scenario.single_small();
    let large = scenario.single_large();
    let fresh = LoopState::new(model.channels(), scenario.budget, &scenario.rx_chain);
    poses
        .iter()
        .map(|pose| {
            let rx = scenario.receiver.with_pose(*pose);
            let cs = model.state_for(&rx)?;
            let fixed = DriveConfig::uniform(model.channels(), scenario.budget);
            let ae = ae_update(scenario, model, &fresh, pose, sensing)?;
            Ok(BaselinePtes {
                single_small: single_coil_pte(&small, &rx, model.omega, scenario.budget, &model.quad)?,
                single_large: single_coil_pte(&large, &rx, model.omega, scenario.budget, &model.quad)?,
                three_coil_fixed: drive_pte(&cs, &fixed)?,
                three_coil_ae: drive_pte(&cs, &ae.drive)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnetics::Vec3;

    fn timing() -> LoopTiming {
        LoopTiming {
            charge_time_s: 0.05,
            downlink_latency_s: 1e-3,
            activation_hz: 20.0,
            implant_id: 7,
            ae_cycle_s: 70e-6,
        }
    }

    fn fresh() -> LoopState {
        LoopState::new(3, 1.0, &RxChainConfig::default_for(3))
    }

    #[test]
    fn power_on_starts_charging() {
        let s = step(&timing(), fresh(), Event::PowerOn).unwrap();
        assert_eq!(s.phase, Phase::Charging);
    }

    #[test]
    fn full_operation_flow() {
        let t = timing();
        let mut s = step(&t, fresh(), Event::PowerOn).unwrap();
        assert!(matches!(step(&t, s.clone(), Event::ChargeComplete), Err(ProtocolError::ChargeIncomplete { .. })));
        s = step(&t, s, Event::Advance(0.05)).unwrap();
        s = step(&t, s, Event::ChargeComplete).unwrap();
        assert_eq!(s.phase, Phase::Downlink);
        let cmd = Event::Command { token: 7, task: Task::Stimulate(StimulationParams::default()) };
        s = step(&t, s, cmd).unwrap();
        assert_eq!(s.phase, Phase::Stimulating);
        let trace = &s.stimulation_trace;
        assert!(trace.iter().all(|p| p.width_s == 0.4e-3 && p.amplitude_v == 3.0));
        let gaps: Vec<f64> = trace.windows(2).map(|w| w[1].start_s - w[0].start_s).collect();
        assert!((gaps[0] - 10e-3).abs() < 1e-12 && (gaps[1] - 20e-3).abs() < 1e-12);
        s = step(&t, s, Event::StimulationDone).unwrap();
        assert_eq!(s.phase, Phase::Charging);
    }

    #[test]
    fn wrong_id_returns_to_charging() {
        let t = timing();
        let mut s = step(&t, fresh(), Event::PowerOn).unwrap();
        s = step(&t, s, Event::Advance(0.06)).unwrap();
        s = step(&t, s, Event::ChargeComplete).unwrap();
        s = step(&t, s, Event::Command { token: 8, task: Task::AeSensing }).unwrap();
        assert_eq!(s.phase, Phase::Charging);
    }

    #[test]
    fn ae_trigger_only_on_boundary_and_resumes() {
        let t = timing();
        let mut s = step(&t, fresh(), Event::PowerOn).unwrap();
        s = step(&t, s, Event::Advance(0.01)).unwrap();
        assert!(matches!(step(&t, s.clone(), Event::AeTrigger), Err(ProtocolError::NotAtBoundary { .. })));
        s = step(&t, s, Event::Advance(0.04)).unwrap();
        s = step(&t, s, Event::AeTrigger).unwrap();
        assert_eq!(s.phase, Phase::AeSensing);
        assert!(s.effective_drive().is_off());
        s = step(&t, s, Event::AeComplete).unwrap();
        assert_eq!(s.phase, Phase::Charging);
        assert!((s.sim_time - (0.05 + 70e-6)).abs() < 1e-12);
    }

    #[test]
    fn illegal_events_name_phase_and_event() {
        let err = step(&timing(), fresh(), Event::AeComplete).unwrap_err();
        assert_eq!(err, ProtocolError::IllegalTransition { phase: Phase::Idle, event: "ae_complete" });
        assert!(err.to_string().contains("idle") && err.to_string().contains("ae_complete"));
        let s = step(&timing(), fresh(), Event::PowerOn).unwrap();
        assert!(step(&timing(), s, Event::StimulationDone).is_err());
    }

    #[test]
    fn trajectory_rejects_unordered_times() {
        let p = Pose::xz_rotated(Vec3::new(0.0, 0.0, 20.0), 0.0);
        assert!(Trajectory::new(vec![(0.0, p), (0.0, p)]).is_err());
        assert!(Trajectory::new(vec![]).is_err());
        assert!(Trajectory::new(vec![(0.0, p), (0.1, p)]).is_ok());
    }

    #[test]
    fn noiseless_ideal_update_matches_allocation() {
        let sc = ScenarioConfig::bundled_default();
        let model = ArrayModel::from_scenario(&sc).unwrap();
        let pose = Pose::xz_rotated(Vec3::new(3.0, -2.0, 18.0), 25.0);
        let upd = ae_update(&sc, &model, &fresh(), &pose, Sensing::Ideal).unwrap();
        let rx = sc.receiver.with_pose(pose);
        let m = model.rx_mutuals(&rx).unwrap();
        let mags: Vec<f64> = m.iter().map(|x| x.abs()).collect();
        let mask = allocation::apply_deactivation(&mags, sc.deactivation_threshold).unwrap();
        let direct = allocation::optimal_allocation_masked(&m, &mask, Some(&model.resistances()), sc.budget).unwrap();
        for (a, b) in upd.drive.currents.iter().zip(&direct.currents) {
            assert_eq!(a.polarity, b.polarity);
            assert!((a.amplitude - b.amplitude).abs() <= 1e-12 * b.amplitude.max(1e-300));
        }
    }

    #[test]
    fn transverse_pose_drives_two_coils_in_antiphase() {
        let sc = ScenarioConfig::bundled_default();
        let model = ArrayModel::from_scenario(&sc).unwrap();
        let pose = Pose::xz_rotated(Vec3::new(0.0, 0.0, 15.0), 90.0);
        let upd = ae_update(&sc, &model, &fresh(), &pose, Sensing::Quantized(NoiseSource::Noiseless)).unwrap();
        let c = &upd.drive.currents;
        assert!(!upd.drive.active_mask[0]);
        assert!((c[1].amplitude / c[2].amplitude - 1.0).abs() < 1e-12);
        assert_ne!(c[1].polarity, c[2].polarity);
    }

    #[test]
    fn aligned_on_one_coil_deactivates_others() {
        let sc = ScenarioConfig::bundled_default();
        let model = ArrayModel::from_scenario(&sc).unwrap();
        let above = sc.coils[0].center_mm + Vec3::new(0.0, 0.0, 8.0);
        let upd = ae_update(&sc, &model, &fresh(), &Pose::xz_rotated(above, 0.0), Sensing::Ideal).unwrap();
        let rx = sc.receiver.with_pose(Pose::xz_rotated(above, 0.0));
        let m = model.rx_mutuals(&rx).unwrap();
        assert!(upd.drive.active_mask[0]);
        for i in 1..3 {
            assert_eq!(upd.drive.active_mask[i], m[0].abs() <= sc.deactivation_threshold * m[i].abs());
        }
    }

    #[test]
    fn static_pose_gives_constant_pte_after_first_update() {
        let mut sc = ScenarioConfig::bundled_default();
        sc.simulation.duration_s = 0.2;
        sc.simulation.trajectory = TrajectorySpec::Static { position_mm: Vec3::new(2.0, 1.0, 20.0), angle_deg: 40.0 };
        let model = ArrayModel::from_scenario(&sc).unwrap();
        let traj = Trajectory::from_spec(&sc.simulation).unwrap();
        let run = run_tracking(&sc, &model, &traj, 20.0, Sensing::Quantized(NoiseSource::Noiseless)).unwrap();
        let p0 = run.samples[0].pte;
        assert!(p0 > 0.0);
        assert!(run.samples.iter().all(|s| s.pte == p0));
        assert_eq!(run.ae_updates, 4);
        assert!(run.samples.iter().filter(|s| s.phase == Phase::AeSensing).all(|s| s.t_s * 20.0 % 1.0 < 1e-6));
    }

    #[test]
    fn tracking_is_deterministic_for_a_seed() {
        let mut sc = ScenarioConfig::bundled_default();
        sc.simulation.duration_s = 0.3;
        let model = ArrayModel::from_scenario(&sc).unwrap();
        let traj = Trajectory::from_spec(&sc.simulation).unwrap();
        let a = run_tracking(&sc, &model, &traj, 20.0, Sensing::Quantized(NoiseSource::Seeded(3))).unwrap();
        let b = run_tracking(&sc, &model, &traj, 20.0, Sensing::Quantized(NoiseSource::Seeded(3))).unwrap();
        assert_eq!(a, b);
    }
}
