//! Phasor solution of the n-transmitter + 1-receiver coupled resonant network
//! and the efficiency quantities derived from it.
//!
//! Currents and voltages are RMS phasors at a single angular frequency.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{self, CoilSpec, MagneticsError, Quadrature, ReceiverModel};

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CircuitError {
    #[error("invalid coupling state: {0}")]
    InvalidState(String),
    #[error("expected {expected} channel values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("network matrix is singular (n = {size}, max |Z| = {max_abs:.3e})")]
    Singular { size: usize, max_abs: f64 },
    #[error("efficiency undefined: all transmitter currents are zero")]
    ZeroCurrents,
    #[error("channel index {index} out of range for {channels} channels")]
    IndexOutOfRange { index: usize, channels: usize },
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
}

pub type Result<T> = std::result::Result<T, CircuitError>;

/// Every impedance and coupling of the network at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingState {
    pub omega: f64,
    /// `R_i + jX_i` of each transmitter tank.
    pub tx_tank_impedances: Vec<Complex64>,
    /// Symmetric, zero diagonal.
    pub tx_tx_mutuals: DMatrix<f64>,
    /// `M_iL = M_Li`.
    pub tx_rx_mutuals: Vec<f64>,
    /// `R_L + jX_L`.
    pub rx_impedance: Complex64,
}

impl CouplingState {
    pub fn new(
        omega: f64,
        tx_tank_impedances: Vec<Complex64>,
        tx_tx_mutuals: DMatrix<f64>,
        tx_rx_mutuals: Vec<f64>,
        rx_impedance: Complex64,
    ) -> Result<Self> {
        let state = Self { omega, tx_tank_impedances, tx_tx_mutuals, tx_rx_mutuals, rx_impedance };
        state.validate()?;
        Ok(state)
    }

    /// Builds the state for posed coils and receiver, computing every mutual
    /// inductance from geometry.
    pub fn from_geometry(coils: &[CoilSpec], rx: &ReceiverModel, omega: f64, quad: &Quadrature) -> Result<Self> {
        let n = coils.len();
        let mut mutuals = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in (i + 1)..n {
                let m = magnetics::mutual_inductance_with(&coils[i], &coils[k], quad)?;
                mutuals[(i, k)] = m;
                mutuals[(k, i)] = m;
            }
        }
        let rx_mutuals =
            coils.iter().map(|c| magnetics::rx_mutual_with(c, rx, quad)).collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(
            omega,
            tank_impedances(coils, omega),
            mutuals,
            rx_mutuals,
            Complex64::new(rx.load_resistance_ohm, rx.load_reactance_at(omega)),
        )
    }

    pub fn channels(&self) -> usize {
        self.tx_tank_impedances.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels();
        let bad = |msg: String| Err(CircuitError::InvalidState(msg));
        if !(self.omega > 0.0) {
            return bad(format!("omega must be > 0, got {}", self.omega));
        }
        if self.tx_tx_mutuals.nrows() != n || self.tx_tx_mutuals.ncols() != n {
            return bad(format!("tx_tx_mutuals must be {n}x{n}"));
        }
        if self.tx_rx_mutuals.len() != n {
            return bad(format!("tx_rx_mutuals must have {n} entries"));
        }
        let scale = self.tx_tx_mutuals.amax();
        for i in 0..n {
            if self.tx_tx_mutuals[(i, i)] != 0.0 {
                return bad(format!("tx_tx_mutuals diagonal entry {i} must be zero"));
            }
            for k in 0..i {
                let d = (self.tx_tx_mutuals[(i, k)] - self.tx_tx_mutuals[(k, i)]).abs();
                if d > 1e-12 * scale {
                    return bad(format!("tx_tx_mutuals not symmetric at ({i}, {k})"));
                }
            }
            if !(self.tx_tank_impedances[i].re > 0.0) {
                return bad(format!("tank {i} resistance must be > 0"));
            }
        }
        if !(self.rx_impedance.re > 0.0) {
            return bad("receiver resistance must be > 0".into());
        }
        Ok(())
    }

    /// Copy with the receiver couplings replaced (same tanks and array mutuals).
    pub fn with_rx_mutuals(&self, tx_rx_mutuals: Vec<f64>) -> Result<Self> {
        Self::new(
            self.omega,
            self.tx_tank_impedances.clone(),
            self.tx_tx_mutuals.clone(),
            tx_rx_mutuals,
            self.rx_impedance,
        )
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.channels() {
            return Err(CircuitError::LengthMismatch { expected: self.channels(), found: len });
        }
        Ok(())
    }

    /// The full `(n+1) x (n+1)` impedance matrix, receiver last.
    pub fn impedance_matrix(&self) -> DMatrix<Complex64> {
        let n = self.channels();
        let jw = J * self.omega;
        DMatrix::from_fn(n + 1, n + 1, |r, c| match (r, c) {
            (r, c) if r == n && c == n => self.rx_impedance,
            (r, c) if r == c => self.tx_tank_impedances[r],
            (r, c) if r == n => jw * self.tx_rx_mutuals[c],
            (r, c) if c == n => jw * self.tx_rx_mutuals[r],
            (r, c) => jw * self.tx_tx_mutuals[(r, c)],
        })
    }
}

/// `R_i + jX_i(w)` for each coil.
pub fn tank_impedances(coils: &[CoilSpec], omega: f64) -> Vec<Complex64> {
    coils.iter().map(|c| Complex64::new(c.series_resistance_ohm, c.reactance(omega))).collect()
}

/// Solves the coupled network for the driver voltages, returning the
/// transmitter currents and the receiver current.
pub fn solve_network(state: &CouplingState, drive_voltages: &[Complex64]) -> Result<(Vec<Complex64>, Complex64)> {
    state.check_len(drive_voltages.len())?;
    let n = state.channels();
    let z = state.impedance_matrix();
    let mut rhs = DVector::zeros(n + 1);
    for (i, v) in drive_voltages.iter().enumerate() {
        rhs[i] = *v;
    }
    let max_abs = z.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let solution = z.clone().lu().solve(&rhs).ok_or(CircuitError::Singular { size: n + 1, max_abs })?;
    let residual = (&z * &solution - &rhs).norm();
    if !residual.is_finite() {
        return Err(CircuitError::Singular { size: n + 1, max_abs });
    }
    let currents = solution.iter().take(n).copied().collect();
    Ok((currents, solution[n]))
}

/// Receiver current from the transmitter currents:
/// `I_L = -jw (sum M_Li I_i) / (R_L + jX_L)`.
pub fn receiver_current(state: &CouplingState, tx_currents: &[Complex64]) -> Result<Complex64> {
    state.check_len(tx_currents.len())?;
    let linked: Complex64 = state.tx_rx_mutuals.iter().zip(tx_currents).map(|(m, i)| i * *m).sum();
    Ok(-J * state.omega * linked / state.rx_impedance)
}

/// `(P_recv, P_loss)` in watts for RMS currents.
pub fn power_split(state: &CouplingState, tx_currents: &[Complex64]) -> Result<(f64, f64)> {
    let il = receiver_current(state, tx_currents)?;
    let recv = state.rx_impedance.re * il.norm_sqr();
    let loss = state.tx_tank_impedances.iter().zip(tx_currents).map(|(z, i)| z.re * i.norm_sqr()).sum();
    Ok((recv, loss))
}

/// Power transfer efficiency `P_recv / (P_loss + P_recv)`.
pub fn pte(state: &CouplingState, tx_currents: &[Complex64]) -> Result<f64> {
    state.check_len(tx_currents.len())?;
    if tx_currents.iter().all(|i| i.norm_sqr() == 0.0) {
        return Err(CircuitError::ZeroCurrents);
    }
    let (recv, loss) = power_split(state, tx_currents)?;
    Ok(recv / (loss + recv))
}

/// The best `P_recv / P_loss` any current allocation can reach.
pub fn recv_loss_ratio_bound(state: &CouplingState) -> f64 {
    let zl = state.rx_impedance;
    let prefactor = zl.re * state.omega * state.omega / zl.norm_sqr();
    let sum: f64 = state.tx_rx_mutuals.iter().zip(&state.tx_tank_impedances).map(|(m, z)| m * m / z.re).sum();
    prefactor * sum
}

/// Maximum efficiency over all allocations, `S / (1 + S)` with `S` the
/// Cauchy-Schwarz bound on `P_recv / P_loss`. Attained iff `I_i ~ M_Li / R_i`.
pub fn pte_upper_bound(state: &CouplingState) -> f64 {
    let s = recv_loss_ratio_bound(state);
    s / (1.0 + s)
}

/// Output voltage of driver `i`: its own tank drop plus the voltage induced
/// by every other transmitter and by the receiver current (row `i` of the
/// network equations).
pub fn driver_voltage(state: &CouplingState, tx_currents: &[Complex64], i: usize) -> Result<Complex64> {
    state.check_len(tx_currents.len())?;
    let n = state.channels();
    if i >= n {
        return Err(CircuitError::IndexOutOfRange { index: i, channels: n });
    }
    let jw = J * state.omega;
    let mut v = state.tx_tank_impedances[i] * tx_currents[i];
    for (k, ik) in tx_currents.iter().enumerate() {
        if k != i {
            v += jw * state.tx_tx_mutuals[(i, k)] * ik;
        }
    }
    let il = receiver_current(state, tx_currents)?;
    Ok(v + jw * state.tx_rx_mutuals[i] * il)
}

/// Binary-phase current or voltage amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phasor {
    pub amplitude: f64,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Self::Positive => 1.0,
            Self::Negative => -1.0,
        }
    }

    pub fn of(x: f64) -> Self {
        if x < 0.0 {
            Self::Negative
        } else {
            Self::Positive
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Self::Positive => Self::Negative,
            Self::Negative => Self::Positive,
        }
    }
}

impl Phasor {
    pub fn new(amplitude: f64, polarity: Polarity) -> Self {
        debug_assert!(amplitude >= 0.0);
        Self { amplitude, polarity }
    }

    pub fn zero() -> Self {
        Self { amplitude: 0.0, polarity: Polarity::Positive }
    }

    pub fn signed(&self) -> f64 {
        self.amplitude * self.polarity.sign()
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::new(self.signed(), 0.0)
    }
}

/// Per-channel drive under a fixed `sum I^2` budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub currents: Vec<Phasor>,
    pub active_mask: Vec<bool>,
    /// Constant `sum I_i^2`, A^2.
    pub power_budget: f64,
}

impl DriveConfig {
    /// Equal amplitudes, all positive: the non-adaptive three-coil drive.
    pub fn uniform(channels: usize, power_budget: f64) -> Self {
        let amp = (power_budget / channels as f64).sqrt();
        Self {
            currents: vec![Phasor::new(amp, Polarity::Positive); channels],
            active_mask: vec![true; channels],
            power_budget,
        }
    }

    /// All channels off.
    pub fn off(channels: usize, power_budget: f64) -> Self {
        Self { currents: vec![Phasor::zero(); channels], active_mask: vec![false; channels], power_budget }
    }

    pub fn complex_currents(&self) -> Vec<Complex64> {
        self.currents.iter().map(Phasor::to_complex).collect()
    }

    pub fn sum_sq(&self) -> f64 {
        self.currents.iter().map(|p| p.amplitude * p.amplitude).sum()
    }

    pub fn is_off(&self) -> bool {
        self.currents.iter().all(|p| p.amplitude == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn state(tanks: &[f64], rx: &[f64], omega: f64, zl: Complex64) -> CouplingState {
        let n = tanks.len();
        CouplingState::new(omega, tanks.iter().map(|r| c(*r, 0.0)).collect(), DMatrix::zeros(n, n), rx.to_vec(), zl)
            .unwrap()
    }

    #[test]
    fn decoupled_tank() {
        let s = state(&[0.5], &[0.0], 2e6, c(100.0, 0.0));
        let (i, il) = solve_network(&s, &[c(2.0, 0.0)]).unwrap();
        assert!((i[0] - c(4.0, 0.0)).norm() < 1e-15);
        assert_eq!(il, c(0.0, 0.0));
    }

    #[test]
    fn two_coil_closed_form() {
        // Z1 I1 + jwM IL = V,  jwM I1 + ZL IL = 0
        let (r1, x1, m, w) = (0.4, 3.0, 2e-7, 2.1e6);
        let zl = c(50.0, -20.0);
        let s = CouplingState::new(w, vec![c(r1, x1)], DMatrix::zeros(1, 1), vec![m], zl).unwrap();
        let v = c(1.5, 0.0);
        let (i, il) = solve_network(&s, &[v]).unwrap();
        let jwm = c(0.0, w * m);
        let i1 = v / (c(r1, x1) - jwm * jwm / zl);
        let il_expected = -jwm * i1 / zl;
        assert!((i[0] - i1).norm() < 1e-12 * i1.norm());
        assert!((il - il_expected).norm() < 1e-12 * il_expected.norm());
    }

    #[test]
    fn receiver_current_cancellation_and_zero() {
        let s = state(&[0.3, 0.3], &[1e-7, 1e-7], 2e6, c(1000.0, 0.0));
        assert_eq!(receiver_current(&s, &[c(0.0, 0.0); 2]).unwrap(), c(0.0, 0.0));
        let il = receiver_current(&s, &[c(1.0, 0.0), c(-1.0, 0.0)]).unwrap();
        assert!(il.norm() < 1e-25);
    }

    #[test]
    fn single_coil_pte_closed_form() {
        let (r1, m, w) = (0.3, 3e-7, 2.136e6);
        let zl = c(1000.0, 250.0);
        let s = state(&[r1], &[m], w, zl);
        let eta = pte(&s, &[c(0.7, 0.0)]).unwrap();
        let rl_eff = zl.norm_sqr() / zl.re;
        let expected = 1.0 / (1.0 + r1 * rl_eff / (w * w * m * m));
        assert!((eta - expected).abs() < 1e-14);
        assert!((eta - pte_upper_bound(&s)).abs() < 1e-14);
    }

    #[test]
    fn zero_coupling_gives_zero_efficiency() {
        let s = state(&[0.3, 0.3], &[0.0, 0.0], 2e6, c(1000.0, 0.0));
        assert_eq!(pte(&s, &[c(1.0, 0.0), c(0.5, 0.0)]).unwrap(), 0.0);
        assert_eq!(pte_upper_bound(&s), 0.0);
        assert_eq!(pte(&s, &[c(0.0, 0.0); 2]), Err(CircuitError::ZeroCurrents));
    }

    #[test]
    fn bound_is_permutation_invariant() {
        let a = state(&[0.3, 0.5, 0.2], &[1e-7, -3e-7, 2e-7], 2e6, c(900.0, 10.0));
        let b = state(&[0.2, 0.3, 0.5], &[2e-7, 1e-7, -3e-7], 2e6, c(900.0, 10.0));
        assert!((pte_upper_bound(&a) - pte_upper_bound(&b)).abs() < 1e-16);
    }

    #[test]
    fn driver_voltage_decoupled() {
        let s = state(&[0.3, 0.4], &[0.0, 0.0], 2e6, c(1000.0, 0.0));
        let i = [c(0.5, 0.1), c(-0.2, 0.0)];
        assert_eq!(driver_voltage(&s, &i, 1).unwrap(), s.tx_tank_impedances[1] * i[1]);
        assert!(matches!(driver_voltage(&s, &i, 2), Err(CircuitError::IndexOutOfRange { index: 2, channels: 2 })));
    }

    #[test]
    fn invalid_state_rejected() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = 1e-7;
        let err = CouplingState::new(2e6, vec![c(0.3, 0.0); 2], m, vec![0.0; 2], c(1.0, 0.0));
        assert!(matches!(err, Err(CircuitError::InvalidState(_))));
        let err = CouplingState::new(2e6, vec![c(0.0, 0.0)], DMatrix::zeros(1, 1), vec![0.0], c(1.0, 0.0));
        assert!(err.is_err());
    }

    fn arb_state() -> impl Strategy<Value = CouplingState> {
        (2usize..6)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec((0.05f64..2.0, -5.0f64..5.0), n),
                    prop::collection::vec(-1e-6f64..1e-6, n * n),
                    prop::collection::vec(-5e-7f64..5e-7, n),
                    (10.0f64..5000.0, -500.0f64..500.0),
                    1e5f64..1e7,
                )
            })
            .prop_map(|(tanks, mm, rx, (rl, xl), w)| {
                let n = tanks.len();
                let mut mutuals = DMatrix::from_fn(n, n, |i, k| mm[i * n + k]);
                for i in 0..n {
                    mutuals[(i, i)] = 0.0;
                    for k in 0..i {
                        mutuals[(i, k)] = mutuals[(k, i)];
                    }
                }
                CouplingState::new(w, tanks.into_iter().map(|(r, x)| c(r, x)).collect(), mutuals, rx, c(rl, xl))
                    .unwrap()
            })
    }

    proptest! {
        #[test]
        fn solve_round_trips_through_driver_voltages(
            s in arb_state(),
            seed in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6),
        ) {
            let n = s.channels();
            let currents: Vec<_> = seed.iter().take(n).map(|(a, b)| c(*a, *b)).collect();
            let volts: Vec<_> = (0..n).map(|i| driver_voltage(&s, &currents, i).unwrap()).collect();
            let (solved, il) = solve_network(&s, &volts).unwrap();
            let scale = currents.iter().map(|i| i.norm()).fold(0.0, f64::max);
            for (a, b) in solved.iter().zip(&currents) {
                prop_assert!((a - b).norm() <= 1e-10 * scale.max(1e-12));
            }
            let il2 = receiver_current(&s, &solved).unwrap();
            prop_assert!((il - il2).norm() <= 1e-9 * il.norm().max(1e-300));
            // residual of the linear solve
            let z = s.impedance_matrix();
            let mut x = DVector::zeros(n + 1);
            for i in 0..n { x[i] = solved[i]; }
            x[n] = il;
            let mut rhs = DVector::zeros(n + 1);
            for i in 0..n { rhs[i] = volts[i]; }
            let vnorm = rhs.norm();
            prop_assert!((z * x - rhs).norm() <= 1e-10 * vnorm.max(1e-300));
        }

        #[test]
        fn efficiency_in_unit_interval_and_scale_invariant(
            s in arb_state(),
            seed in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6),
            scale in (0.01f64..100.0, -3.2f64..3.2),
        ) {
            let n = s.channels();
            let currents: Vec<_> = seed.iter().take(n).map(|(a, b)| c(*a + 1e-3, *b)).collect();
            let eta = pte(&s, &currents).unwrap();
            prop_assert!((0.0..=1.0).contains(&eta));
            prop_assert!(eta <= pte_upper_bound(&s) + 1e-12);
            let k = Complex64::from_polar(scale.0, scale.1);
            let scaled: Vec<_> = currents.iter().map(|i| i * k).collect();
            let eta2 = pte(&s, &scaled).unwrap();
            prop_assert!((eta - eta2).abs() <= 1e-12 * eta.max(1e-300));
        }

        #[test]
        fn bound_attained_at_m_over_r(s in arb_state()) {
            prop_assume!(s.tx_rx_mutuals.iter().any(|m| m.abs() > 0.0));
            let currents: Vec<_> = s.tx_rx_mutuals.iter().zip(&s.tx_tank_impedances)
                .map(|(m, z)| c(m / z.re, 0.0)).collect();
            let eta = pte(&s, &currents).unwrap();
            let bound = pte_upper_bound(&s);
            prop_assert!((eta - bound).abs() <= 1e-9 * bound);
        }
    }
}
