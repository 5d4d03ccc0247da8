//! Pose sweeps, the brute-force current-grid oracle and random pose sets.
//!
//! Sweep points are independent and evaluated in parallel; results always
//! come back in axis order.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::Serialize;

use crate::circuit::{self, CouplingState};
use crate::controlloop::{self, ArrayModel, BaselinePtes, LoopState, Result, Sensing};
use crate::magnetics::{Pose, Vec3};
use crate::scenario::ScenarioConfig;

/// Fixed position of the rotation sweep.
pub const ROTATION_POSITION_MM: [f64; 3] = [0.0, 0.0, 20.0];
/// End points of the lateral sweep.
pub const LATERAL_START_MM: [f64; 3] = [-20.0, 10.0, 20.0];
pub const LATERAL_END_MM: [f64; 3] = [20.0, 10.0, 20.0];

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    /// Sweep coordinate: angle in degrees or lateral x in mm.
    pub axis_value: f64,
    pub ptes: BaselinePtes,
}

fn baseline_points(
    scenario: &ScenarioConfig,
    model: &ArrayModel,
    values: Vec<f64>,
    pose_of: impl Fn(f64) -> Pose + Sync,
    sensing: Sensing,
) -> Result<Vec<SweepPoint>> {
    values
        .into_par_iter()
        .map(|v| {
            let ptes = controlloop::compare_baselines(scenario, model, &[pose_of(v)], sensing)?[0];
            Ok(SweepPoint { axis_value: v, ptes })
        })
        .collect()
}

/// Film axis tilted from +z to +x at (0, 0, 20) mm, `steps` angles over 0..=90 degrees.
pub fn rotation_sweep(
    scenario: &ScenarioConfig,
    model: &ArrayModel,
    steps: usize,
    sensing: Sensing,
) -> Result<Vec<SweepPoint>> {
    let at = Vec3::from(ROTATION_POSITION_MM);
    baseline_points(scenario, model, linspace(0.0, 90.0, steps), |a| Pose::xz_rotated(at, a), sensing)
}

/// Film axis along +z, moved from (-20, 10, 20) to (20, 10, 20) mm.
pub fn lateral_sweep(
    scenario: &ScenarioConfig,
    model: &ArrayModel,
    steps: usize,
    sensing: Sensing,
) -> Result<Vec<SweepPoint>> {
    let (start, end) = (Vec3::from(LATERAL_START_MM), Vec3::from(LATERAL_END_MM));
    baseline_points(
        scenario,
        model,
        linspace(start.x, end.x, steps),
        |x| Pose::xz_rotated(Vec3::new(x, start.y, start.z), 0.0),
        sensing,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub theta_deg: f64,
    pub i_tx2_a: f64,
    pub i_tx3_a: f64,
    pub pte: f64,
}

/// Manual current-ratio sweep on TX2 and TX3 with TX1 off, at the full budget:
/// `I2 = sqrt(B) cos(theta)`, `I3 = sqrt(B) sin(theta)` for theta over
/// -90..=90 degrees, covering every ratio and both relative polarities.
pub fn current_grid(
    scenario: &ScenarioConfig,
    model: &ArrayModel,
    pose: &Pose,
    steps: usize,
) -> Result<Vec<GridPoint>> {
    let state = model.state_for(&scenario.receiver.with_pose(*pose))?;
    let amp = scenario.budget.sqrt();
    linspace(-90.0, 90.0, steps)
        .into_par_iter()
        .map(|theta_deg| {
            let t = theta_deg.to_radians();
            let (i2, i3) = (amp * t.cos(), amp * t.sin());
            let mut currents = vec![Complex64::new(0.0, 0.0); state.channels()];
            currents[1] = Complex64::new(i2, 0.0);
            currents[2] = Complex64::new(i3, 0.0);
            Ok(GridPoint { theta_deg, i_tx2_a: i2, i_tx3_a: i3, pte: circuit::pte(&state, &currents)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_pte: f64,
    /// Real currents of the best grid point, full channel length.
    pub best_currents: Vec<f64>,
    pub evaluations: usize,
}

/// Exhaustive search for the best real current allocation over the
/// channels in `active`.
///
/// PTE is invariant to the overall current scale, so only directions are
/// searched: one channel is trivial; two channels use a `steps x steps` grid
/// on `[-1, 1]^2`; three use a `steps x steps` grid on the positive octant of
/// the unit sphere times the four sign patterns of the last two channels.
pub fn grid_oracle(state: &CouplingState, active: &[bool], steps: usize) -> Result<OracleResult> {
    let n = state.channels();
    let idx: Vec<usize> = (0..n).filter(|i| active[*i]).collect();
    let eval = |vals: &[f64]| -> Result<f64> {
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        for (k, v) in idx.iter().zip(vals) {
            c[*k] = Complex64::new(*v, 0.0);
        }
        Ok(circuit::pte(state, &c)?)
    };
    let candidates: Vec<Vec<f64>> = match idx.len() {
        0 => Vec::new(),
        1 => vec![vec![1.0]],
        2 => {
            let g = linspace(-1.0, 1.0, steps);
            g.iter().flat_map(|a| g.iter().map(move |b| vec![*a, *b])).filter(|v| v[0] != 0.0 || v[1] != 0.0).collect()
        }
        3 => {
            let g = linspace(0.0, FRAC_PI_2, steps);
            let mut out = Vec::with_capacity(4 * steps * steps);
            for s2 in [1.0, -1.0] {
                for s3 in [1.0, -1.0] {
                    for t in &g {
                        for p in &g {
                            out.push(vec![t.cos(), s2 * t.sin() * p.cos(), s3 * t.sin() * p.sin()]);
                        }
                    }
                }
            }
            out
        }
        k => {
            return Err(crate::allocation::AllocationError::LengthMismatch { expected: 3, found: k }.into());
        }
    };
    let scored: Vec<(f64, usize)> =
        candidates.par_iter().enumerate().map(|(k, v)| Ok((eval(v)?, k))).collect::<Result<_>>()?;
    let best = scored.iter().copied().fold(None, |acc: Option<(f64, usize)>, x| match acc {
        Some(a) if a.0 >= x.0 => Some(a),
        _ => Some(x),
    });
    let (best_pte, k) = best.unwrap_or((0.0, usize::MAX));
    let mut best_currents = vec![0.0; n];
    if k != usize::MAX {
        for (slot, v) in idx.iter().zip(&candidates[k]) {
            best_currents[*slot] = *v;
        }
    }
    Ok(OracleResult { best_pte, best_currents, evaluations: candidates.len() })
}

/// Region random poses are drawn from, mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRegion {
    pub x_mm: (f64, f64),
    pub y_mm: (f64, f64),
    pub z_mm: (f64, f64),
}

impl Default for PoseRegion {
    fn default() -> Self {
        Self { x_mm: (-15.0, 15.0), y_mm: (-15.0, 15.0), z_mm: (10.0, 30.0) }
    }
}

/// Uniform positions in `region` with isotropically distributed axes.
pub fn random_poses(seed: u64, count: usize, region: &PoseRegion) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let p = Vec3::new(
                rng.random_range(region.x_mm.0..=region.x_mm.1),
                rng.random_range(region.y_mm.0..=region.y_mm.1),
                rng.random_range(region.z_mm.0..=region.z_mm.1),
            );
            let a: [f64; 3] = UnitSphere.sample(&mut rng);
            Pose { position_mm: p, axis: Vec3::from(a).normalize() }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub pose: Pose,
    pub active_channels: usize,
    pub pte_grid: f64,
    pub pte_ae: f64,
    pub pte_bound: f64,
}

impl OracleComparison {
    pub fn ae_over_grid(&self) -> f64 {
        if self.pte_grid > 0.0 {
            self.pte_ae / self.pte_grid
        } else {
            1.0
        }
    }
}

/// Echo-loop allocation against the grid oracle over the channels the loop
/// keeps active, for each pose.
pub fn oracle_comparison(
    scenario: &ScenarioConfig,
    model: &ArrayModel,
    poses: &[Pose],
    steps: usize,
    sensing: Sensing,
) -> Result<Vec<OracleComparison>> {
    let fresh = LoopState::new(model.channels(), scenario.budget, &scenario.rx_chain);
    poses
        .iter()
        .map(|pose| {
            let state = model.state_for(&scenario.receiver.with_pose(*pose))?;
            let upd = controlloop::ae_update(scenario, model, &fresh, pose, sensing)?;
            let active = upd.drive.active_mask.clone();
            let oracle = grid_oracle(&state, &active, steps)?;
            Ok(OracleComparison {
                pose: *pose,
                active_channels: active.iter().filter(|a| **a).count(),
                pte_grid: oracle.best_pte,
                pte_ae: controlloop::drive_pte(&state, &upd.drive)?,
                pte_bound: circuit::pte_upper_bound(&state),
            })
        })
        .collect()
}
