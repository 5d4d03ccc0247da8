//! Placement of overlapping transmitter coils with cancelled mutual inductance.
//!
//! Two coplanar coils couple positively when they overlap strongly and
//! negatively once the return flux of one threads the other. The center
//! distance at which the two contributions balance nulls their mutual
//! inductance; three coils on an equilateral triangle of that side are then
//! pairwise decoupled.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::magnetics::{self, CoilSpec, MagneticsError, Quadrature, Vec3};

/// Root tolerance of the cancellation search, mm.
pub const DISTANCE_TOLERANCE_MM: f64 = 1e-6;
/// Default pairwise |k| above which a pair is flagged.
pub const DEFAULT_K_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArrayDesignError {
    #[error(
        "no mutual-inductance sign change between {d_min_mm} mm (M = {m_min:e} H) and {d_max_mm} mm (M = {m_max:e} H)"
    )]
    NoCancellation { d_min_mm: f64, d_max_mm: f64, m_min: f64, m_max: f64 },
    #[error("invalid bracket ({0}, {1}) mm: need 0 <= d_min < d_max")]
    InvalidBracket(f64, f64),
    #[error("array validation needs at least 2 coils, got {0}")]
    TooFewCoils(usize),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
}

pub type Result<T> = std::result::Result<T, ArrayDesignError>;

/// Mutual inductance of two copies of `coil` in the z = 0 plane, normals +z,
/// centers `d_mm` apart along x.
pub fn coplanar_mutual(coil: &CoilSpec, d_mm: f64, quad: &Quadrature) -> Result<f64> {
    let a = coil.clone().with_center(Vec3::zeros()).with_normal(Vec3::z());
    let b = a.clone().with_center(Vec3::new(d_mm, 0.0, 0.0));
    Ok(magnetics::mutual_inductance_with(&a, &b, quad)?)
}

pub fn find_cancellation_distance(coil: &CoilSpec, bracket: (f64, f64)) -> Result<f64> {
    find_cancellation_distance_with(coil, bracket, &Quadrature::default())
}

/// Center distance (mm) nulling the coplanar mutual inductance inside
/// `bracket`, by the Illinois variant of regula falsi (always bracketing).
pub fn find_cancellation_distance_with(coil: &CoilSpec, bracket: (f64, f64), quad: &Quadrature) -> Result<f64> {
    coil.validate()?;
    let (mut a, mut b) = bracket;
    if !(a >= 0.0 && b > a && b.is_finite()) {
        return Err(ArrayDesignError::InvalidBracket(a, b));
    }
    let m = |d: f64| coplanar_mutual(coil, d, quad);
    let (mut fa, mut fb) = (m(a)?, m(b)?);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(ArrayDesignError::NoCancellation { d_min_mm: a, d_max_mm: b, m_min: fa, m_max: fb });
    }
    let mut side = 0i8;
    for _ in 0..200 {
        if b - a <= DISTANCE_TOLERANCE_MM {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        // Guard against stalls at an end point.
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let fc = m(c)?;
        if fc == 0.0 {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        // Plain bisection when the interpolant keeps hugging one side.
        if b - a > DISTANCE_TOLERANCE_MM {
            let mid = 0.5 * (a + b);
            let fm = m(mid)?;
            if fm == 0.0 {
                return Ok(mid);
            }
            if fm.signum() == fb.signum() {
                b = mid;
                fb = fm;
            } else {
                a = mid;
                fa = fm;
            }
            side = 0;
        }
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

/// Three copies of `coil` on an equilateral triangle of side `distance_mm`,
/// centroid at the origin, coplanar in z = 0 with normals +z.
///
/// TX1 sits on the -y axis; TX2 and TX3 sit at -x and +x above it.
pub fn layout_three_coils(coil: &CoilSpec, distance_mm: f64) -> [CoilSpec; 3] {
    let r = distance_mm / 3f64.sqrt();
    let centers = [
        Vec3::new(0.0, -r, 0.0),
        Vec3::new(-0.5 * distance_mm, 0.5 * r, 0.0),
        Vec3::new(0.5 * distance_mm, 0.5 * r, 0.0),
    ];
    let mut index = 0;
    centers.map(|c| {
        index += 1;
        let mut placed = coil.clone().with_center(c).with_normal(Vec3::z());
        placed.name = format!("TX{index}");
        placed
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCoupling {
    pub i: usize,
    pub j: usize,
    pub mutual_h: f64,
    pub k: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrayReport {
    pub pairs: Vec<PairCoupling>,
    pub max_abs_k: f64,
    /// Per channel, `|sum_k jw M_ik| / |Z_i|` at unit currents: the share of
    /// the driver voltage caused by the neighbours.
    pub perturbation_fraction: Vec<f64>,
    pub k_threshold: f64,
}

impl ArrayReport {
    pub fn any_flagged(&self) -> bool {
        self.pairs.iter().any(|p| p.flagged)
    }
}

fn same_filaments(a: &CoilSpec, b: &CoilSpec) -> bool {
    a.rings() == b.rings()
        && (a.center_mm - b.center_mm).norm() < 1e-12
        && (a.normal.dot(&b.normal).abs() - 1.0).abs() < 1e-12
}

pub fn validate_array(coils: &[CoilSpec], omega: f64, k_threshold: f64) -> Result<ArrayReport> {
    validate_array_with(coils, omega, k_threshold, &Quadrature::default())
}

/// Pairwise mutual inductances and coupling coefficients of an array.
/// Coils sharing every filament are concentric copies and report `|k| = 1`.
pub fn validate_array_with(coils: &[CoilSpec], omega: f64, k_threshold: f64, quad: &Quadrature) -> Result<ArrayReport> {
    let n = coils.len();
    if n < 2 {
        return Err(ArrayDesignError::TooFewCoils(n));
    }
    for c in coils {
        c.validate()?;
    }
    let mut pairs = Vec::new();
    let mut induced = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&coils[i], &coils[j]);
            let (la, lb) = (a.self_inductance_h, b.self_inductance_h);
            let m = if same_filaments(a, b) {
                a.normal.dot(&b.normal).signum() * (la * lb).sqrt()
            } else {
                magnetics::mutual_inductance_with(a, b, quad)?
            };
            let k = magnetics::coupling_coefficient(m, la, lb)?;
            induced[i] += Complex64::new(0.0, omega * m);
            induced[j] += Complex64::new(0.0, omega * m);
            pairs.push(PairCoupling { i, j, mutual_h: m, k, flagged: k.abs() > k_threshold });
        }
    }
    let perturbation_fraction = coils
        .iter()
        .zip(&induced)
        .map(|(c, v)| v.norm() / Complex64::new(c.series_resistance_ohm, c.reactance(omega)).norm())
        .collect();
    let max_abs_k = pairs.iter().map(|p| p.k.abs()).fold(0.0, f64::max);
    Ok(ArrayReport { pairs, max_abs_k, perturbation_fraction, k_threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnetics::Winding;

    fn tx_coil() -> CoilSpec {
        CoilSpec {
            winding: Winding::Pancake { inner_radius_mm: 10.0, rings: 10 },
            self_inductance_h: 6.3e-6,
            series_resistance_ohm: 0.3,
            ..CoilSpec::filament(21.0, 10)
        }
    }

    #[test]
    fn single_filament_root_is_stable_under_refinement() {
        let coil = CoilSpec::filament(21.0, 1);
        let d = find_cancellation_distance(&coil, (22.0, 41.0)).unwrap();
        let q = Quadrature::default().refined();
        let refined = find_cancellation_distance_with(&coil, (22.0, 41.0), &q).unwrap();
        assert!((d - refined).abs() < 0.1, "{d} vs {refined}");
        // Thin coplanar loops null at roughly one and a half radii.
        assert!(d / 21.0 > 1.45 && d / 21.0 < 1.58, "{d}");
    }

    #[test]
    fn pancake_root_near_24mm() {
        let d = find_cancellation_distance(&tx_coil(), (15.0, 40.0)).unwrap();
        assert!((d - 24.0).abs() <= 0.15 * 24.0, "{d}");
        let m = coplanar_mutual(&tx_coil(), d, &Quadrature::default()).unwrap();
        assert!(m.abs() <= 1e-3 * tx_coil().self_inductance_h);
    }

    #[test]
    fn no_overlap_has_no_root() {
        let err = find_cancellation_distance(&tx_coil(), (45.0, 80.0)).unwrap_err();
        match err {
            ArrayDesignError::NoCancellation { m_min, m_max, .. } => {
                assert!(m_min < 0.0 && m_max < 0.0 && m_max.abs() < m_min.abs());
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_bracket() {
        assert!(matches!(
            find_cancellation_distance(&tx_coil(), (30.0, 20.0)),
            Err(ArrayDesignError::InvalidBracket(..))
        ));
    }

    #[test]
    fn layout_is_equilateral_and_centered() {
        let coils = layout_three_coils(&tx_coil(), 24.5);
        let c: Vec<Vec3> = coils.iter().map(|c| c.center_mm).collect();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!(((c[i] - c[j]).norm() - 24.5).abs() < 1e-9);
        }
        assert!((c[0] + c[1] + c[2]).norm() < 1e-12);
        assert!(coils.iter().all(|c| c.normal == Vec3::z() && c.center_mm.z == 0.0));
    }

    #[test]
    fn layout_pairs_are_cancelled() {
        let d = find_cancellation_distance(&tx_coil(), (15.0, 40.0)).unwrap();
        let coils = layout_three_coils(&tx_coil(), d);
        let report = validate_array(&coils, 2.0 * std::f64::consts::PI * 340e3, DEFAULT_K_THRESHOLD).unwrap();
        assert!(report.max_abs_k <= 1e-3, "{}", report.max_abs_k);
        assert!(!report.any_flagged());
    }

    #[test]
    fn concentric_pair_is_flagged() {
        let c = tx_coil();
        let report = validate_array(&[c.clone(), c], 1e6, DEFAULT_K_THRESHOLD).unwrap();
        assert!((report.max_abs_k - 1.0).abs() < 1e-12);
        assert!(report.any_flagged());
    }

    #[test]
    fn diameter_gap_couples_more_than_cancelled_layout() {
        let c = tx_coil();
        let d = find_cancellation_distance(&c, (15.0, 40.0)).unwrap();
        let cancelled = validate_array(&layout_three_coils(&c, d), 1e6, 1e-3).unwrap();
        let gapped = vec![c.clone(), c.clone().with_center(Vec3::new(84.0, 0.0, 0.0))];
        let apart = validate_array(&gapped, 1e6, 1e-3).unwrap();
        assert!(apart.max_abs_k > cancelled.max_abs_k);
    }

    #[test]
    fn too_few_coils() {
        assert_eq!(validate_array(&[tx_coil()], 1e6, 1e-3), Err(ArrayDesignError::TooFewCoils(1)));
    }
}
