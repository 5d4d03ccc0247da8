//! Quasi-static magnetics of posed circular coils.
//!
//! Lengths in the public types are millimetres; fields are returned in tesla
//! per ampere and inductances in henries. Each coil is a set of coaxial,
//! coplanar circular filaments ("rings"): a single ring for a thin coil, or
//! rings spread evenly between an inner and the outer radius for a flat
//! pancake winding. The coil's turns are shared equally among its rings.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature;
use crate::special::vector_potential_over_rho;
use crate::{MM, MU0};

pub type Vec3 = Vector3<f64>;

const UNIT_TOL: f64 = 1e-9;
/// Evaluation points closer than this to a filament (metres) are rejected.
const FILAMENT_CLEARANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MagneticsError {
    #[error("singular evaluation: {0}")]
    Singular(String),
    #[error("invalid coil `{name}`: {rule}")]
    InvalidCoil { name: String, rule: String },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("non-positive inductance ({0} H) in coupling coefficient")]
    NonPositiveInductance(f64),
}

pub type Result<T> = std::result::Result<T, MagneticsError>;

/// Radial distribution of a coil's turns.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Winding {
    /// All turns on one filament at the loop radius.
    #[default]
    Filament,
    /// Flat spiral: `rings` filaments evenly spaced from `inner_radius_mm`
    /// out to the loop radius.
    Pancake { inner_radius_mm: f64, rings: u32 },
}

fn default_normal() -> Vec3 {
    Vec3::z()
}

/// One transmitter or echo coil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoilSpec {
    #[serde(default)]
    pub name: String,
    /// Outer winding radius.
    pub loop_radius_mm: f64,
    #[serde(default)]
    pub winding: Winding,
    pub turns: u32,
    #[serde(default)]
    pub center_mm: Vec3,
    #[serde(default = "default_normal")]
    pub normal: Vec3,
    pub series_resistance_ohm: f64,
    pub self_inductance_h: f64,
    /// Series compensation capacitor; zero means uncompensated.
    #[serde(default)]
    pub compensation_capacitance_f: f64,
}

impl CoilSpec {
    /// Thin single-filament coil at the origin, normal along +z, uncompensated.
    pub fn filament(loop_radius_mm: f64, turns: u32) -> Self {
        Self {
            name: String::new(),
            loop_radius_mm,
            winding: Winding::Filament,
            turns,
            center_mm: Vec3::zeros(),
            normal: Vec3::z(),
            series_resistance_ohm: 1.0,
            self_inductance_h: 1e-6,
            compensation_capacitance_f: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |rule: &str| Err(MagneticsError::InvalidCoil { name: self.name.clone(), rule: rule.to_string() });
        if !(self.loop_radius_mm > 0.0 && self.loop_radius_mm.is_finite()) {
            return fail("loop_radius_mm must be > 0");
        }
        if self.turns < 1 {
            return fail("turns must be >= 1");
        }
        if !(self.series_resistance_ohm > 0.0) {
            return fail("series_resistance_ohm must be > 0");
        }
        if !(self.self_inductance_h > 0.0) {
            return fail("self_inductance_h must be > 0");
        }
        if !(self.compensation_capacitance_f >= 0.0) {
            return fail("compensation_capacitance_f must be >= 0");
        }
        if (self.normal.norm() - 1.0).abs() > UNIT_TOL {
            return fail("normal must be a unit vector (|n| = 1 within 1e-9)");
        }
        if self.center_mm.iter().any(|c| !c.is_finite()) {
            return fail("center_mm must be finite");
        }
        if let Winding::Pancake { inner_radius_mm, rings } = self.winding {
            if !(inner_radius_mm > 0.0 && inner_radius_mm < self.loop_radius_mm) {
                return fail("pancake inner_radius_mm must lie in (0, loop_radius_mm)");
            }
            if rings < 2 {
                return fail("pancake winding needs rings >= 2");
            }
        }
        Ok(())
    }

    /// `X = wL - 1/(wC)`; the capacitor term is dropped when uncompensated.
    pub fn reactance(&self, omega: f64) -> f64 {
        let xl = omega * self.self_inductance_h;
        if self.compensation_capacitance_f > 0.0 {
            xl - 1.0 / (omega * self.compensation_capacitance_f)
        } else {
            xl
        }
    }

    pub fn resonant_frequency_hz(&self) -> Option<f64> {
        (self.compensation_capacitance_f > 0.0)
            .then(|| 1.0 / (2.0 * PI * (self.self_inductance_h * self.compensation_capacitance_f).sqrt()))
    }

    /// Capacitance that resonates this coil's inductance at `freq_hz`.
    pub fn resonating_capacitance(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz;
        1.0 / (w * w * self.self_inductance_h)
    }

    /// `(radius in metres, turn weight)` for each filament ring.
    pub fn rings(&self) -> Vec<(f64, f64)> {
        let turns = self.turns as f64;
        match self.winding {
            Winding::Filament => vec![(self.loop_radius_mm * MM, turns)],
            Winding::Pancake { inner_radius_mm, rings } => {
                let n = rings as usize;
                let weight = turns / n as f64;
                (0..n)
                    .map(|i| {
                        let t = i as f64 / (n - 1) as f64;
                        let r = inner_radius_mm + t * (self.loop_radius_mm - inner_radius_mm);
                        (r * MM, weight)
                    })
                    .collect()
            }
        }
    }

    /// Sum of turn-weighted ring areas (m^2 * turns), the coil's dipole moment per ampere.
    pub fn area_turns(&self) -> f64 {
        self.rings().iter().map(|(r, w)| w * PI * r * r).sum()
    }

    pub fn center_m(&self) -> Vec3 {
        self.center_mm * MM
    }

    pub fn with_center(mut self, center_mm: Vec3) -> Self {
        self.center_mm = center_mm;
        self
    }

    /// Sets the winding axis; `normal` is normalized.
    pub fn with_normal(mut self, normal: Vec3) -> Self {
        self.normal = normal.normalize();
        self
    }

    /// Applies the rigid motion `p -> rotation * p + translation_mm`.
    pub fn transformed(&self, rotation: &Rotation3<f64>, translation_mm: &Vec3) -> Self {
        let mut out = self.clone();
        out.center_mm = rotation * self.center_mm + translation_mm;
        out.normal = (rotation * self.normal).normalize();
        out
    }
}

/// Implant position (mm) and ME-film long axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub position_mm: Vec3,
    pub axis: Vec3,
}

impl Pose {
    pub fn new(position_mm: Vec3, axis: Vec3) -> Result<Self> {
        let pose = Self { position_mm, axis };
        pose.validate()?;
        Ok(pose)
    }

    /// Normalizes `axis` before building the pose.
    pub fn with_direction(position_mm: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(MagneticsError::InvalidPose("zero or non-finite direction".into()));
        }
        Self::new(position_mm, direction / n)
    }

    /// Position `(x, y, z)` mm with the axis tilted by `angle_deg` from +z towards +x
    /// (rotation in the XZ plane).
    pub fn xz_rotated(position_mm: Vec3, angle_deg: f64) -> Self {
        let t = angle_deg.to_radians();
        Self { position_mm, axis: Vec3::new(t.sin(), 0.0, t.cos()) }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.axis.norm() - 1.0).abs() > UNIT_TOL {
            return Err(MagneticsError::InvalidPose(format!(
                "axis must be a unit vector, |axis| = {}",
                self.axis.norm()
            )));
        }
        if self.position_mm.iter().any(|c| !c.is_finite()) {
            return Err(MagneticsError::InvalidPose("position must be finite".into()));
        }
        Ok(())
    }
}

/// Lumped implant receiver: the ME film as an axis-aligned pickup with a series
/// resonant load, plus the auxiliary echo coil coaxial with the film axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverModel {
    pub pose: Pose,
    /// Flux-linkage pickup along the axis, m^2 * turns.
    pub effective_area_turns_m2: f64,
    pub load_resistance_ohm: f64,
    /// Motional inductance of the film's series equivalent circuit.
    pub load_inductance_h: f64,
    /// Frequency at which the load reactance vanishes.
    pub load_resonance_hz: f64,
    /// Echo coil geometry. Its center and normal are taken from `pose`.
    pub ae_coil: CoilSpec,
}

impl ReceiverModel {
    pub fn validate(&self) -> Result<()> {
        self.pose.validate()?;
        let bad = |rule: &str| Err(MagneticsError::InvalidCoil { name: "receiver".into(), rule: rule.to_string() });
        if !(self.effective_area_turns_m2 > 0.0) {
            return bad("effective_area_turns_m2 must be > 0");
        }
        if !(self.load_resistance_ohm > 0.0) {
            return bad("load_resistance_ohm must be > 0");
        }
        if !(self.load_inductance_h > 0.0) {
            return bad("load_inductance_h must be > 0");
        }
        if !(self.load_resonance_hz > 0.0) {
            return bad("load_resonance_hz must be > 0");
        }
        self.placed_ae_coil().validate()
    }

    /// `X_L(w) = wL - 1/(wC)` with C chosen to resonate at `load_resonance_hz`.
    pub fn load_reactance_at(&self, omega: f64) -> f64 {
        let w0 = 2.0 * PI * self.load_resonance_hz;
        self.load_inductance_h * (omega - w0 * w0 / omega)
    }

    pub fn with_pose(&self, pose: Pose) -> Self {
        Self { pose, ..self.clone() }
    }

    /// The echo coil placed at the receiver position, coaxial with the film axis.
    pub fn placed_ae_coil(&self) -> CoilSpec {
        self.ae_coil.clone().with_center(self.pose.position_mm).with_normal(self.pose.axis)
    }
}

/// Quadrature settings for the magnetics engines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    /// Cap on trapezoid nodes per ring for Biot-Savart field evaluation.
    pub field_nodes: usize,
    /// Node doubling stops once the ring sum changes by less than this, relative.
    pub field_tolerance: f64,
    /// Initial Gauss-Kronrod panels around each receiving ring.
    pub mutual_panels: usize,
    /// Relative tolerance of each ring-pair integral.
    pub mutual_tolerance: f64,
    pub mutual_max_panels: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            field_nodes: 2880,
            field_tolerance: 1e-13,
            mutual_panels: 8,
            mutual_tolerance: 1e-12,
            mutual_max_panels: 4000,
        }
    }
}

impl Quadrature {
    /// Doubled order: twice the nodes and panels, tolerance tightened tenfold.
    pub fn refined(&self) -> Self {
        Self {
            field_nodes: self.field_nodes * 2,
            field_tolerance: self.field_tolerance / 10.0,
            mutual_panels: self.mutual_panels * 2,
            mutual_tolerance: self.mutual_tolerance / 10.0,
            mutual_max_panels: self.mutual_max_panels * 2,
        }
    }
}

/// Right-handed orthonormal `(u, v)` spanning the plane normal to `n`;
/// `u = x`, `v = y` for `n = z`.
pub fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = (helper - n * helper.dot(n)).normalize();
    let v = n.cross(&u);
    (u, v)
}

const FIELD_START_NODES: usize = 32;
const MUTUAL_START_NODES: usize = 32;

/// Distance from `point` to a circle of `radius` (all metres).
fn distance_to_ring(center: &Vec3, normal: &Vec3, radius: f64, point: &Vec3) -> f64 {
    let r = point - center;
    let z = r.dot(normal);
    let rho = (r - normal * z).norm();
    ((rho - radius).powi(2) + z * z).sqrt()
}

/// Magnetic flux density per ampere (T/A) at `point_mm`, by Biot-Savart line
/// integration with the default order.
pub fn field_at(coil: &CoilSpec, point_mm: &Vec3) -> Result<Vec3> {
    field_at_with(coil, point_mm, &Quadrature::default())
}

/// [`field_at`] with explicit quadrature.
pub fn field_at_with(coil: &CoilSpec, point_mm: &Vec3, quad: &Quadrature) -> Result<Vec3> {
    coil.validate()?;
    let p = point_mm * MM;
    let c = coil.center_m();
    let n = coil.normal;
    let (u, v) = plane_basis(&n);
    let cap = quad.field_nodes.max(FIELD_START_NODES);
    let mut b = Vec3::zeros();
    for (radius, weight) in coil.rings() {
        if distance_to_ring(&c, &n, radius, &p) < FILAMENT_CLEARANCE {
            return Err(MagneticsError::Singular(format!("field point lies on a filament of coil `{}`", coil.name)));
        }
        let kernel = |phi: f64| {
            let (s, co) = phi.sin_cos();
            let radial = u * co + v * s;
            let tangent = v * co - u * s;
            let r = p - (c + radial * radius);
            let d = r.norm();
            tangent.cross(&r) / (d * d * d)
        };
        // The periodic trapezoid rule converges geometrically and its node
        // sets nest, so each doubling only adds the midpoints.
        let mut nodes = FIELD_START_NODES;
        let mut sum: Vec3 = (0..nodes).map(|k| kernel(2.0 * PI * k as f64 / nodes as f64)).sum();
        let mut estimate = sum * (2.0 * PI / nodes as f64);
        while nodes < cap {
            let step = 2.0 * PI / nodes as f64;
            sum += (0..nodes).map(|k| kernel((k as f64 + 0.5) * step)).sum::<Vec3>();
            nodes *= 2;
            let next = sum * (2.0 * PI / nodes as f64);
            let change = (next - estimate).norm();
            estimate = next;
            if change <= quad.field_tolerance * estimate.norm() {
                break;
            }
        }
        b += estimate * (weight * radius);
    }
    Ok(b * (MU0 / (4.0 * PI)))
}

fn coincident_rings(a: &CoilSpec, ra: f64, b: &CoilSpec, rb: f64) -> bool {
    let scale = ra.max(rb);
    (ra - rb).abs() <= 1e-12 * scale
        && (a.center_m() - b.center_m()).norm() <= 1e-12 * scale
        && a.normal.dot(&b.normal).abs() >= 1.0 - 1e-15
}

/// Mutual inductance of one source ring (coil `a`) with one receiving ring
/// (coil `b`), both with unit turn weight.
fn ring_mutual(a: &CoilSpec, ra: f64, b: &CoilSpec, rb: f64, quad: &Quadrature) -> Result<f64> {
    let ca = a.center_m();
    let na = a.normal;
    let cb = b.center_m();
    let (u, v) = plane_basis(&b.normal);
    let mut singular = false;
    // Vector potential of ring a, up to the constant factor.
    let potential = |point: &Vec3| {
        let r = point - ca;
        let z = r.dot(&na);
        let rho_vec = r - na * z;
        na.cross(&rho_vec) * vector_potential_over_rho(ra, rho_vec.norm(), z)
    };
    // A constant potential has no circulation. Removing the value at b's
    // centre leaves only the varying part, which avoids cancellation when
    // b is small or far away.
    let offset = potential(&cb);
    let offset = if offset.iter().all(|x| x.is_finite()) { offset } else { Vec3::zeros() };
    let eval = |phi: f64| {
        let (s, co) = phi.sin_cos();
        let point = cb + (u * co + v * s) * rb;
        let tangent = v * co - u * s;
        (potential(&point) - offset).dot(&tangent) * rb
    };
    let integrand = |phi: f64| {
        let value = eval(phi);
        if value.is_finite() {
            return value;
        }
        // A node on a crossing or touching point: the log singularity carries
        // no weight there, so evaluate beside it. Tangent rings separate only
        // quadratically, hence the wider steps.
        for step in [1e-9, -1e-9, 1e-7, -1e-7, 1e-6, -1e-6] {
            let nudged = eval(phi + step);
            if nudged.is_finite() {
                return nudged;
            }
        }
        singular = true;
        0.0
    };
    let crossings = crossing_angles(&ca, &na, ra, &cb, &b.normal, rb, &u, &v);
    // Disjoint rings give a smooth periodic integrand, where the trapezoid
    // rule converges geometrically and successive doublings bound the error
    // even when the circulation is a tiny residue of large terms.
    if crossings.is_empty() {
        if let Some(value) = periodic_circulation(&eval, quad) {
            return Ok(value);
        }
    }
    // Split the receiving ring where it crosses the source filament so the
    // log singularities sit on panel ends, never on a node.
    let start = crossings.first().copied().unwrap_or(0.0);
    let mut ends: Vec<f64> = crossings.iter().skip(1).copied().collect();
    ends.push(start + 2.0 * PI);
    let panels = (quad.mutual_panels / ends.len()).max(2);
    let mut integrand = integrand;
    let mut value = 0.0;
    let mut lo = start;
    for hi in ends {
        value +=
            quadrature::integrate(&mut integrand, lo, hi, panels, quad.mutual_tolerance, quad.mutual_max_panels).value;
        lo = hi;
    }
    if singular {
        return Err(MagneticsError::Singular(format!(
            "quadrature node on the filament of `{}` while integrating over `{}`",
            a.name, b.name
        )));
    }
    Ok(value)
}

/// Doubling periodic trapezoid over one turn. `None` if a node is not finite
/// or the node cap is reached first.
fn periodic_circulation(eval: &impl Fn(f64) -> f64, quad: &Quadrature) -> Option<f64> {
    let cap = quad.mutual_max_panels * 16;
    let mut nodes = MUTUAL_START_NODES;
    let mut sum = 0.0;
    let mut magnitude = 0.0;
    for k in 0..nodes {
        let f = eval(2.0 * PI * k as f64 / nodes as f64);
        sum += f;
        magnitude += f.abs();
    }
    let mut estimate = sum * 2.0 * PI / nodes as f64;
    while nodes < cap {
        let step = 2.0 * PI / nodes as f64;
        for k in 0..nodes {
            let f = eval((k as f64 + 0.5) * step);
            sum += f;
            magnitude += f.abs();
        }
        nodes *= 2;
        if !sum.is_finite() {
            return None;
        }
        let next = sum * 2.0 * PI / nodes as f64;
        let change = (next - estimate).abs();
        estimate = next;
        let noise = 16.0 * f64::EPSILON * magnitude * 2.0 * PI / nodes as f64;
        if change <= quad.mutual_tolerance * estimate.abs() || change <= noise {
            return Some(estimate);
        }
    }
    None
}

/// Angles on ring `b` (radius `rb`, basis `u`, `v`) where it crosses ring `a`,
/// ascending within one turn. Only coplanar rings can cross or touch; other
/// configurations return no angles.
#[allow(clippy::too_many_arguments)]
fn crossing_angles(ca: &Vec3, na: &Vec3, ra: f64, cb: &Vec3, nb: &Vec3, rb: f64, u: &Vec3, v: &Vec3) -> Vec<f64> {
    let offset = ca - cb;
    let scale = ra.max(rb);
    let coplanar = (na.dot(nb).abs() - 1.0).abs() < 1e-12 && offset.dot(nb).abs() < 1e-12 * scale;
    let d = offset.norm();
    let slack = 1e-12 * scale;
    if !coplanar || d == 0.0 || d > ra + rb + slack || d < (ra - rb).abs() - slack {
        return Vec::new();
    }
    let phi0 = offset.dot(v).atan2(offset.dot(u));
    let alpha = ((rb * rb + d * d - ra * ra) / (2.0 * rb * d)).clamp(-1.0, 1.0).acos();
    // Tangent rings touch at a single point.
    if alpha < 1e-9 {
        vec![phi0]
    } else {
        vec![phi0 - alpha, phi0 + alpha]
    }
}

/// Mutual inductance (H) between two coils with the default quadrature.
///
/// Neumann's double line integral, with the integral over the source loop
/// done in closed form (its vector potential) and the integral over the
/// receiving loop by a doubling periodic trapezoid, or by adaptive
/// Gauss-Kronrod when the loops cross. Filaments that cross each other
/// (coplanar overlapping coils) give an integrable logarithmic singularity and
/// are handled; exactly coincident filaments are rejected.
pub fn mutual_inductance(a: &CoilSpec, b: &CoilSpec) -> Result<f64> {
    mutual_inductance_with(a, b, &Quadrature::default())
}

pub fn mutual_inductance_with(a: &CoilSpec, b: &CoilSpec, quad: &Quadrature) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let mut total = 0.0;
    for (ra, wa) in a.rings() {
        for (rb, wb) in b.rings() {
            if coincident_rings(a, ra, b, rb) {
                return Err(MagneticsError::Singular(format!("coils `{}` and `{}` share a filament", a.name, b.name)));
            }
            // Reciprocity lets the smaller ring receive, which keeps the
            // circulation integral well conditioned.
            let m = if rb <= ra { ring_mutual(a, ra, b, rb, quad)? } else { ring_mutual(b, rb, a, ra, quad)? };
            total += wa * wb * m;
        }
    }
    Ok(total)
}

/// Coil-to-receiver mutual inductance in the small-pickup (dipole) limit:
/// the axial field per ampere at the receiver times its area-turns.
pub fn rx_mutual(coil: &CoilSpec, rx: &ReceiverModel) -> Result<f64> {
    rx_mutual_with(coil, rx, &Quadrature::default())
}

pub fn rx_mutual_with(coil: &CoilSpec, rx: &ReceiverModel, quad: &Quadrature) -> Result<f64> {
    let b = field_at_with(coil, &rx.pose.position_mm, quad)?;
    Ok(b.dot(&rx.pose.axis) * rx.effective_area_turns_m2)
}

/// Coil-to-echo-coil mutual inductance, same dipole limit with the echo
/// coil's own area-turns. Proportional to [`rx_mutual`] at every pose.
pub fn ae_mutual_with(coil: &CoilSpec, rx: &ReceiverModel, quad: &Quadrature) -> Result<f64> {
    let b = field_at_with(coil, &rx.pose.position_mm, quad)?;
    Ok(b.dot(&rx.pose.axis) * rx.ae_coil.area_turns())
}

/// `k = m / sqrt(la * lb)`.
pub fn coupling_coefficient(m: f64, la: f64, lb: f64) -> Result<f64> {
    for l in [la, lb] {
        if !(l > 0.0) {
            return Err(MagneticsError::NonPositiveInductance(l));
        }
    }
    Ok(m / (la * lb).sqrt())
}
