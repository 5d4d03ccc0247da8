//! Complete elliptic integrals and the circular-loop vector potential kernel.

use std::f64::consts::PI;

use crate::MU0;

/// Below this parameter the vector potential is evaluated from its
/// hypergeometric series; above it the K/E combination has no cancellation.
const SERIES_CROSSOVER: f64 = 0.3;

/// Complete elliptic integrals of the first and second kind, `(K(m), E(m))`,
/// given the complementary parameter `m1 = 1 - m`.
///
/// Arithmetic-geometric mean iteration. Passing the complement keeps full
/// precision in the logarithmic regime `m -> 1`. `m1 == 0` yields `K = inf`.
pub fn ellip_ke(m1: f64) -> (f64, f64) {
    debug_assert!((0.0..=1.0).contains(&m1), "complementary parameter {m1} outside [0, 1]");
    if m1 == 0.0 {
        return (f64::INFINITY, 1.0);
    }
    let m = 1.0 - m1;
    let mut a = 1.0_f64;
    let mut b = m1.sqrt();
    let mut weight = 0.5;
    let mut sum = weight * m;
    for _ in 0..64 {
        let c = 0.5 * (a - b);
        if c.abs() <= 4.0 * f64::EPSILON * a {
            break;
        }
        let next_a = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next_a;
        weight *= 2.0;
        sum += weight * c * c;
    }
    let k = PI / (2.0 * a);
    (k, k * (1.0 - sum))
}

/// `2F1(3/2, 3/2; 3; m)`, the series behind `(2 - m)K - 2E = (pi/16) m^2 F(m)`.
fn loop_series(m: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 0..400 {
        let n = n as f64;
        term *= (1.5 + n) * (1.5 + n) / ((3.0 + n) * (1.0 + n)) * m;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Azimuthal vector potential of a unit-current circular filament divided by
/// the radial distance, `A_phi / rho`, in T (i.e. Wb/m^2).
///
/// `radius`, `rho` and `z` are in metres, measured in the loop's own
/// cylindrical frame. Finite at `rho = 0`; infinite on the filament.
pub fn vector_potential_over_rho(radius: f64, rho: f64, z: f64) -> f64 {
    let sum_sq = (radius + rho).powi(2) + z * z;
    let diff_sq = (radius - rho).powi(2) + z * z;
    let m = 4.0 * radius * rho / sum_sq;
    let d = sum_sq.sqrt();
    if m < SERIES_CROSSOVER {
        MU0 * radius * radius * loop_series(m) / (4.0 * d * d * d)
    } else {
        let m1 = diff_sq / sum_sq;
        let (k, e) = ellip_ke(m1);
        let w = (2.0 - m) * k - 2.0 * e;
        MU0 * d * w / (4.0 * PI * rho * rho)
    }
}
