//! Magnetics and circuit results against independent formulas.

use std::f64::consts::PI;

use num_complex::Complex64;
use omniwpt::arraydesign::{find_cancellation_distance, layout_three_coils};
use omniwpt::circuit::{self, CouplingState};
use omniwpt::controlloop::ArrayModel;
use omniwpt::magnetics::{
    ae_mutual_with, coupling_coefficient, field_at, mutual_inductance, CoilSpec, Pose, Quadrature, Vec3,
};
use omniwpt::{ScenarioConfig, MU0};

/// Complete elliptic integrals K(m), E(m) by a dense midpoint rule on a
/// substitution that removes the endpoint behaviour. Independent of the
/// crate's AGM and series code.
fn k_and_e(m: f64) -> (f64, f64) {
    let n = 200_000;
    let h = 0.5 * PI / n as f64;
    let (mut k, mut e) = (0.0, 0.0);
    for i in 0..n {
        let t = (i as f64 + 0.5) * h;
        let w = (1.0 - m * t.sin().powi(2)).sqrt();
        k += h / w;
        e += h * w;
    }
    (k, e)
}

/// Maxwell's formula for coaxial single-turn loops.
fn maxwell_coaxial(a: f64, b: f64, d: f64) -> f64 {
    let m = 4.0 * a * b / ((a + b).powi(2) + d * d);
    let k = m.sqrt();
    let (kk, ee) = k_and_e(m);
    MU0 * (a * b).sqrt() * ((2.0 / k - k) * kk - 2.0 / k * ee)
}

/// Neumann's double integral by a plain double trapezoid sum.
fn neumann_brute(a: &CoilSpec, b: &CoilSpec, n: usize) -> f64 {
    let ring = |c: &CoilSpec| {
        let (u, v) = omniwpt::magnetics::plane_basis(&c.normal);
        let r = c.loop_radius_mm * 1e-3;
        let centre = c.center_mm * 1e-3;
        (0..n)
            .map(|k| {
                let p = 2.0 * PI * k as f64 / n as f64;
                let pos = centre + (u * p.cos() + v * p.sin()) * r;
                let dl = (v * p.cos() - u * p.sin()) * (r * 2.0 * PI / n as f64);
                (pos, dl)
            })
            .collect::<Vec<_>>()
    };
    let (ra, rb) = (ring(a), ring(b));
    let mut sum = 0.0;
    for (pa, da) in &ra {
        for (pb, db) in &rb {
            sum += da.dot(db) / (pa - pb).norm();
        }
    }
    MU0 / (4.0 * PI) * sum * (a.turns * b.turns) as f64
}

#[test]
fn coaxial_loops_match_maxwell() {
    let a = CoilSpec::filament(21.0, 1);
    let b = CoilSpec::filament(21.0, 1).with_center(Vec3::new(0.0, 0.0, 10.0));
    let want = maxwell_coaxial(0.021, 0.021, 0.010);
    let got = mutual_inductance(&a, &b).unwrap();
    assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");

    // k by hand from the same oracle value.
    let (la, lb) = (5.0e-8, 8.0e-8);
    let k = coupling_coefficient(got, la, lb).unwrap();
    assert!((k - want / (la * lb).sqrt()).abs() <= 1e-6 * k.abs());
}

#[test]
fn unequal_coaxial_loops_match_maxwell() {
    for (ra, rb, d) in [(5.0, 21.0, 3.0), (12.0, 9.0, 25.0), (1.5, 21.0, 20.0)] {
        let a = CoilSpec::filament(ra, 1);
        let b = CoilSpec::filament(rb, 1).with_center(Vec3::new(0.0, 0.0, d));
        let want = maxwell_coaxial(ra * 1e-3, rb * 1e-3, d * 1e-3);
        let got = mutual_inductance(&a, &b).unwrap();
        assert!((got - want).abs() <= 1e-6 * want.abs(), "{ra} {rb} {d}: {got} vs {want}");
    }
}

#[test]
fn tilted_offset_loops_match_brute_force_neumann() {
    let cases = [
        (CoilSpec::filament(10.0, 3), CoilSpec::filament(7.0, 2).with_center(Vec3::new(4.0, -3.0, 12.0))),
        (
            CoilSpec::filament(21.0, 1),
            CoilSpec::filament(5.0, 4).with_center(Vec3::new(8.0, 2.0, 15.0)).with_normal(Vec3::new(1.0, 0.5, 1.0)),
        ),
        (
            CoilSpec::filament(8.0, 1).with_normal(Vec3::new(0.0, 1.0, 0.2)),
            CoilSpec::filament(6.0, 1).with_center(Vec3::new(-20.0, 5.0, 3.0)).with_normal(Vec3::new(1.0, 0.0, 0.0)),
        ),
    ];
    for (a, b) in cases {
        let want = neumann_brute(&a, &b, 1200);
        let got = mutual_inductance(&a, &b).unwrap();
        assert!((got - want).abs() <= 1e-8 * want.abs(), "{got} vs {want}");
    }
}

#[test]
fn on_axis_field_matches_loop_formula() {
    let coil = CoilSpec::filament(21.0, 1);
    for z in [0.0, 5.0, 20.0, 80.0] {
        let r = 0.021;
        let zm = z * 1e-3;
        let want = MU0 * r * r / (2.0 * (r * r + zm * zm).powf(1.5));
        let b = field_at(&coil, &Vec3::new(0.0, 0.0, z)).unwrap();
        assert!((b.z - want).abs() <= 1e-9 * want, "z = {z}");
        assert!(b.x.abs() + b.y.abs() <= 1e-12 * want);
    }
}

#[test]
fn echo_dipole_matches_neumann_on_echo_coil() {
    let sc = ScenarioConfig::bundled_default();
    for coil in std::iter::once(sc.single_small()).chain(sc.coils.iter().cloned()) {
        let pos = coil.center_mm + Vec3::new(0.0, 0.0, 20.0);
        let rx = sc.receiver.with_pose(Pose::new(pos, Vec3::z()).unwrap());
        let dipole = ae_mutual_with(&coil, &rx, &Quadrature::default()).unwrap();
        let full = mutual_inductance(&coil, &rx.placed_ae_coil()).unwrap();
        assert!((dipole - full).abs() <= 0.05 * full.abs(), "{dipole} vs {full}");
    }
}

#[test]
fn single_tank_receiver_current_matches_two_by_two_solve() {
    let omega = 2.0 * PI * 340e3;
    let z1 = Complex64::new(0.3, 2.0);
    let zl = Complex64::new(1000.0, -40.0);
    let m = 3.0e-7;
    let s = CouplingState::new(omega, vec![z1], nalgebra::DMatrix::zeros(1, 1), vec![m], zl).unwrap();
    let v = Complex64::new(1.5, 0.0);
    let (i, il) = circuit::solve_network(&s, &[v]).unwrap();
    // [z1, jwM; jwM, zl] [I1; IL] = [V; 0]
    let jwm = Complex64::new(0.0, omega * m);
    let det = z1 * zl - jwm * jwm;
    let i1 = v * zl / det;
    let il_want = -jwm * v / det;
    assert!((i[0] - i1).norm() <= 1e-12 * i1.norm());
    assert!((il - il_want).norm() <= 1e-12 * il_want.norm());
    let reflected = -jwm * i1 / zl;
    assert!((circuit::receiver_current(&s, &i).unwrap() - reflected).norm() <= 1e-12 * reflected.norm());
}

#[test]
fn default_array_receiver_current_is_self_consistent() {
    let sc = ScenarioConfig::bundled_default();
    let model = ArrayModel::from_scenario(&sc).unwrap();
    let state = model.state_for(&sc.receiver).unwrap();
    let volts = [Complex64::new(1.0, 0.0), Complex64::new(0.4, 0.2), Complex64::new(-0.7, 0.1)];
    let (i, il) = circuit::solve_network(&state, &volts).unwrap();
    let from_currents = circuit::receiver_current(&state, &i).unwrap();
    assert!((il - from_currents).norm() <= 1e-9 * il.norm());
}

#[test]
fn cancelled_array_drivers_see_only_their_own_tank() {
    let sc = ScenarioConfig::bundled_default();
    let coil = &sc.coils[0];
    let d = find_cancellation_distance(coil, (15.0, 35.0)).unwrap();
    let coils = layout_three_coils(coil, d);
    let model = ArrayModel::new(&coils, sc.omega(), Quadrature::default()).unwrap();
    let state = model.state_for(&sc.receiver).unwrap();
    let amp = (sc.budget / 3.0).sqrt();
    let currents = vec![Complex64::new(amp, 0.0); 3];
    for k in 0..3 {
        let v = circuit::driver_voltage(&state, &currents, k).unwrap();
        let own = state.tx_tank_impedances[k] * currents[k];
        assert!((v - own).norm() / v.norm() < 0.01, "driver {k}");
    }
}
