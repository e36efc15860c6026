use std::f64::consts::PI;

use billiard_evt::billiard::{next_collision, GeometryConfig, ScattererConfig, ScattererTable};
use billiard_evt::orbits::{
    extremal_index, find_period2_line_of_centers, infinite_horizon_family, refine_orbit_newton,
    BoundarySeed, OrbitError, OrbitSeed, PeriodicOrbit,
};
use billiard_evt::tangent::expansion_factor_closed_form;
use proptest::prelude::*;

fn square(radius: f64) -> ScattererTable {
    ScattererTable::build(&GeometryConfig::square_single(radius)).unwrap()
}

fn triangle_seed(dr: [f64; 3]) -> OrbitSeed {
    let r = 0.3;
    let toward = |from: [f64; 2]| {
        let a = (1.0 / 3.0 - from[1]).atan2(1.0 / 3.0 - from[0]);
        (a * r).rem_euclid(2.0 * PI * r)
    };
    OrbitSeed {
        points: vec![
            BoundarySeed { scatterer: 0, image: [0, 0], r: toward([0.0, 0.0]) + dr[0] },
            BoundarySeed { scatterer: 0, image: [1, 0], r: toward([1.0, 0.0]) + dr[1] },
            BoundarySeed { scatterer: 0, image: [0, 1], r: toward([0.0, 1.0]) + dr[2] },
        ],
        closing: [0, 0],
    }
}

/// Largest mismatch between the angle of incidence and the angle of
/// reflection, measured from the unfolded chords around each bounce.
fn reflection_residual(orbit: &PeriodicOrbit, table: &ScattererTable) -> f64 {
    let q = orbit.period;
    let chords: Vec<_> = orbit
        .points
        .iter()
        .map(|x| {
            let c = next_collision(x, table).unwrap();
            (c.unfolded_segment.1 - c.unfolded_segment.0).normalized()
        })
        .collect();
    (0..q)
        .map(|i| {
            let x = orbit.points[i];
            let (_, n, _) = table.boundary_frame(x.scatterer, x.r);
            let incoming = chords[(i + q - 1) % q];
            let outgoing = chords[i];
            // signed angles from the normal; specular reflection mirrors them
            let a_in = (-incoming).cross(n).atan2((-incoming).dot(n));
            let a_out = outgoing.cross(n).atan2(outgoing.dot(n));
            (a_in + a_out).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn reflection_law_holds_on_every_orbit() {
    let table = square(0.3);
    let mut orbits: Vec<_> = [[1, 0], [1, 1], [2, 1], [1, 3]]
        .iter()
        .map(|&v| find_period2_line_of_centers(&table, 0, v).unwrap())
        .collect();
    orbits.push(refine_orbit_newton(&triangle_seed([0.01, -0.02, 0.0]), &table).unwrap().0);
    for o in &orbits {
        let res = reflection_residual(o, &table);
        assert!(res < 1e-10, "{:?} {res}", o.points);
        let t = extremal_index(o).unwrap().theta;
        assert!(t > 0.0 && t < 1.0);
    }
}

#[test]
fn reversed_orbits_have_the_same_expansion() {
    let table = square(0.3);
    let mut orbits: Vec<_> = [[1, 0], [2, 1]]
        .iter()
        .map(|&v| find_period2_line_of_centers(&table, 0, v).unwrap())
        .collect();
    orbits.push(refine_orbit_newton(&triangle_seed([0.0; 3]), &table).unwrap().0);
    for o in &orbits {
        let r = o.time_reversed(&table).unwrap();
        assert!((o.expansion_numeric - r.expansion_numeric).abs() / o.expansion_numeric < 1e-6);
        assert!((o.expansion_formula - r.expansion_formula).abs() / o.expansion_formula < 1e-12);
        assert!((o.theta - r.theta).abs() < 1e-6);
    }
}

#[test]
fn repeated_orbit_is_not_prime() {
    let table = square(0.3);
    let o = find_period2_line_of_centers(&table, 0, [1, 0]).unwrap();
    let doubled = [o.points.clone(), o.points.clone()].concat();
    assert!(matches!(
        PeriodicOrbit::from_points(doubled, &table),
        Err(OrbitError::NotPrimePeriod(2))
    ));
    let stuck = vec![o.points[0], o.points[0]];
    assert!(matches!(
        PeriodicOrbit::from_points(stuck, &table),
        Err(OrbitError::NotClosed(_))
    ));
    assert!(matches!(
        PeriodicOrbit::from_points(vec![o.points[0]], &table),
        Err(OrbitError::NotClosed(_))
    ));
}

#[test]
fn family_is_monotone_in_the_vector_length() {
    let table = ScattererTable::build(&GeometryConfig {
        lattice: [[1.0, 0.0], [0.0, 1.0]],
        scatterers: vec![ScattererConfig { center: [0.0, 0.0], radius: 0.05 }],
        max_unfold_radius: None,
    })
    .unwrap();
    let vectors: Vec<[i64; 2]> = (0..=12).map(|n| [1, n]).collect();
    let rows = infinite_horizon_family(&table, 0, &vectors);
    assert_eq!(rows.len(), vectors.len());
    for (row, v) in rows.iter().zip(&vectors) {
        assert_eq!(row.vector, *v);
        assert_eq!(row.status, "ok", "{v:?}");
    }
    for w in rows.windows(2) {
        assert!(w[1].tau.unwrap() > w[0].tau.unwrap());
        assert!(w[1].theta_closed_form_asymptotic.unwrap() < w[0].theta_closed_form_asymptotic.unwrap());
        assert!(w[1].theta_numeric.unwrap() > w[0].theta_numeric.unwrap());
        assert!(w[1].expansion_formula.unwrap() > w[0].expansion_formula.unwrap());
    }
    let blocked = infinite_horizon_family(&square(0.3), 0, &[[2, 0], [1, 5]]);
    assert!(blocked.iter().all(|r| r.status == "corridor_blocked" && r.tau.is_none()));
}

#[test]
fn closed_form_chain_runs_opposite_to_the_map_derivative() {
    // along tau = R the closed-form chain tends to 0 while 1 - 1/lambda tends to 1
    let mut last_closed_form = 1.0;
    for tau in [10.0, 1e2, 1e3, 1e4] {
        let chain = expansion_factor_closed_form(tau, tau);
        assert!(chain.theta < last_closed_form);
        assert!((chain.theta - chain.theta_asymptotic).abs() < 0.1 * chain.theta_asymptotic.max(1e-3));
        last_closed_form = chain.theta;
    }
    assert!(last_closed_form < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn newton_recovers_the_triangle(d0 in -0.02f64..0.02, d1 in -0.02f64..0.02, d2 in -0.02f64..0.02) {
        let table = square(0.3);
        let (reference, _) = refine_orbit_newton(&triangle_seed([0.0; 3]), &table).unwrap();
        let (o, report) = refine_orbit_newton(&triangle_seed([d0, d1, d2]), &table).unwrap();
        prop_assert!(report.iterations <= 20);
        prop_assert!(o.closure_residual < 1e-10);
        for (a, b) in o.points.iter().zip(&reference.points) {
            prop_assert!((a.r - b.r).abs() < 1e-10 && (a.theta - b.theta).abs() < 1e-10);
        }
    }
}

#[test]
fn orbit_survives_a_json_roundtrip() {
    let table = square(0.3);
    let o = find_period2_line_of_centers(&table, 0, [2, 1]).unwrap();
    let text = serde_json::to_string(&o).unwrap();
    let back: PeriodicOrbit = serde_json::from_str(&text).unwrap();
    assert_eq!(back, o);
    let rebuilt = PeriodicOrbit::from_points(back.points.clone(), &table).unwrap();
    assert_eq!(rebuilt.expansion_formula, o.expansion_formula);
}
