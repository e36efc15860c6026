use std::f64::consts::PI;

use billiard_evt::billiard::{
    iterate, sample_invariant_point, GeometryConfig, PhasePoint, ScattererConfig, ScattererTable,
};
use billiard_evt::orbits::{find_period2_line_of_centers, refine_orbit_newton, BoundarySeed, OrbitSeed};
use billiard_evt::tangent::{
    curvature_fixed_point_period, curvature_step, determinant, expansion_factor_formula,
    hyperbolic_splitting, jacobian_numeric, jacobian_numeric_with_step, CollisionFactors,
    TangentError, WavefrontState,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn square(radius: f64) -> ScattererTable {
    ScattererTable::build(&GeometryConfig::square_single(radius)).unwrap()
}

fn two_disk_finite() -> ScattererTable {
    ScattererTable::build(&GeometryConfig {
        lattice: [[1.0, 0.0], [0.0, 1.0]],
        scatterers: vec![
            ScattererConfig { center: [0.0, 0.0], radius: 0.45 },
            ScattererConfig { center: [0.5, 0.5], radius: 0.2 },
        ],
        max_unfold_radius: None,
    })
    .unwrap()
}

fn triangle_orbit(table: &ScattererTable) -> billiard_evt::PeriodicOrbit {
    // bounces between the disks at (0,0), (1,0) and (0,1)
    let r = 0.3;
    let toward = |from: [f64; 2]| {
        let a = (1.0 / 3.0 - from[1]).atan2(1.0 / 3.0 - from[0]);
        (a * r).rem_euclid(2.0 * PI * r)
    };
    let seed = OrbitSeed {
        points: vec![
            BoundarySeed { scatterer: 0, image: [0, 0], r: toward([0.0, 0.0]) + 0.01 },
            BoundarySeed { scatterer: 0, image: [1, 0], r: toward([1.0, 0.0]) - 0.02 },
            BoundarySeed { scatterer: 0, image: [0, 1], r: toward([0.0, 1.0]) },
        ],
        closing: [0, 0],
    };
    refine_orbit_newton(&seed, table).unwrap().0
}

#[test]
fn determinant_matches_measure_density() {
    for (table, q) in [(two_disk_finite(), 1), (two_disk_finite(), 2), (two_disk_finite(), 3), (square(0.3), 1)] {
        let mut rng = ChaCha8Rng::seed_from_u64(17 + q as u64);
        let mut checked = 0;
        while checked < 100 {
            let x = sample_invariant_point(&table, &mut rng);
            let jac = match jacobian_numeric(&x, q, &table) {
                Ok(j) => j,
                Err(TangentError::SingularityNearby(_)) => continue,
                Err(e) => panic!("{e}"),
            };
            let y = iterate(&x, q as i64, &table).unwrap();
            let expected = x.theta.cos() / y.theta.cos();
            let det = determinant(&jac.matrix).abs();
            assert!(
                (det - expected).abs() < 1e-6 * expected.max(1.0),
                "q = {q}, {x:?}: {det} vs {expected}, est {} {:?}", jac.error, jac.matrix
            );
            checked += 1;
        }
    }
}

#[test]
fn richardson_estimate_shrinks_fourfold() {
    let table = two_disk_finite();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    while checked < 50 {
        let x = sample_invariant_point(&table, &mut rng);
        if x.theta.abs() > 1.0 {
            continue;
        }
        let (Ok(a), Ok(b)) = (
            jacobian_numeric_with_step(&x, 1, &table, 2e-4),
            jacobian_numeric_with_step(&x, 1, &table, 1e-4),
        ) else {
            continue;
        };
        let ratio = a.error / b.error;
        assert!(ratio > 3.5 && ratio < 4.6, "{x:?}: {ratio}");
        checked += 1;
    }
}

#[test]
fn line_of_centers_orbits_agree_with_jacobian() {
    let table = square(0.3);
    for v in [[1, 0], [0, 1], [1, 1], [2, 1], [1, 2], [3, 1], [1, -1]] {
        let o = find_period2_line_of_centers(&table, 0, v).unwrap();
        let gap = (o.expansion_formula - o.expansion_numeric).abs() / o.expansion_formula;
        assert!(gap < 1e-4, "{v:?}: {gap}");
    }
    let o = triangle_orbit(&table);
    let gap = (o.expansion_formula - o.expansion_numeric).abs() / o.expansion_formula;
    assert!(gap < 1e-4, "triangle: {gap}");
}

#[test]
fn unstable_direction_lies_in_the_dispersing_cone() {
    let table = square(0.3);
    let mut orbits: Vec<_> = [[1, 0], [1, 1], [2, 1]]
        .iter()
        .map(|&v| find_period2_line_of_centers(&table, 0, v).unwrap())
        .collect();
    orbits.push(triangle_orbit(&table));
    for o in &orbits {
        let s = o.splitting;
        assert!(s.unstable[1] / s.unstable[0] > 0.0, "{s:?}");
        assert!(s.stable[1] / s.stable[0] < 0.0, "{s:?}");
        assert!(s.lambda_unstable.abs() > 1.0 && s.lambda_stable.abs() < 1.0);
        assert!((s.lambda_unstable * s.lambda_stable).abs() - 1.0 < 1e-6);
    }
    // at the normal-incidence point the stable direction is the theta-mirror
    let s = orbits[0].splitting;
    assert!((s.stable[0] - s.unstable[0]).abs() < 1e-6);
    assert!((s.stable[1] + s.unstable[1]).abs() < 1e-6);
    // slope of the unstable wavefront in (r, theta): B+ - K at the bounce
    let f = orbits[0].factors[0];
    let slope = orbits[0].curvatures[0].curvature + f.collision_factor - f.curvature;
    assert!((s.unstable[1] / s.unstable[0] - slope).abs() / slope < 1e-5);
}

#[test]
fn near_parabolic_matrices_are_rejected() {
    let rotation = [[0.0, -1.0], [1.0, 0.0]];
    assert!(matches!(hyperbolic_splitting(&rotation), Err(TangentError::NotHyperbolic(_))));
    let shear = [[1.0, 1e-3], [0.0, 1.0]];
    assert!(hyperbolic_splitting(&shear).is_err());
    let barely = [[1.0 + 1e-7, 0.0], [0.0, 1.0 / (1.0 + 1e-7)]];
    assert!(hyperbolic_splitting(&barely).is_err());
}

#[test]
fn stencil_across_a_singularity_is_reported() {
    let table = square(0.3);
    // graze the neighbour at (1,0): start at the top of the disk heading right
    let x = PhasePoint::new(0, 0.3 * PI / 2.0, -PI / 2.0 + 1e-7);
    assert!(jacobian_numeric(&x, 1, &table).is_err());
}

#[test]
fn curvature_step_is_monotone_on_a_grid() {
    let grid = [0.05, 0.2, 0.5, 1.0, 3.0, 10.0];
    for &b in &grid {
        for &tau in &grid {
            for w in grid.windows(2) {
                let lo = curvature_step(WavefrontState::pre(b), &CollisionFactors::from_tau_r(tau, w[0]).unwrap()).unwrap();
                let hi = curvature_step(WavefrontState::pre(b), &CollisionFactors::from_tau_r(tau, w[1]).unwrap()).unwrap();
                assert!(hi.post.curvature > lo.post.curvature);
                assert!(hi.next_pre.curvature > lo.next_pre.curvature);
            }
        }
        for &r in &grid {
            for w in grid.windows(2) {
                let short = curvature_step(WavefrontState::pre(b), &CollisionFactors::from_tau_r(w[0], r).unwrap()).unwrap();
                let long = curvature_step(WavefrontState::pre(b), &CollisionFactors::from_tau_r(w[1], r).unwrap()).unwrap();
                assert!(long.next_pre.curvature < short.next_pre.curvature);
            }
        }
    }
}

fn factor_strategy() -> impl Strategy<Value = CollisionFactors> {
    (0.05f64..5.0, 0.5f64..5.0, 0.05f64..1.0)
        .prop_map(|(tau, k, c)| CollisionFactors::new(tau, k, c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn expansion_is_invariant_under_rotation(
        factors in prop::collection::vec(factor_strategy(), 1..7),
        shift in 0usize..7,
    ) {
        let total = |fs: &[CollisionFactors]| {
            let b = curvature_fixed_point_period(fs).unwrap();
            expansion_factor_formula(fs, &b).unwrap().total
        };
        let mut rotated = factors.clone();
        rotated.rotate_left(shift % factors.len());
        let a = total(&factors);
        let b = total(&rotated);
        prop_assert!((a - b).abs() <= 1e-12 * a, "{} vs {}", a, b);
    }

    #[test]
    fn fixed_point_is_invariant(factors in prop::collection::vec(factor_strategy(), 1..5)) {
        let b = curvature_fixed_point_period(&factors).unwrap();
        let mut state = b[0];
        for f in &factors {
            state = curvature_step(state, f).unwrap().next_pre;
        }
        prop_assert!((state.curvature - b[0].curvature).abs() <= 1e-13 * b[0].curvature);
    }
}
