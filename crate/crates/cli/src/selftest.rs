//! Fast suite of exact and near-exact cases, run by `billiard-evt selftest`.

use std::f64::consts::{FRAC_PI_2, PI};

use billiard_evt::billiard::{
    billiard_map, inverse_map, next_collision, sample_invariant_point, sample_trajectory, time_reverse,
    BilliardError, GeometryConfig, PhasePoint, ScattererConfig, ScattererTable,
};
use billiard_evt::compound_poisson::{
    geometric_multiplicity_pmf, goodness_of_fit, histogram, polya_aeppli_cdf, polya_aeppli_pmf,
    sample_compound_poisson, support_cutoff, total_variation, DistributionError, PolyaAeppliParams,
};
use billiard_evt::evt::{
    adapted_distance, block_maxima_survey, build_chart, conditional_return_estimator, decluster_runs,
    observable_phi, repp_counts, threshold_for, AdaptedChart, ChartDistance, EvtError, ExceedanceSeries,
    ObservedRun, ObservedSegment,
};
use billiard_evt::geometry::Vec2;
use billiard_evt::orbits::{
    find_period2_line_of_centers, refine_orbit_newton, theta_from_expansion, BoundarySeed, OrbitError, OrbitSeed,
};
use billiard_evt::stats::StatsError;
use billiard_evt::tangent::{
    curvature_fixed_point_period, curvature_step, hyperbolic_splitting, jacobian_numeric, single_factor_fixed_point,
    CollisionFactors, TangentError, WavefrontState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checks::Check;
use crate::config::{ExperimentConfig, ReppRequest, ThresholdRequest, PERIOD2_R03};
use crate::pipeline::{self, CSV_OUTPUTS};

type Case = (&'static str, fn() -> Result<(), String>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn square(radius: f64) -> ScattererTable {
    ScattererTable::build(&GeometryConfig::square_single(radius)).expect("valid table")
}

fn finite_table() -> ScattererTable {
    ScattererTable::build(&GeometryConfig {
        lattice: [[1.0, 0.0], [0.0, 1.0]],
        scatterers: vec![
            ScattererConfig { center: [0.0, 0.0], radius: 0.45 },
            ScattererConfig { center: [0.5, 0.5], radius: 0.2 },
        ],
        max_unfold_radius: None,
    })
    .expect("valid table")
}

fn random_points(table: &ScattererTable, n: usize, seed: u64) -> Vec<PhasePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_invariant_point(table, &mut rng)).collect()
}

fn phase_gap(a: &PhasePoint, b: &PhasePoint, table: &ScattererTable) -> f64 {
    if a.scatterer != b.scatterer {
        return f64::INFINITY;
    }
    let per = table.scatterers()[a.scatterer].perimeter();
    let dr = (a.r - b.r).rem_euclid(per);
    dr.min(per - dr).max((a.theta - b.theta).abs())
}

fn err<E: std::fmt::Debug>(e: E) -> String {
    format!("{e:?}")
}

/// One segment with a stored `phi` in `[1, 11)` at every step.
fn ramp_run(len: u64) -> ObservedRun {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let hits = (0..len).map(|i| (i, rng.random::<f64>() * 10.0 + 1.0)).collect();
    ObservedRun { floor: 0.0, segments: vec![ObservedSegment { len, hits }], diagnostics: Default::default() }
}

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::from_json(PERIOD2_R03).expect("bundled config");
    c.thresholds = vec![ThresholdRequest { n: 100, tau: 1.0 }];
    c.trajectory_length = 200_000;
    c.segment_length = 50_000;
    c.burn_in = 100;
    c.repp = ReppRequest { t_window: 1.0, n_windows: 1000 };
    c.seeds = vec![1, 2];
    c
}

const CASES: &[Case] = &[
    ("overlapping disks are rejected", || {
        let r = ScattererTable::build(&GeometryConfig::square_single(0.6));
        ensure(matches!(r, Err(BilliardError::OverlappingScatterers { .. })), || format!("{r:?}"))
    }),
    ("radius 0.45 square is a valid table", || {
        ScattererTable::build(&GeometryConfig::square_single(0.45)).map(|_| ()).map_err(err)
    }),
    ("normal bounce along the line of centers", || {
        let t = square(0.3);
        let c = next_collision(&PhasePoint::new(0, 0.0, 0.0), &t).map_err(err)?;
        let opposite = PhasePoint::new(0, 0.3 * PI, 0.0);
        ensure((c.flight_time - 0.4).abs() < 1e-12 && phase_gap(&c.next, &opposite, &t) < 1e-12, || {
            format!("{c:?}")
        })
    }),
    ("ray down a free corridor exceeds the horizon", || {
        let t = square(0.3).with_max_unfold_radius(50.0);
        let r = t.cast_ray(Vec2::new(0.5, 0.5), Vec2::new(1.0, 0.0), None);
        ensure(matches!(r, Err(BilliardError::HorizonExceeded(_))), || format!("{r:?}"))
    }),
    ("period-2 point returns after two collisions", || {
        let t = square(0.3);
        let z = PhasePoint::new(0, 0.0, 0.0);
        let y = billiard_map(&z, &t).map_err(err)?;
        let back = billiard_map(&y, &t).map_err(err)?;
        ensure(y.theta.abs() < 1e-12 && phase_gap(&back, &z, &t) < 1e-12, || format!("{y:?} {back:?}"))
    }),
    ("time reversal is an involution", || {
        let t = finite_table();
        for x in random_points(&t, 1000, 1) {
            let y = billiard_map(&time_reverse(billiard_map(&time_reverse(x), &t).map_err(err)?), &t).map_err(err)?;
            ensure(phase_gap(&x, &y, &t) < 1e-10, || format!("{x:?} -> {y:?}"))?;
        }
        Ok(())
    }),
    ("reflection angles stay inside (-pi/2, pi/2)", || {
        let t = square(0.3).with_max_unfold_radius(1e5);
        for x in random_points(&t, 1000, 2) {
            let y = billiard_map(&x, &t).map_err(err)?;
            ensure(y.theta.abs() < FRAC_PI_2, || format!("{y:?}"))?;
        }
        Ok(())
    }),
    ("inverse map undoes the map", || {
        let t = finite_table();
        for x in random_points(&t, 1000, 3) {
            let y = inverse_map(&billiard_map(&x, &t).map_err(err)?, &t).map_err(err)?;
            ensure(phase_gap(&x, &y, &t) < 1e-10, || format!("{x:?} -> {y:?}"))?;
        }
        Ok(())
    }),
    ("inverse equals forward on a period-2 point", || {
        let t = square(0.3);
        let z = PhasePoint::new(0, 0.0, 0.0);
        let (a, b) = (inverse_map(&z, &t).map_err(err)?, billiard_map(&z, &t).map_err(err)?);
        ensure(phase_gap(&a, &b, &t) < 1e-12, || format!("{a:?} {b:?}"))
    }),
    ("grazing input is reported", || {
        let r = billiard_map(&PhasePoint::new(0, 0.0, FRAC_PI_2), &square(0.3));
        ensure(matches!(r, Err(BilliardError::GrazingCollision(_))), || format!("{r:?}"))
    }),
    ("trajectory lengths", || {
        let t = square(0.3);
        let z = PhasePoint::new(0, 0.0, 0.0);
        ensure(sample_trajectory(z, 0, &t).next().is_none(), || "nonempty".into())?;
        let pts: Vec<PhasePoint> = sample_trajectory(z, 4, &t).map(|s| s.map(|s| s.point)).collect::<Result<_, _>>().map_err(err)?;
        let tz = billiard_map(&z, &t).map_err(err)?;
        ensure(
            pts.len() == 4 && [z, tz, z, tz].iter().zip(&pts).all(|(a, b)| phase_gap(a, b, &t) < 1e-12),
            || format!("{pts:?}"),
        )
    }),
    ("curvature step edge cases", || {
        let s = curvature_step(WavefrontState::pre(1.5), &CollisionFactors::from_tau_r(0.0, 2.0).map_err(err)?).map_err(err)?;
        ensure(s.next_pre.curvature == 3.5, || format!("{s:?}"))?;
        let s = curvature_step(WavefrontState::pre(1.0), &CollisionFactors::from_tau_r(1.0, 0.0).map_err(err)?).map_err(err)?;
        ensure(s.next_pre.curvature == 0.5, || format!("{s:?}"))
    }),
    ("two identical factors share the single-factor fixed point", || {
        let f = CollisionFactors::from_tau_r(0.4, 20.0 / 3.0).map_err(err)?;
        let b = curvature_fixed_point_period(&[f, f]).map_err(err)?;
        let single = single_factor_fixed_point(0.4, 20.0 / 3.0);
        ensure(b.iter().all(|s| (s.curvature - single).abs() < 1e-12 * single), || format!("{b:?} vs {single}"))
    }),
    ("zero iterates have the identity Jacobian", || {
        let j = jacobian_numeric(&PhasePoint::new(0, 0.3, 0.2), 0, &square(0.3)).map_err(err)?;
        ensure(j.matrix == [[1.0, 0.0], [0.0, 1.0]], || format!("{j:?}"))
    }),
    ("stable direction mirrors the unstable one", || {
        let o = find_period2_line_of_centers(&square(0.3), 0, [1, 0]).map_err(err)?;
        let (u, s) = (o.splitting.unstable, o.splitting.stable);
        let same = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6;
        ensure(same(s, [u[0], -u[1]]) || same(s, [-u[0], u[1]]), || format!("{u:?} {s:?}"))
    }),
    ("collinear centers block the (2,0) orbit", || {
        let r = find_period2_line_of_centers(&square(0.3), 0, [2, 0]);
        ensure(matches!(r, Err(OrbitError::CorridorBlocked { .. })), || format!("{r:?}"))
    }),
    ("exact seed converges at once", || {
        let seed = OrbitSeed {
            points: vec![
                BoundarySeed { scatterer: 0, image: [0, 0], r: 0.0 },
                BoundarySeed { scatterer: 0, image: [1, 0], r: 0.3 * PI },
            ],
            closing: [0, 0],
        };
        let (_, report) = refine_orbit_newton(&seed, &square(0.3)).map_err(err)?;
        ensure(report.iterations <= 2, || format!("{report:?}"))
    }),
    ("seed on a blocked chord is rejected", || {
        let seed = OrbitSeed {
            points: vec![
                BoundarySeed { scatterer: 0, image: [0, 0], r: 0.0 },
                BoundarySeed { scatterer: 0, image: [2, 0], r: 0.3 * PI },
            ],
            closing: [0, 0],
        };
        let r = refine_orbit_newton(&seed, &square(0.3));
        ensure(matches!(r, Err(OrbitError::ChordBlocked { .. })), || format!("{r:?}"))
    }),
    ("theta limits of the expansion", || {
        let (t, weak) = theta_from_expansion(1e12).map_err(err)?;
        ensure(1.0 - t < 1e-11 && !weak, || format!("{t}"))?;
        let (t, weak) = theta_from_expansion(1.0 + 1e-6).map_err(err)?;
        ensure((t - 1e-6).abs() < 1e-11 && weak, || format!("{t} {weak}"))
    }),
    ("reversed orbit swaps the chart directions", || {
        let t = square(0.3);
        let o = find_period2_line_of_centers(&t, 0, [1, 0]).map_err(err)?;
        let a = build_chart(&o, &t).map_err(err)?;
        let b = build_chart(&o.time_reversed(&t).map_err(err)?, &t).map_err(err)?;
        let flip = |v: [f64; 2]| [v[0], -v[1]];
        let close = |x: [f64; 2], y: [f64; 2]| {
            ((x[0] - y[0]).abs() < 1e-6 && (x[1] - y[1]).abs() < 1e-6)
                || ((x[0] + y[0]).abs() < 1e-6 && (x[1] + y[1]).abs() < 1e-6)
        };
        ensure(close(b.e_u, flip(a.e_s)) && close(b.e_s, flip(a.e_u)), || format!("{a:?} {b:?}"))
    }),
    ("near-parabolic matrix is not hyperbolic", || {
        let r = hyperbolic_splitting(&[[1.0, 1e-9], [0.0, 1.0]]);
        ensure(matches!(r, Err(TangentError::NotHyperbolic(_))), || format!("{r:?}"))
    }),
    ("adapted distance is the max of the chart coordinates", || {
        let c = AdaptedChart::new(PhasePoint::new(0, 0.4, 0.1), 1.9, [0.3, 0.9], [0.8, -0.2], 0.05).map_err(err)?;
        let d = |a: f64, b: f64| match adapted_distance(&c.point_at(a, b), &c) {
            ChartDistance::Near(d) => d,
            ChartDistance::Far => f64::NAN,
        };
        ensure(d(0.0, 0.0) == 0.0, || "origin".into())?;
        ensure((d(1e-4, 0.0) - 1e-4).abs() < 1e-15, || format!("{}", d(1e-4, 0.0)))?;
        ensure((d(3e-5, -7e-5) - 7e-5).abs() < 1e-15, || format!("{}", d(3e-5, -7e-5)))
    }),
    ("observable is minus log distance", || {
        let c = AdaptedChart::new(PhasePoint::new(0, 0.4, 0.1), 10.0, [1.0, 0.0], [0.0, 1.0], 3.0).map_err(err)?;
        ensure((observable_phi(&c.point_at((-5f64).exp(), 0.0), &c) - 5.0).abs() < 1e-12, || "e^-5".into())?;
        ensure(observable_phi(&c.point_at(1.0, 0.0), &c).abs() < 1e-12, || "d = 1".into())?;
        ensure(observable_phi(&c.origin, &c) == f64::INFINITY, || "origin".into())
    }),
    ("threshold falls as tau doubles and needs enough data", || {
        let run = ramp_run(100_000);
        let a = threshold_for(100, 1.0, &run).map_err(err)?;
        let b = threshold_for(100, 2.0, &run).map_err(err)?;
        ensure(b.u_n < a.u_n, || format!("{a:?} {b:?}"))?;
        // 1e3 exceedances at tau/n = 1e-2 need 1e5 steps
        let r = threshold_for(100, 1.0, &ramp_run(99_999));
        ensure(matches!(r, Err(EvtError::InsufficientCalibration(_))), || format!("{r:?}"))
    }),
    ("tau = 0 leaves every block clean", || {
        let rows = block_maxima_survey(&ramp_run(100_000), 100, &[0.0], None).map_err(err)?;
        ensure(rows[0].empirical == 1.0, || format!("{rows:?}"))
    }),
    ("point process windows partition the record", || {
        let run = ramp_run(100_000);
        let spec = threshold_for(100, 1.0, &run).map_err(err)?;
        let empty = repp_counts(&run, &spec, 0.0, 50).map_err(err)?;
        ensure(empty.counts == vec![50], || format!("{empty:?}"))?;
        let h = repp_counts(&run, &spec, 1.0, 500).map_err(err)?;
        ensure(h.counts.iter().sum::<u64>() == 500, || format!("{h:?}"))
    }),
    ("runs declustering by definition", || {
        let s = ExceedanceSeries::new(0.0, vec![5, 7, 9, 40], 100).map_err(err)?;
        let d = decluster_runs(&s, 2);
        let sizes: Vec<u64> = d.clusters.iter().map(|c| c.size).collect();
        ensure(sizes == vec![3, 1] && d.mean_size == 2.0, || format!("{d:?}"))?;
        let none = decluster_runs(&ExceedanceSeries::new(0.0, vec![], 100).map_err(err)?, 2);
        ensure(none.cluster_count() == 0 && none.histogram.iter().all(|&c| c == 0), || format!("{none:?}"))
    }),
    ("conditional estimator extremes", || {
        let all: Vec<(u64, f64)> = (0..5000).map(|i| (i, 5.0)).collect();
        let run = ObservedRun { floor: 0.0, segments: vec![ObservedSegment { len: 5000, hits: all }], ..Default::default() };
        ensure(conditional_return_estimator(&run, 1.0, 2).map_err(err)?.theta_hat == 0.0, || "all return".into())?;
        let sparse: Vec<(u64, f64)> = (0..2000).map(|i| (5 * i, 5.0)).collect();
        let run = ObservedRun { floor: 0.0, segments: vec![ObservedSegment { len: 10_000, hits: sparse }], ..Default::default() };
        ensure(conditional_return_estimator(&run, 1.0, 2).map_err(err)?.theta_hat == 1.0, || "none return".into())
    }),
    ("geometric multiplicity degenerates at theta = 1", || {
        for k in 2..10 {
            ensure(geometric_multiplicity_pmf(1.0, k).map_err(err)? == 0.0, || format!("k {k}"))?;
        }
        Ok(())
    }),
    ("Poisson reduction, normalization, telescoping", || {
        for t in [0.5, 3.0] {
            let p = PolyaAeppliParams::new(1.0, t).map_err(err)?;
            let mut poisson = (-t).exp();
            for k in 0..60u64 {
                if k > 0 {
                    poisson *= t / k as f64;
                }
                ensure((polya_aeppli_pmf(&p, k) - poisson).abs() < 1e-12, || format!("t {t} k {k}"))?;
            }
        }
        let p = PolyaAeppliParams::new(0.3, 4.0).map_err(err)?;
        ensure((polya_aeppli_cdf(&p, support_cutoff(&p) + 20) - 1.0).abs() < 1e-12, || "mass".into())?;
        for k in 1..80 {
            let d = polya_aeppli_cdf(&p, k) - polya_aeppli_cdf(&p, k - 1) - polya_aeppli_pmf(&p, k);
            ensure(d.abs() < 1e-14, || format!("k {k}: {d:e}"))?;
        }
        Ok(())
    }),
    ("sampler at theta = 1 is Poisson and seeded", || {
        let p = PolyaAeppliParams::new(1.0, 2.0).map_err(err)?;
        let a = sample_compound_poisson(&p, 11, 100_000);
        ensure(a == sample_compound_poisson(&p, 11, 100_000), || "not reproducible".into())?;
        let tv = total_variation(&histogram(&a), &p);
        ensure(tv < 0.01, || format!("tv {tv}"))
    }),
    ("single-bin histogram is insufficient", || {
        let r = goodness_of_fit(&[10], &PolyaAeppliParams::new(0.5, 1.0).map_err(err)?);
        ensure(matches!(r, Err(DistributionError::Stats(StatsError::InsufficientData(_)))), || format!("{r:?}"))
    }),
    ("short trajectory config is invalid", || {
        let mut c = tiny_config();
        c.trajectory_length = 199 * 100;
        ensure(c.validate().is_err(), || "accepted".into())
    }),
    ("identical seeds give byte-identical outputs", || {
        let base = std::env::temp_dir().join(format!("billiard-evt-selftest-{}", std::process::id()));
        let c = tiny_config();
        let outcome = (|| {
            let mut quiet = |_: &str| {};
            let a = base.join("a");
            let b = base.join("b");
            pipeline::run(&c, &a, &mut quiet).map_err(err)?;
            pipeline::run(&c, &b, &mut quiet).map_err(err)?;
            for f in CSV_OUTPUTS {
                let (x, y) = (std::fs::read(a.join(f)).map_err(err)?, std::fs::read(b.join(f)).map_err(err)?);
                ensure(x == y, || format!("{f} differs"))?;
            }
            Ok(())
        })();
        let _ = std::fs::remove_dir_all(&base);
        outcome
    }),
];

/// Run every case and return one check per case.
pub fn run() -> Vec<Check> {
    CASES
        .iter()
        .map(|(name, case)| match case() {
            Ok(()) => Check::new(*name, true, "ok"),
            Err(e) => Check::new(*name, false, e),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn selftest_passes() {
        let started = std::time::Instant::now();
        let failed: Vec<_> = super::run().into_iter().filter(|c| !c.passed).collect();
        assert!(failed.is_empty(), "{failed:?}");
        assert!(started.elapsed().as_secs_f64() < 10.0);
    }
}
