//! Acceptance suite. Every test prints one `criterion N PASS|FAIL` line to the
//! real stdout (not the captured one) and then asserts.

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use billiard_evt::billiard::{GeometryConfig, ScattererTable};
use billiard_evt_cli::checks::{distribution_library, jacobian_arbitration, measure_preservation, closed_form_grid};
use billiard_evt_cli::config::PERIOD2_R03;
use billiard_evt_cli::pipeline::{self, Report, CSV_OUTPUTS};
use billiard_evt_cli::ExperimentConfig;

const LAMBDA_REFERENCE: f64 = 19.727083;
const THETA_REFERENCE: f64 = 0.949308;

fn report(criterion: u32, passed: bool, detail: &str) {
    let line = format!("criterion {criterion} {}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(passed, "criterion {criterion}: {detail}");
}

fn table() -> ScattererTable {
    ScattererTable::build(&GeometryConfig::square_single(0.3))
        .unwrap()
        .with_max_unfold_radius(1e5)
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run_headline(threads: usize, name: &str) -> (Report, Duration) {
    let config = ExperimentConfig::from_json(PERIOD2_R03).unwrap();
    let dir = fresh_dir(name);
    let started = Instant::now();
    let report = pool(threads).install(|| pipeline::run(&config, &dir, &mut |_| {})).unwrap();
    assert_eq!(report.computed.len(), pipeline::STAGES.len());
    (report, started.elapsed())
}

/// The 1e8-collision bundled experiment on one worker, shared by criteria 3-6
/// and 9.
fn headline() -> &'static (Report, Duration) {
    static RUN: OnceLock<(Report, Duration)> = OnceLock::new();
    RUN.get_or_init(|| run_headline(1, "headline_1"))
}

#[test]
fn criterion_1_measure_preservation() {
    let started = Instant::now();
    let m = measure_preservation(&table(), 7, 10, 1_000_000, 1000).unwrap();
    let secs = started.elapsed().as_secs_f64();
    report(
        1,
        m.steps == 10_000_000 && m.l1_error < 0.01 && (m.central_mass - 0.5).abs() <= 0.01 && secs < 60.0,
        &format!(
            "{} collisions, L1 {:.5} (< 0.01), mass on |theta| <= pi/6 {:.5} (0.5 +- 0.01), {secs:.1} s",
            m.steps, m.l1_error, m.central_mass
        ),
    );
}

#[test]
fn criterion_2_jacobian_arbitration() {
    let rows = jacobian_arbitration(&table(), &[[1, 0], [1, 1], [2, 1], [1, 2], [3, 1], [1, 3]]).unwrap();
    let head = &rows[0];
    let reference_gap = (head.expansion_numeric - LAMBDA_REFERENCE).abs() / LAMBDA_REFERENCE;
    let worst = rows.iter().map(|r| r.relative_gap).fold(0.0, f64::max);
    let detail = format!(
        "(1,0): numeric {:.7}, product {:.7}, reference {LAMBDA_REFERENCE} (gap {reference_gap:.1e}); worst numeric/product gap over {} orbits {worst:.1e} (tol 1e-4)",
        head.expansion_numeric,
        head.expansion_formula,
        rows.len()
    );
    report(2, reference_gap < 1e-4 && worst < 1e-4, &detail);
}

#[test]
fn criterion_3_extremal_index_three_ways() {
    let (r, elapsed) = headline();
    let s = &r.summary;
    let h = &s.theta_hat_runs;
    let formula_ok = (s.theta.theta_formula - THETA_REFERENCE).abs() <= 1e-4;
    let numeric_ok = (s.theta.theta_numeric - THETA_REFERENCE).abs() <= 1e-4;
    let level_ok = h.tau / h.n as f64 == 1e-4 && s.total_steps == 100_000_000;
    let gap = (h.theta_hat - s.theta.theta_numeric).abs();
    report(
        3,
        formula_ok && numeric_ok && level_ok && gap <= 0.01 && elapsed.as_secs() < 600,
        &format!(
            "formula {:.7}, numeric {:.7} (0.949308 +- 1e-4); theta_hat {:.5} +- {:.5} from {} collisions at tau/n = {:.0e}, gap {gap:.5} (tol 0.01); {:.1} s",
            s.theta.theta_formula,
            s.theta.theta_numeric,
            h.theta_hat,
            h.stderr,
            s.total_steps,
            h.tau / h.n as f64,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_4_gumbel_law() {
    let s = &headline().0.summary;
    let mut taus: Vec<f64> = s.block_maxima.iter().map(|b| b.tau).collect();
    taus.sort_by(f64::total_cmp);
    let mut ok = taus == [0.5, 1.0, 2.0];
    let mut parts = Vec::new();
    for b in &s.block_maxima {
        let gap = (b.empirical - b.predicted).abs();
        ok &= b.blocks >= 1000 && gap <= 2.0 * b.stderr && gap <= 0.02;
        parts.push(format!(
            "tau {}: {:.4} vs {:.4} (gap {gap:.4}, 2se {:.4}, {} blocks)",
            b.tau,
            b.empirical,
            b.predicted,
            2.0 * b.stderr,
            b.blocks
        ));
    }
    report(4, ok, &parts.join("; "));
}

#[test]
fn criterion_5_polya_aeppli_repp() {
    let s = &headline().0.summary;
    let r = &s.repp;
    let p = r.fit.as_ref().map_or(0.0, |f| f.p_value);
    let k0_gap = (r.k0_frequency - (-s.theta.theta_numeric).exp()).abs();
    report(
        5,
        r.t_window == 1.0 && r.windows >= 10_000 && p > 0.01 && k0_gap <= 0.01,
        &format!(
            "{} windows of {} collisions, chi-square p {p:.4} (> 0.01), k=0 frequency {:.5} vs exp(-theta) {:.5} (+- 0.01)",
            r.windows, r.window_len, r.k0_frequency, r.k0_expected
        ),
    );
}

#[test]
fn criterion_6_geometric_clusters() {
    let s = &headline().0.summary;
    let c = &s.clusters;
    let p = c.fit.as_ref().map_or(0.0, |f| f.p_value);
    let rel = (c.mean_size - 1.0 / s.theta.theta_numeric).abs() * s.theta.theta_numeric;
    report(
        6,
        rel <= 0.05 && p > 0.01,
        &format!(
            "{} clusters, mean size {:.5} vs 1/theta {:.5} ({:.2}%, tol 5%), chi-square p {p:.4} (> 0.01)",
            c.clusters,
            c.mean_size,
            c.expected_mean,
            100.0 * rel
        ),
    );
}

#[test]
fn criterion_7_distribution_library() {
    let started = Instant::now();
    let checks = distribution_library(1_000_000).unwrap();
    let detail: Vec<String> = checks.iter().map(|c| format!("{} ({})", c.name, c.detail)).collect();
    report(
        7,
        checks.len() == 4 && checks.iter().all(|c| c.passed),
        &format!("{}; {:.1} s", detail.join("; "), started.elapsed().as_secs_f64()),
    );
}

#[test]
fn criterion_8_closed_form_chain() {
    let grid = [10.0, 1e2, 1e3, 1e4];
    let rows = closed_form_grid(&grid);
    let mut ok = true;
    let mut last_theta = f64::INFINITY;
    let mut last_gap = f64::INFINITY;
    let mut parts = Vec::new();
    for row in &rows {
        // independent evaluation of the closed forms
        let b = row.r * ((1.0 + 4.0 / (row.r * row.tau)).sqrt() - 1.0);
        let one_minus = (1.0 + row.tau * b).powf(-2.0 / row.tau);
        let asym = 1.0 - 3f64.powf(-2.0 / row.tau);
        ok &= (row.curvature - b).abs() <= 1e-15 * b.abs().max(1.0);
        ok &= ((1.0 - row.theta_closed_form) - one_minus).abs() <= 1e-15;
        ok &= (row.theta_closed_form_asymptotic - asym).abs() <= 1e-15;
        let gap = (row.theta_closed_form - row.theta_closed_form_asymptotic).abs();
        ok &= row.theta_closed_form < last_theta && gap < last_gap;
        last_theta = row.theta_closed_form;
        last_gap = gap;
        parts.push(format!(
            "tau=R={}: theta_closed_form {:.6e}, asymptotic gap {gap:.2e}, 1-1/lambda {:.6}",
            row.tau, row.theta_closed_form, row.theta_map
        ));
    }
    ok &= last_theta < 1e-3;
    report(8, ok, &parts.join("; "));
}

#[test]
fn criterion_9_determinism() {
    let (one, _) = headline();
    let (four, _) = run_headline(4, "headline_4");
    let mut ok = true;
    let mut differing = Vec::new();
    for f in CSV_OUTPUTS {
        let a = std::fs::read(one.out_dir.join(f)).unwrap();
        let b = std::fs::read(four.out_dir.join(f)).unwrap();
        if a != b || a.is_empty() {
            ok = false;
            differing.push(f);
        }
    }
    report(
        9,
        ok,
        &format!(
            "{} CSVs of the full 1e8 pipeline compared at 1 and 4 workers: {}",
            CSV_OUTPUTS.len(),
            if differing.is_empty() { "byte-identical".to_string() } else { format!("differ: {differing:?}") }
        ),
    );
}
