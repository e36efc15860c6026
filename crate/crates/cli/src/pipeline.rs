//! End-to-end experiment: orbit, trajectory observation, statistics, summary.
//!
//! Each stage writes its outputs and then records itself in `manifest.json`.
//! A rerun with the same config digest loads completed stages from disk.

use std::path::{Path, PathBuf};

use anyhow::Context;
use billiard_evt::billiard::GeometryConfig;
use billiard_evt::compound_poisson::{
    geometric_multiplicity_pmf, goodness_of_fit, polya_aeppli_pmf, support_cutoff, FitReport, PolyaAeppliParams,
};
use billiard_evt::evt::{
    block_maxima_survey, build_chart_for_level, cluster_statistics, conditional_return_estimator, observe_run,
    repp_counts, threshold_for, AdaptedChart, ObservedRun, RunDiagnostics, ThresholdSpec,
};
use billiard_evt::orbits::{extremal_index, PeriodicOrbit};
use billiard_evt::stats::{chi_square_fit, ChiSquareFit};
use billiard_evt::tangent::{curvature_audit, expansion_factor_closed_form};
use serde::{Deserialize, Serialize};

use crate::checks::{theta_of, Check};
use crate::config::ExperimentConfig;
use crate::output::{fmt_f64, fmt_opt, read_json, write_atomic, write_json, Table, SCHEMA_VERSION};

pub const STAGES: [&str; 4] = ["orbit", "trajectory", "statistics", "summary"];

pub const MANIFEST: &str = "manifest.json";

/// CSV outputs of a full run, in the order they are written.
pub const CSV_OUTPUTS: [&str; 7] = [
    "orbit.csv",
    "theta.csv",
    "thresholds.csv",
    "theta_hat.csv",
    "block_maxima.csv",
    "repp.csv",
    "clusters.csv",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_sha256: String,
    pub completed: Vec<String>,
}

impl Manifest {
    fn done(&self, stage: &str) -> bool {
        self.completed.iter().any(|s| s == stage)
    }
}

/// Orbit together with the table it lives on, so it can be reloaded alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitDescriptor {
    pub schema_version: u32,
    pub geometry: GeometryConfig,
    pub orbit: PeriodicOrbit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub schema_version: u32,
    pub chart: AdaptedChart,
    pub run: ObservedRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaSummary {
    /// `1 - 1/Lambda` from the curvature product.
    pub theta_formula: f64,
    /// `1 - 1/|lambda_max|` of the finite-difference `DT^q`; used downstream.
    pub theta_numeric: f64,
    /// Closed-form chain at the orbit's `(tau, R)`, period 2 only.
    pub theta_closed_form: Option<f64>,
    pub theta_closed_form_asymptotic: Option<f64>,
    pub expansion_formula: f64,
    pub expansion_numeric: f64,
    pub relative_gap: f64,
    pub weakly_hyperbolic: bool,
}

impl ThetaSummary {
    pub fn of(orbit: &PeriodicOrbit) -> anyhow::Result<Self> {
        let rec = extremal_index(orbit)?;
        let symmetric_pair = orbit.period == 2
            && (orbit.flight_times[0] - orbit.flight_times[1]).abs() < 1e-12
            && (orbit.factors[0].collision_factor - orbit.factors[1].collision_factor).abs() < 1e-12;
        let chain = symmetric_pair
            .then(|| expansion_factor_closed_form(orbit.flight_times[0], orbit.factors[0].collision_factor));
        Ok(Self {
            theta_formula: theta_of(orbit.expansion_formula),
            theta_numeric: rec.theta,
            theta_closed_form: chain.map(|c| c.theta),
            theta_closed_form_asymptotic: chain.map(|c| c.theta_asymptotic),
            expansion_formula: rec.expansion_formula,
            expansion_numeric: rec.expansion_numeric,
            relative_gap: rec.relative_gap,
            weakly_hyperbolic: rec.weakly_hyperbolic,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaHatRow {
    pub n: u64,
    pub tau: f64,
    pub u_n: f64,
    pub exceedances: u64,
    pub returns: u64,
    pub theta_hat: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRow {
    pub n: u64,
    pub tau: f64,
    pub u_n: f64,
    pub blocks: u64,
    pub empirical: f64,
    pub predicted: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReppSummary {
    pub n: u64,
    pub tau: f64,
    pub t_window: f64,
    pub window_len: u64,
    pub windows: u64,
    pub counts: Vec<u64>,
    pub k0_frequency: f64,
    pub k0_expected: f64,
    pub fit: Option<FitReport>,
    pub fit_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub n: u64,
    pub tau: f64,
    pub u_n: f64,
    pub clusters: u64,
    pub histogram: Vec<u64>,
    pub mean_size: f64,
    pub expected_mean: f64,
    pub fit: Option<ChiSquareFit>,
    pub fit_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub schema_version: u32,
    pub thresholds: Vec<ThresholdSpec>,
    pub theta_hat: Vec<ThetaHatRow>,
    pub block_maxima: Vec<BlockRow>,
    pub repp: ReppSummary,
    pub clusters: ClusterSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSummary {
    pub validity_radius: f64,
    pub singularity_distance: f64,
    pub floor: f64,
    pub e_u: [f64; 2],
    pub e_s: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub config_sha256: String,
    pub period: usize,
    pub orbit_points: Vec<[f64; 3]>,
    #[serde(flatten)]
    pub theta: ThetaSummary,
    pub theta_hat_runs: ThetaHatRow,
    pub block_maxima: Vec<BlockRow>,
    pub repp: ReppSummary,
    pub clusters: ClusterSummary,
    pub chart: ChartSummary,
    pub total_steps: u64,
    pub diagnostics: RunDiagnostics,
    pub checks: Vec<Check>,
    pub all_passed: bool,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub summary: Summary,
    pub out_dir: PathBuf,
    /// Stages computed in this invocation, as opposed to loaded.
    pub computed: Vec<&'static str>,
}

struct Stage<'a> {
    dir: &'a Path,
    manifest: Manifest,
}

impl Stage<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn complete(&mut self, stage: &str) -> anyhow::Result<()> {
        self.manifest.completed.push(stage.to_string());
        write_json(&self.path(MANIFEST), &self.manifest)
    }
}

fn open_manifest(dir: &Path, digest: &str) -> anyhow::Result<Manifest> {
    let path = dir.join(MANIFEST);
    if path.exists() {
        if let Ok(m) = read_json::<Manifest>(&path) {
            if m.schema_version == SCHEMA_VERSION && m.config_sha256 == digest {
                return Ok(m);
            }
        }
    }
    let m = Manifest { schema_version: SCHEMA_VERSION, config_sha256: digest.to_string(), completed: vec![] };
    write_json(&path, &m)?;
    Ok(m)
}

struct Prepared<'a> {
    st: Stage<'a>,
    digest: String,
    orbit: PeriodicOrbit,
    theta: ThetaSummary,
    obs: Observations,
    computed: Vec<&'static str>,
}

/// Orbit and trajectory stages.
fn prepare<'a>(config: &ExperimentConfig, out_dir: &'a Path, log: &mut dyn FnMut(&str)) -> anyhow::Result<Prepared<'a>> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let digest = config.digest();
    let mut st = Stage { dir: out_dir, manifest: open_manifest(out_dir, &digest)? };
    let mut computed = Vec::new();
    let table = config.table()?;

    let orbit: PeriodicOrbit = if st.manifest.done("orbit") {
        read_json::<OrbitDescriptor>(&st.path("orbit.json"))?.orbit
    } else {
        log("orbit: locating and refining");
        let orbit = config.orbit(&table).context("orbit stage")?;
        let theta = ThetaSummary::of(&orbit).context("orbit stage")?;
        write_json(
            &st.path("orbit.json"),
            &OrbitDescriptor { schema_version: SCHEMA_VERSION, geometry: config.geometry.clone(), orbit: orbit.clone() },
        )?;
        write_atomic(&st.path("orbit.csv"), &orbit_csv(&orbit))?;
        write_atomic(&st.path("theta.csv"), &theta_csv(&theta))?;
        st.complete("orbit")?;
        computed.push("orbit");
        orbit
    };
    let theta = ThetaSummary::of(&orbit)?;

    let obs: Observations = if st.manifest.done("trajectory") {
        read_json(&st.path("observations.json"))?
    } else {
        let chart =
            build_chart_for_level(&orbit, &table, config.max_exceedance_prob()).context("trajectory stage")?;
        log(&format!(
            "trajectory: {} collisions in {} segments",
            config.trajectory_length,
            config.segment_seeds().len()
        ));
        let run = observe_run(&table, &chart, &config.segment_seeds(), config.burn_in, config.segment_length)
            .context("trajectory stage")?;
        let obs = Observations { schema_version: SCHEMA_VERSION, chart, run };
        write_json(&st.path("observations.json"), &obs)?;
        st.complete("trajectory")?;
        computed.push("trajectory");
        obs
    };
    Ok(Prepared { st, digest, orbit, theta, obs, computed })
}

/// Run (or resume) the experiment in `out_dir`. `log` receives one line per
/// stage.
pub fn run(config: &ExperimentConfig, out_dir: &Path, log: &mut dyn FnMut(&str)) -> anyhow::Result<Report> {
    let Prepared { mut st, digest, orbit, theta, obs, mut computed } = prepare(config, out_dir, log)?;
    let stats: Statistics = if st.manifest.done("statistics") {
        read_json(&st.path("statistics.json"))?
    } else {
        log("statistics: thresholds, block maxima, point process, clusters");
        let stats = statistics(config, &obs.run, orbit.period as u64, theta.theta_numeric)
            .context("statistics stage")?;
        write_statistics_csv(&st, &stats, &theta)?;
        write_json(&st.path("statistics.json"), &stats)?;
        st.complete("statistics")?;
        computed.push("statistics");
        stats
    };

    let summary: Summary = if st.manifest.done("summary") {
        read_json(&st.path("summary.json"))?
    } else {
        let checks = evaluate_checks(config, &theta, &stats);
        let all_passed = checks.iter().all(|c| c.passed);
        let summary = Summary {
            schema_version: SCHEMA_VERSION,
            config_sha256: digest,
            period: orbit.period,
            orbit_points: orbit.points.iter().map(|p| [p.scatterer as f64, p.r, p.theta]).collect(),
            theta,
            theta_hat_runs: stats.theta_hat[0].clone(),
            block_maxima: stats.block_maxima.clone(),
            repp: stats.repp.clone(),
            clusters: stats.clusters.clone(),
            chart: ChartSummary {
                validity_radius: obs.chart.validity_radius,
                singularity_distance: obs.chart.singularity_distance,
                floor: obs.chart.floor_value(),
                e_u: obs.chart.e_u,
                e_s: obs.chart.e_s,
            },
            total_steps: obs.run.total_steps(),
            diagnostics: obs.run.diagnostics.clone(),
            checks,
            all_passed,
        };
        write_json(&st.path("summary.json"), &summary)?;
        st.complete("summary")?;
        computed.push("summary");
        summary
    };
    Ok(Report { summary, out_dir: out_dir.to_path_buf(), computed })
}

/// Point-process histogram at the headline threshold for another window
/// length, reusing (or producing) the trajectory stage. Writes
/// `repp_t<t_window>.csv`.
pub fn repp_window(
    config: &ExperimentConfig,
    out_dir: &Path,
    t_window: f64,
    log: &mut dyn FnMut(&str),
) -> anyhow::Result<ReppSummary> {
    let p = prepare(config, out_dir, log)?;
    let mut c = config.clone();
    c.repp.t_window = t_window;
    c.thresholds.truncate(1);
    let repp = repp_summary(&c, &p.obs.run, p.theta.theta_numeric)?;
    let params = PolyaAeppliParams::new(p.theta.theta_numeric, t_window)?;
    write_atomic(
        &p.st.path(&format!("repp_t{t_window}.csv")),
        &repp_csv(&repp.counts, repp.windows, &params),
    )?;
    Ok(repp)
}

fn repp_summary(config: &ExperimentConfig, run: &ObservedRun, theta: f64) -> anyhow::Result<ReppSummary> {
    let head = config.thresholds[0];
    let spec = threshold_for(head.n, head.tau, run)?;
    let hist = repp_counts(run, &spec, config.repp.t_window, config.repp.n_windows)?;
    let params = PolyaAeppliParams::new(theta, config.repp.t_window)?;
    let (fit, fit_error) = match goodness_of_fit(&hist.counts, &params) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(ReppSummary {
        n: head.n,
        tau: head.tau,
        t_window: config.repp.t_window,
        window_len: hist.window_len,
        windows: hist.windows,
        k0_frequency: hist.counts.first().copied().unwrap_or(0) as f64 / hist.windows as f64,
        k0_expected: (-theta * config.repp.t_window).exp(),
        counts: hist.counts,
        fit,
        fit_error,
    })
}

pub fn statistics(config: &ExperimentConfig, run: &ObservedRun, q: u64, theta: f64) -> anyhow::Result<Statistics> {
    let thresholds: Vec<ThresholdSpec> = config
        .thresholds
        .iter()
        .map(|t| threshold_for(t.n, t.tau, run).with_context(|| format!("threshold n = {}, tau = {}", t.n, t.tau)))
        .collect::<anyhow::Result<_>>()?;
    let mut theta_hat = Vec::new();
    let mut block_maxima = Vec::new();
    for (req, spec) in config.thresholds.iter().zip(&thresholds) {
        let est = conditional_return_estimator(run, spec.u_n, q)?;
        theta_hat.push(ThetaHatRow {
            n: req.n,
            tau: req.tau,
            u_n: spec.u_n,
            exceedances: est.exceedances,
            returns: est.returns,
            theta_hat: est.theta_hat,
            stderr: est.stderr,
        });
        let row = block_maxima_survey(run, req.n, &[req.tau], Some(theta))?.remove(0);
        block_maxima.push(BlockRow {
            n: req.n,
            tau: req.tau,
            u_n: row.u_n,
            blocks: row.blocks,
            empirical: row.empirical,
            predicted: row.predicted.unwrap_or(f64::NAN),
            stderr: row.stderr,
        });
    }
    let (head, head_spec) = (config.thresholds[0], &thresholds[0]);

    let repp = repp_summary(config, run, theta)?;

    let dist = cluster_statistics(run, head_spec.u_n, q);
    let (fit, fit_error) =
        match chi_square_fit(&dist.histogram, |k| geometric_multiplicity_pmf(theta, k as u64).unwrap_or(0.0)) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let clusters = ClusterSummary {
        n: head.n,
        tau: head.tau,
        u_n: head_spec.u_n,
        clusters: dist.cluster_count(),
        mean_size: dist.mean_size,
        expected_mean: 1.0 / theta,
        histogram: dist.histogram,
        fit,
        fit_error,
    };
    Ok(Statistics { schema_version: SCHEMA_VERSION, thresholds, theta_hat, block_maxima, repp, clusters })
}

pub fn evaluate_checks(config: &ExperimentConfig, theta: &ThetaSummary, stats: &Statistics) -> Vec<Check> {
    let mut checks = Vec::new();
    let t = theta.theta_numeric;
    if config.checks.theta {
        let gap = (theta.theta_formula - t).abs();
        checks.push(Check::new(
            "theta formula vs numeric",
            gap <= 1e-4,
            format!("formula {:.8}, numeric {t:.8}, gap {gap:.2e} (tol 1e-4)", theta.theta_formula),
        ));
        let h = &stats.theta_hat[0];
        let gap = (h.theta_hat - t).abs();
        checks.push(Check::new(
            "theta runs estimator",
            gap <= 0.01,
            format!(
                "theta_hat {:.5} +- {:.5} at tau/n = {:.1e} ({} exceedances), gap {gap:.5} (tol 0.01)",
                h.theta_hat,
                h.stderr,
                h.tau / h.n as f64,
                h.exceedances
            ),
        ));
    }
    if config.checks.gumbel {
        for row in &stats.block_maxima {
            let gap = (row.empirical - row.predicted).abs();
            checks.push(Check::new(
                format!("gumbel n={} tau={}", row.n, row.tau),
                gap <= 2.0 * row.stderr && gap <= 0.02,
                format!(
                    "P(M_n <= u_n) = {:.5}, exp(-theta tau) = {:.5}, gap {gap:.5} vs 2se {:.5} ({} blocks)",
                    row.empirical,
                    row.predicted,
                    2.0 * row.stderr,
                    row.blocks
                ),
            ));
        }
    }
    if config.checks.repp {
        let r = &stats.repp;
        let p = r.fit.as_ref().map(|f| f.p_value);
        let k0_gap = (r.k0_frequency - r.k0_expected).abs();
        checks.push(Check::new(
            "repp polya-aeppli",
            p.is_some_and(|p| p > 0.01) && k0_gap <= 0.01,
            format!(
                "chi-square p = {}, k=0 frequency {:.5} vs {:.5} ({} windows)",
                p.map_or_else(|| r.fit_error.clone().unwrap_or_default(), |p| format!("{p:.4}")),
                r.k0_frequency,
                r.k0_expected,
                r.windows
            ),
        ));
    }
    if config.checks.clusters {
        let c = &stats.clusters;
        let p = c.fit.as_ref().map(|f| f.p_value);
        let rel = (c.mean_size - c.expected_mean).abs() / c.expected_mean;
        checks.push(Check::new(
            "geometric clusters",
            p.is_some_and(|p| p > 0.01) && rel <= 0.05,
            format!(
                "mean size {:.5} vs 1/theta {:.5} ({:.2}%), chi-square p = {} ({} clusters)",
                c.mean_size,
                c.expected_mean,
                100.0 * rel,
                p.map_or_else(|| c.fit_error.clone().unwrap_or_default(), |p| format!("{p:.4}")),
                c.clusters
            ),
        ));
    }
    checks
}

pub fn orbit_csv(orbit: &PeriodicOrbit) -> Vec<u8> {
    let mut t = Table::new(&["bounce", "scatterer", "r", "theta", "tau", "collision_factor", "b_pre", "b_post", "factor"]);
    for (i, (p, a)) in orbit.points.iter().zip(curvature_audit(&orbit.factors, &orbit.curvatures)).enumerate() {
        t.row([
            i.to_string(),
            p.scatterer.to_string(),
            fmt_f64(p.r),
            fmt_f64(p.theta),
            fmt_f64(a.tau),
            fmt_f64(a.collision_factor),
            fmt_f64(a.b_pre),
            fmt_f64(a.b_post),
            fmt_f64(a.factor),
        ]);
    }
    t.into_bytes()
}

fn theta_csv(theta: &ThetaSummary) -> Vec<u8> {
    let mut t = Table::new(&[
        "theta_formula",
        "theta_numeric",
        "theta_closed_form",
        "theta_closed_form_asymptotic",
        "expansion_formula",
        "expansion_numeric",
    ]);
    t.row([
        fmt_f64(theta.theta_formula),
        fmt_f64(theta.theta_numeric),
        fmt_opt(theta.theta_closed_form),
        fmt_opt(theta.theta_closed_form_asymptotic),
        fmt_f64(theta.expansion_formula),
        fmt_f64(theta.expansion_numeric),
    ]);
    t.into_bytes()
}

pub fn repp_csv(counts: &[u64], windows: u64, params: &PolyaAeppliParams) -> Vec<u8> {
    let mut t = Table::new(&["k", "repp_count", "exact_pmf", "empirical_freq"]);
    let kmax = (counts.len() as u64).max(support_cutoff(params) + 1);
    for k in 0..kmax {
        let c = counts.get(k as usize).copied().unwrap_or(0);
        t.row([k.to_string(), c.to_string(), fmt_f64(polya_aeppli_pmf(params, k)), fmt_f64(c as f64 / windows as f64)]);
    }
    t.into_bytes()
}

fn write_statistics_csv(st: &Stage<'_>, stats: &Statistics, summary: &ThetaSummary) -> anyhow::Result<()> {
    let theta = summary.theta_numeric;
    let mut t = Table::new(&["n", "tau", "u_n", "v_n", "exceedances", "total_steps"]);
    for s in &stats.thresholds {
        t.row([
            s.n.to_string(),
            fmt_f64(s.tau_intensity),
            fmt_f64(s.u_n),
            fmt_f64(s.v_n),
            s.exceedances.to_string(),
            s.total_steps.to_string(),
        ]);
    }
    write_atomic(&st.path("thresholds.csv"), &t.into_bytes())?;

    let mut t = Table::new(&["n", "tau", "u_n", "exceedances", "returns", "theta_hat", "stderr", "theta_formula", "theta_numeric"]);
    for h in &stats.theta_hat {
        t.row([
            h.n.to_string(),
            fmt_f64(h.tau),
            fmt_f64(h.u_n),
            h.exceedances.to_string(),
            h.returns.to_string(),
            fmt_f64(h.theta_hat),
            fmt_f64(h.stderr),
            fmt_f64(summary.theta_formula),
            fmt_f64(theta),
        ]);
    }
    write_atomic(&st.path("theta_hat.csv"), &t.into_bytes())?;

    let mut t = Table::new(&["n", "tau", "u_n", "blocks", "empirical_block_prob", "predicted", "stderr"]);
    for b in &stats.block_maxima {
        t.row([
            b.n.to_string(),
            fmt_f64(b.tau),
            fmt_f64(b.u_n),
            b.blocks.to_string(),
            fmt_f64(b.empirical),
            fmt_f64(b.predicted),
            fmt_f64(b.stderr),
        ]);
    }
    write_atomic(&st.path("block_maxima.csv"), &t.into_bytes())?;

    let params = PolyaAeppliParams::new(theta, stats.repp.t_window)?;
    write_atomic(&st.path("repp.csv"), &repp_csv(&stats.repp.counts, stats.repp.windows, &params))?;

    let c = &stats.clusters;
    let mut t = Table::new(&["cluster_size", "frequency", "geometric_pmf"]);
    for (k, &f) in c.histogram.iter().enumerate().skip(1) {
        t.row([k.to_string(), f.to_string(), fmt_f64(geometric_multiplicity_pmf(theta, k as u64)?)]);
    }
    write_atomic(&st.path("clusters.csv"), &t.into_bytes())?;
    Ok(())
}
