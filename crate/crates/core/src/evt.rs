//! Extreme value statistics of `phi(x) = -ln d(x, zeta)` along billiard
//! trajectories, where `d` is the max-norm in the linearized stable/unstable
//! chart at a periodic point `zeta`.
//!
//! Trajectories are reduced to sparse [`ObservedRun`]s: only collisions whose
//! observable lies above the chart floor are stored, with their step index.
//! Every statistic below (thresholds, block maxima, point-process counts,
//! clusters, the conditional return estimator) is computed from that record.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::billiard::{
    billiard_map, iterate, next_collision, sample_invariant_point, BilliardError, PhasePoint,
    ScattererTable, GRAZING_GUARD,
};
use crate::geometry::wrap_signed;
use crate::orbits::PeriodicOrbit;
use crate::tangent::{HyperbolicSplitting, Matrix2, TangentError};

/// Chart validity radius as a fraction of the probed distance to the nearest
/// singularity of `T^{±q}`.
pub const CHART_VALIDITY_FRACTION: f64 = 0.25;

/// Ratio between the chart half-size and the largest ball a level-sized chart
/// must contain.
pub const CHART_LEVEL_MARGIN: f64 = 1.5;

/// Minimum angle between the chart directions.
pub const MIN_CHART_ANGLE: f64 = 1e-3;

pub const MIN_EXCEEDANCES: usize = 1000;
pub const MIN_BLOCKS: usize = 200;
pub const DEFAULT_BURN_IN: u64 = 1000;

/// Restarts allowed per segment after grazing or horizon failures.
pub const MAX_SEGMENT_RESTARTS: u64 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvtError {
    #[error("insufficient calibration: {0}")]
    InsufficientCalibration(String),
    #[error("degenerate chart: {0}")]
    DegenerateChart(String),
    #[error("segment {segment} failed after {attempts} restarts: {source}")]
    SegmentFailed {
        segment: usize,
        attempts: u64,
        #[source]
        source: BilliardError,
    },
    #[error(transparent)]
    Tangent(#[from] TangentError),
}

/// Linear chart at `zeta` spanned by the unstable and stable directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptedChart {
    pub origin: PhasePoint,
    /// Perimeter of the origin's scatterer, for wrapping `r`.
    pub perimeter: f64,
    pub e_u: [f64; 2],
    pub e_s: [f64; 2],
    /// Inverse of the matrix with columns `e_u`, `e_s`.
    inverse: Matrix2,
    pub validity_radius: f64,
    /// Half-width of the coordinate box checked before any chart solve.
    pub prefilter_radius: f64,
    pub singularity_distance: f64,
}

impl AdaptedChart {
    pub fn new(
        origin: PhasePoint,
        perimeter: f64,
        e_u: [f64; 2],
        e_s: [f64; 2],
        validity_radius: f64,
    ) -> Result<Self, EvtError> {
        let det = e_u[0] * e_s[1] - e_s[0] * e_u[1];
        let nu = e_u[0].hypot(e_u[1]);
        let ns = e_s[0].hypot(e_s[1]);
        let sin_angle = det.abs() / (nu * ns);
        if !(sin_angle.asin() >= MIN_CHART_ANGLE) {
            return Err(EvtError::DegenerateChart(format!(
                "chart directions nearly parallel (sin angle {sin_angle:e})"
            )));
        }
        if !(validity_radius > 0.0) {
            return Err(EvtError::DegenerateChart("validity radius must be positive".into()));
        }
        let e_u = [e_u[0] / nu, e_u[1] / nu];
        let e_s = [e_s[0] / ns, e_s[1] / ns];
        let det = e_u[0] * e_s[1] - e_s[0] * e_u[1];
        let inverse = [[e_s[1] / det, -e_s[0] / det], [-e_u[1] / det, e_u[0] / det]];
        Ok(Self {
            origin,
            perimeter,
            e_u,
            e_s,
            inverse,
            validity_radius,
            prefilter_radius: validity_radius,
            singularity_distance: f64::NAN,
        })
    }

    pub fn from_splitting(
        origin: PhasePoint,
        perimeter: f64,
        splitting: &HyperbolicSplitting,
        validity_radius: f64,
    ) -> Result<Self, EvtError> {
        Self::new(origin, perimeter, splitting.unstable, splitting.stable, validity_radius)
    }

    /// Value emitted for every point outside the chart. Any point farther than
    /// `validity_radius` in `(r, theta)` has `d > validity_radius / 2`, so
    /// thresholds above this floor lose no exceedances.
    pub fn floor_value(&self) -> f64 {
        -(0.5 * self.validity_radius).ln()
    }

    /// `(x^u, x^s)` of `x - zeta`, or `None` outside the validity radius.
    pub fn coordinates(&self, x: &PhasePoint) -> Option<(f64, f64)> {
        if x.scatterer != self.origin.scatterer {
            return None;
        }
        let dr = wrap_signed(x.r - self.origin.r, self.perimeter);
        let dt = x.theta - self.origin.theta;
        if dr.abs() > self.prefilter_radius || dt.abs() > self.prefilter_radius {
            return None;
        }
        if dr.hypot(dt) > self.validity_radius {
            return None;
        }
        let a = self.inverse[0][0] * dr + self.inverse[0][1] * dt;
        let b = self.inverse[1][0] * dr + self.inverse[1][1] * dt;
        Some((a, b))
    }

    /// Phase point at `zeta + a e_u + b e_s`.
    pub fn point_at(&self, a: f64, b: f64) -> PhasePoint {
        PhasePoint::new(
            self.origin.scatterer,
            (self.origin.r + a * self.e_u[0] + b * self.e_s[0]).rem_euclid(self.perimeter),
            self.origin.theta + a * self.e_u[1] + b * self.e_s[1],
        )
    }

    /// `c` in `mu{d < eps} ~ c eps^2` for small `eps`: the chart box has area
    /// `4 eps^2 |det(e_u, e_s)|` in `(r, theta)` and the normalized invariant
    /// density at the origin is `cos(theta) / (2 |boundary|)`.
    pub fn ball_mass_coefficient(&self, table: &ScattererTable) -> f64 {
        let det = (self.e_u[0] * self.e_s[1] - self.e_s[0] * self.e_u[1]).abs();
        4.0 * det * self.origin.theta.cos() / (2.0 * table.total_perimeter())
    }

    /// Radius `eps` with `mu{d < eps} = prob` to leading order.
    pub fn ball_radius_for_mass(&self, table: &ScattererTable, prob: f64) -> f64 {
        (prob / self.ball_mass_coefficient(table)).sqrt()
    }
}

type Itinerary = Vec<(usize, [i64; 2])>;

fn itinerary(x: &PhasePoint, q: usize, table: &ScattererTable) -> Result<Itinerary, BilliardError> {
    let mut path = Vec::with_capacity(2 * q);
    let mut y = *x;
    for _ in 0..q {
        let c = next_collision(&y, table)?;
        path.push((c.next.scatterer, c.image));
        y = c.next;
    }
    let mut y = crate::billiard::time_reverse(*x);
    for _ in 0..q {
        let c = next_collision(&y, table)?;
        path.push((c.next.scatterer, c.image));
        y = c.next;
    }
    Ok(path)
}

/// Distance in `(r, theta)` from `zeta` to the nearest point whose forward or
/// backward `q`-step itinerary differs from that of `zeta`, probed along 32
/// rays.
pub fn singularity_distance(zeta: &PhasePoint, q: usize, table: &ScattererTable) -> f64 {
    let Ok(base) = itinerary(zeta, q, table) else {
        return 0.0;
    };
    let same = |rho: f64, dir: (f64, f64)| -> bool {
        let p = PhasePoint::new(zeta.scatterer, zeta.r + rho * dir.0, zeta.theta + rho * dir.1);
        if !(p.theta.abs() < std::f64::consts::FRAC_PI_2 - GRAZING_GUARD) {
            return false;
        }
        matches!(itinerary(&p, q, table), Ok(path) if path == base)
    };
    let mut best = f64::INFINITY;
    for k in 0..32 {
        let angle = k as f64 * std::f64::consts::PI / 16.0;
        let dir = (angle.cos(), angle.sin());
        let mut inside = 0.0;
        let mut outside = f64::NAN;
        let mut rho = 1e-6;
        while rho < 2.0 {
            if !same(rho, dir) {
                outside = rho;
                break;
            }
            inside = rho;
            rho *= 1.25;
        }
        if outside.is_nan() {
            best = best.min(inside);
            continue;
        }
        for _ in 0..40 {
            let mid = 0.5 * (inside + outside);
            if same(mid, dir) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        best = best.min(inside);
    }
    best
}

/// Chart at `orbit.points[0]` from the numeric splitting of `DT^q`.
pub fn build_chart(orbit: &PeriodicOrbit, table: &ScattererTable) -> Result<AdaptedChart, EvtError> {
    let zeta = orbit.points[0];
    let dist = singularity_distance(&zeta, orbit.period, table);
    let perimeter = table.scatterers()[zeta.scatterer].perimeter();
    let mut chart = AdaptedChart::from_splitting(
        zeta,
        perimeter,
        &orbit.splitting,
        CHART_VALIDITY_FRACTION * dist,
    )?;
    chart.singularity_distance = dist;
    Ok(chart)
}

/// Like [`build_chart`], but enlarged when needed so that thresholds with
/// exceedance probability up to `max_exceedance_prob` clear the floor.
///
/// The enlarged chart may reach past the nearest singularity. The observable
/// stays well defined there; what matters for the return statistics is the
/// set `|x^u| < eps / Lambda`, which sits far inside.
pub fn build_chart_for_level(
    orbit: &PeriodicOrbit,
    table: &ScattererTable,
    max_exceedance_prob: f64,
) -> Result<AdaptedChart, EvtError> {
    let chart = build_chart(orbit, table)?;
    if !(max_exceedance_prob > 0.0 && max_exceedance_prob < 1.0) {
        return Err(EvtError::DegenerateChart(format!(
            "exceedance probability {max_exceedance_prob} outside (0, 1)"
        )));
    }
    let needed = 2.0 * CHART_LEVEL_MARGIN * chart.ball_radius_for_mass(table, max_exceedance_prob);
    if needed <= chart.validity_radius {
        return Ok(chart);
    }
    let mut wide = AdaptedChart::new(chart.origin, chart.perimeter, chart.e_u, chart.e_s, needed)?;
    wide.singularity_distance = chart.singularity_distance;
    Ok(wide)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChartDistance {
    Near(f64),
    Far,
}

/// `max(|x^u|, |x^s|)` in the chart at `zeta`.
pub fn adapted_distance(x: &PhasePoint, chart: &AdaptedChart) -> ChartDistance {
    match chart.coordinates(x) {
        Some((a, b)) => ChartDistance::Near(a.abs().max(b.abs())),
        None => ChartDistance::Far,
    }
}

/// `-ln d(x, zeta)`; `+inf` at `zeta`, the chart floor outside the chart.
pub fn observable_phi(x: &PhasePoint, chart: &AdaptedChart) -> f64 {
    match adapted_distance(x, chart) {
        ChartDistance::Near(d) if d == 0.0 => f64::INFINITY,
        ChartDistance::Near(d) => (-d.ln()).max(chart.floor_value()),
        ChartDistance::Far => chart.floor_value(),
    }
}

/// Radius `rho` of the ball `{d < rho}` of level `u`: `e^{-u}` moved to the
/// smallest double with `-ln(rho) <= u`, so that `d < rho` and `-ln(d) > u`
/// agree for every double `d`.
pub fn level_radius(u: f64) -> f64 {
    if u == f64::INFINITY {
        return 0.0;
    }
    let mut rho = (-u).exp();
    while rho < f64::INFINITY && -rho.ln() > u {
        rho = rho.next_up();
    }
    while rho > 0.0 && -rho.next_down().ln() <= u {
        rho = rho.next_down();
    }
    rho
}

/// Exceedance of level `u >= floor` decided through the distance,
/// `d(x, zeta) < e^{-u}`.
pub fn exceeds_by_distance(x: &PhasePoint, chart: &AdaptedChart, u: f64) -> bool {
    match adapted_distance(x, chart) {
        ChartDistance::Near(d) => d < level_radius(u),
        ChartDistance::Far => false,
    }
}

/// Sparse observable record of one contiguous trajectory segment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservedSegment {
    pub len: u64,
    /// `(step, phi)` for every step with `phi` above the floor, by step.
    pub hits: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub restarts: u64,
    pub grazing: u64,
    pub horizon_exceeded: u64,
}

impl RunDiagnostics {
    fn merge(&mut self, other: &RunDiagnostics) {
        self.restarts += other.restarts;
        self.grazing += other.grazing;
        self.horizon_exceeded += other.horizon_exceeded;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservedRun {
    pub floor: f64,
    pub segments: Vec<ObservedSegment>,
    pub diagnostics: RunDiagnostics,
}

impl ObservedRun {
    pub fn total_steps(&self) -> u64 {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn stored_hits(&self) -> usize {
        self.segments.iter().map(|s| s.hits.len()).sum()
    }
}

/// Initial condition stream for one segment: `seed` and ChaCha stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSeed {
    pub seed: u64,
    pub stream: u64,
}

fn try_segment(
    table: &ScattererTable,
    chart: &AdaptedChart,
    x0: PhasePoint,
    burn_in: u64,
    len: u64,
) -> Result<ObservedSegment, BilliardError> {
    let mut x = iterate(&x0, burn_in as i64, table)?;
    let floor = chart.floor_value();
    let mut hits = Vec::new();
    for step in 0..len {
        let phi = observable_phi(&x, chart);
        if phi > floor {
            hits.push((step, phi));
        }
        x = billiard_map(&x, table)?;
    }
    Ok(ObservedSegment { len, hits })
}

/// Simulate one segment from an invariant-measure initial condition,
/// discarding `burn_in` collisions. Failed attempts restart from a fresh draw
/// of the same stream.
pub fn observe_segment(
    table: &ScattererTable,
    chart: &AdaptedChart,
    seed: SegmentSeed,
    burn_in: u64,
    len: u64,
) -> Result<(ObservedSegment, RunDiagnostics), (BilliardError, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.seed);
    rng.set_stream(seed.stream);
    let mut diag = RunDiagnostics::default();
    loop {
        let x0 = sample_invariant_point(table, &mut rng);
        match try_segment(table, chart, x0, burn_in, len) {
            Ok(seg) => return Ok((seg, diag)),
            Err(e) => {
                match e {
                    BilliardError::GrazingCollision(_) => diag.grazing += 1,
                    BilliardError::HorizonExceeded(_) => diag.horizon_exceeded += 1,
                    _ => return Err((e, diag.restarts)),
                }
                diag.restarts += 1;
                if diag.restarts > MAX_SEGMENT_RESTARTS {
                    return Err((e, diag.restarts));
                }
            }
        }
    }
}

/// Simulate all segments (concurrently when the `parallel` feature is on) and
/// merge in input order. The result does not depend on the worker count.
pub fn observe_run(
    table: &ScattererTable,
    chart: &AdaptedChart,
    seeds: &[SegmentSeed],
    burn_in: u64,
    segment_len: u64,
) -> Result<ObservedRun, EvtError> {
    let work = |(i, s): (usize, &SegmentSeed)| {
        observe_segment(table, chart, *s, burn_in, segment_len).map_err(|(source, attempts)| {
            EvtError::SegmentFailed {
                segment: i,
                attempts,
                source,
            }
        })
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        seeds.par_iter().enumerate().map(work).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = seeds.iter().enumerate().map(work).collect();

    let mut run = ObservedRun {
        floor: chart.floor_value(),
        ..Default::default()
    };
    for r in results {
        let (seg, diag) = r?;
        run.diagnostics.merge(&diag);
        run.segments.push(seg);
    }
    Ok(run)
}

/// Threshold `u_n` with `n * P(X_0 > u_n) ~ tau` and its rescaling `v_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub n: u64,
    pub tau_intensity: f64,
    pub u_n: f64,
    /// `1 / empirical P(X_0 > u_n)`.
    pub v_n: f64,
    pub exceedances: u64,
    pub total_steps: u64,
}

impl ThresholdSpec {
    /// Binomial standard error of `n * P(X_0 > u_n)`.
    pub fn intensity_stderr(&self) -> f64 {
        let p = self.exceedances as f64 / self.total_steps as f64;
        self.n as f64 * (p * (1.0 - p) / self.total_steps as f64).sqrt()
    }

    pub fn empirical_intensity(&self) -> f64 {
        self.n as f64 * self.exceedances as f64 / self.total_steps as f64
    }
}

/// Empirical `(1 - tau/n)` quantile of the observable over the whole run.
pub fn threshold_for(n: u64, tau_intensity: f64, run: &ObservedRun) -> Result<ThresholdSpec, EvtError> {
    if n == 0 || !(tau_intensity > 0.0) {
        return Err(EvtError::InsufficientCalibration(
            "block length and intensity must be positive".into(),
        ));
    }
    let total = run.total_steps();
    let target = (total as f64 * tau_intensity / n as f64).floor() as usize;
    if target < MIN_EXCEEDANCES {
        return Err(EvtError::InsufficientCalibration(format!(
            "{total} steps give only {target} expected exceedances at tau/n = {:e}",
            tau_intensity / n as f64
        )));
    }
    let mut values: Vec<f64> = run
        .segments
        .iter()
        .flat_map(|s| s.hits.iter().map(|h| h.1))
        .collect();
    if values.len() <= target {
        return Err(EvtError::InsufficientCalibration(format!(
            "threshold would fall below the chart floor ({} stored values, {target} needed)",
            values.len()
        )));
    }
    let (_, kth, _) = values.select_nth_unstable_by(target, |a, b| b.total_cmp(a));
    let u_n = *kth;
    let exceedances = values.iter().filter(|&&v| v > u_n).count() as u64;
    if exceedances == 0 {
        return Err(EvtError::InsufficientCalibration("no exceedances above threshold".into()));
    }
    Ok(ThresholdSpec {
        n,
        tau_intensity,
        u_n,
        v_n: total as f64 / exceedances as f64,
        exceedances,
        total_steps: total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMaximaRow {
    pub tau: f64,
    pub u_n: f64,
    pub blocks: u64,
    /// Fraction of blocks with no exceedance of `u_n`.
    pub empirical: f64,
    /// `exp(-theta tau)` when `theta` is supplied.
    pub predicted: Option<f64>,
    pub stderr: f64,
}

/// `P(M_n <= u_n(tau))` over disjoint blocks of length `n`.
pub fn block_maxima_survey(
    run: &ObservedRun,
    n: u64,
    taus: &[f64],
    theta: Option<f64>,
) -> Result<Vec<BlockMaximaRow>, EvtError> {
    if n == 0 {
        return Err(EvtError::InsufficientCalibration("block length must be positive".into()));
    }
    let blocks: u64 = run.segments.iter().map(|s| s.len / n).sum();
    if blocks < MIN_BLOCKS as u64 {
        return Err(EvtError::InsufficientCalibration(format!(
            "{blocks} blocks of length {n}, need {MIN_BLOCKS}"
        )));
    }
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let u_n = if tau == 0.0 {
            f64::INFINITY
        } else {
            threshold_for(n, tau, run)?.u_n
        };
        let mut dirty = 0u64;
        for seg in &run.segments {
            let full = (seg.len / n) * n;
            let mut last_block = u64::MAX;
            for &(step, phi) in &seg.hits {
                if step >= full || phi <= u_n {
                    continue;
                }
                let b = step / n;
                if b != last_block {
                    dirty += 1;
                    last_block = b;
                }
            }
        }
        let p = (blocks - dirty) as f64 / blocks as f64;
        rows.push(BlockMaximaRow {
            tau,
            u_n,
            blocks,
            empirical: p,
            predicted: theta.map(|t| (-t * tau).exp()),
            stderr: (p * (1.0 - p) / blocks as f64).sqrt(),
        });
    }
    Ok(rows)
}

/// Histogram of exceedance counts in disjoint windows of `v_n * t_window`
/// collisions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReppHistogram {
    pub window_len: u64,
    pub windows: u64,
    /// `counts[k]` = number of windows with exactly `k` exceedances.
    pub counts: Vec<u64>,
}

pub fn repp_counts(
    run: &ObservedRun,
    spec: &ThresholdSpec,
    t_window: f64,
    n_windows: u64,
) -> Result<ReppHistogram, EvtError> {
    let window_len = (spec.v_n * t_window).round() as u64;
    if window_len == 0 {
        return Ok(ReppHistogram {
            window_len,
            windows: n_windows,
            counts: vec![n_windows],
        });
    }
    let available: u64 = run.segments.iter().map(|s| s.len / window_len).sum();
    if available < n_windows {
        return Err(EvtError::InsufficientCalibration(format!(
            "{available} windows of length {window_len} available, {n_windows} requested"
        )));
    }
    let mut counts: Vec<u64> = vec![0];
    let mut remaining = n_windows;
    for seg in &run.segments {
        if remaining == 0 {
            break;
        }
        let w = (seg.len / window_len).min(remaining);
        let mut per_window = vec![0u64; w as usize];
        for &(step, phi) in &seg.hits {
            let idx = step / window_len;
            if idx < w && phi > spec.u_n {
                per_window[idx as usize] += 1;
            }
        }
        for c in per_window {
            if c as usize >= counts.len() {
                counts.resize(c as usize + 1, 0);
            }
            counts[c as usize] += 1;
        }
        remaining -= w;
    }
    Ok(ReppHistogram {
        window_len,
        windows: n_windows,
        counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub start: u64,
    pub size: u64,
}

/// Exceedance times of one contiguous segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceSeries {
    pub threshold: f64,
    pub event_times: Vec<u64>,
    pub clusters: Vec<Cluster>,
    pub total_steps: u64,
}

impl ExceedanceSeries {
    /// Sorts and deduplicates `event_times`; events beyond `total_steps` are
    /// rejected.
    pub fn new(threshold: f64, mut event_times: Vec<u64>, total_steps: u64) -> Result<Self, EvtError> {
        event_times.sort_unstable();
        event_times.dedup();
        if event_times.last().is_some_and(|&t| t >= total_steps) {
            return Err(EvtError::InsufficientCalibration(
                "event time beyond series length".into(),
            ));
        }
        Ok(Self {
            threshold,
            event_times,
            clusters: Vec::new(),
            total_steps,
        })
    }

    pub fn from_segment(segment: &ObservedSegment, threshold: f64) -> Self {
        Self {
            threshold,
            event_times: segment
                .hits
                .iter()
                .filter(|h| h.1 > threshold)
                .map(|h| h.0)
                .collect(),
            clusters: Vec::new(),
            total_steps: segment.len,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterDistribution {
    pub clusters: Vec<Cluster>,
    /// `histogram[k]` = number of clusters of size `k` (index 0 unused).
    pub histogram: Vec<u64>,
    pub mean_size: f64,
}

impl ClusterDistribution {
    fn from_clusters(clusters: Vec<Cluster>) -> Self {
        let mut histogram = vec![0u64];
        let mut total = 0u64;
        for c in &clusters {
            if c.size as usize >= histogram.len() {
                histogram.resize(c.size as usize + 1, 0);
            }
            histogram[c.size as usize] += 1;
            total += c.size;
        }
        let mean_size = if clusters.is_empty() {
            0.0
        } else {
            total as f64 / clusters.len() as f64
        };
        Self {
            clusters,
            histogram,
            mean_size,
        }
    }

    pub fn cluster_count(&self) -> u64 {
        self.clusters.len() as u64
    }
}

/// Runs declustering: maximal groups of events whose consecutive gaps are at
/// most `gap`.
pub fn decluster_runs(series: &ExceedanceSeries, gap: u64) -> ClusterDistribution {
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut prev: Option<u64> = None;
    for &t in &series.event_times {
        match (prev, clusters.last_mut()) {
            (Some(p), Some(c)) if t - p <= gap => c.size += 1,
            _ => clusters.push(Cluster { start: t, size: 1 }),
        }
        prev = Some(t);
    }
    ClusterDistribution::from_clusters(clusters)
}

/// Declustered cluster sizes pooled over all segments of a run.
pub fn cluster_statistics(run: &ObservedRun, threshold: f64, gap: u64) -> ClusterDistribution {
    let mut all = Vec::new();
    for seg in &run.segments {
        let series = ExceedanceSeries::from_segment(seg, threshold);
        all.extend(decluster_runs(&series, gap).clusters);
    }
    ClusterDistribution::from_clusters(all)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta_hat: f64,
    pub stderr: f64,
    pub exceedances: u64,
    pub returns: u64,
}

/// `1 - #{X_i > u, X_{i+q} > u} / #{X_i > u}`, counting only `i` with
/// `i + q` inside the same segment.
pub fn conditional_return_estimator(run: &ObservedRun, u: f64, q: u64) -> Result<ThetaEstimate, EvtError> {
    let mut exceedances = 0u64;
    let mut returns = 0u64;
    for seg in &run.segments {
        let events: Vec<u64> = seg.hits.iter().filter(|h| h.1 > u).map(|h| h.0).collect();
        for &t in &events {
            if t + q >= seg.len {
                continue;
            }
            exceedances += 1;
            if events.binary_search(&(t + q)).is_ok() {
                returns += 1;
            }
        }
    }
    if (exceedances as usize) < MIN_EXCEEDANCES {
        return Err(EvtError::InsufficientCalibration(format!(
            "{exceedances} exceedances, need {MIN_EXCEEDANCES}"
        )));
    }
    let p = returns as f64 / exceedances as f64;
    Ok(ThetaEstimate {
        theta_hat: 1.0 - p,
        stderr: (p * (1.0 - p) / exceedances as f64).sqrt(),
        exceedances,
        returns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> AdaptedChart {
        let s = 0.6f64.hypot(0.8);
        AdaptedChart::new(
            PhasePoint::new(0, 0.5, 0.0),
            2.0,
            [0.6 / s, 0.8 / s],
            [0.6 / s, -0.8 / s],
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn distance_examples() {
        let c = chart();
        assert_eq!(adapted_distance(&c.origin, &c), ChartDistance::Near(0.0));
        assert_eq!(observable_phi(&c.origin, &c), f64::INFINITY);
        let ChartDistance::Near(d) = adapted_distance(&c.point_at(1e-4, 0.0), &c) else { panic!() };
        assert!((d - 1e-4).abs() < 1e-15);
        let ChartDistance::Near(d) = adapted_distance(&c.point_at(3e-5, -7e-5), &c) else { panic!() };
        assert!((d - 7e-5).abs() < 1e-15);
        assert_eq!(adapted_distance(&c.point_at(0.2, 0.0), &c), ChartDistance::Far);
        assert_eq!(adapted_distance(&PhasePoint::new(1, 0.5, 0.0), &c), ChartDistance::Far);
    }

    #[test]
    fn phi_is_log_distance() {
        let c = chart();
        let x = c.point_at((-5f64).exp(), 0.0);
        assert!((observable_phi(&x, &c) - 5.0).abs() < 1e-12);
        let far = c.point_at(1.0, 0.0);
        assert_eq!(observable_phi(&far, &c), c.floor_value());
    }

    #[test]
    fn wraps_across_r_origin() {
        let mut c = chart();
        c.origin.r = 0.0;
        let x = c.point_at(-1e-3, 0.0);
        assert!(x.r > 1.9);
        let ChartDistance::Near(d) = adapted_distance(&x, &c) else { panic!() };
        assert!((d - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn parallel_directions_rejected() {
        let e = [1.0, 0.0];
        assert!(matches!(
            AdaptedChart::new(PhasePoint::new(0, 0.0, 0.0), 1.0, e, [1.0, 1e-5], 0.1),
            Err(EvtError::DegenerateChart(_))
        ));
    }

    #[test]
    fn decluster_example() {
        let s = ExceedanceSeries::new(1.0, vec![9, 5, 40, 7], 100).unwrap();
        let d = decluster_runs(&s, 2);
        assert_eq!(d.clusters, vec![Cluster { start: 5, size: 3 }, Cluster { start: 40, size: 1 }]);
        assert_eq!(d.mean_size, 2.0);
        assert_eq!(d.histogram, vec![0, 1, 0, 1]);
        let empty = ExceedanceSeries::new(1.0, vec![], 100).unwrap();
        let d = decluster_runs(&empty, 2);
        assert!(d.clusters.is_empty());
        assert_eq!(d.histogram, vec![0]);
        assert!(ExceedanceSeries::new(1.0, vec![100], 100).is_err());
    }

    fn synthetic_run(hits_per_segment: Vec<Vec<(u64, f64)>>, len: u64) -> ObservedRun {
        ObservedRun {
            floor: 0.0,
            segments: hits_per_segment
                .into_iter()
                .map(|hits| ObservedSegment { len, hits })
                .collect(),
            diagnostics: RunDiagnostics::default(),
        }
    }

    #[test]
    fn conditional_estimator_extremes() {
        // every exceedance followed by another at lag 2
        let hits: Vec<(u64, f64)> = (0..3000).flat_map(|k| [(10 * k, 5.0), (10 * k + 2, 5.0)]).collect();
        let run = synthetic_run(vec![hits], 30_010);
        let all = conditional_return_estimator(&run, 1.0, 2).unwrap();
        assert_eq!(all.returns * 2, all.exceedances);
        let only_first: Vec<(u64, f64)> = (0..3000).map(|k| (10 * k, 5.0)).collect();
        let run = synthetic_run(vec![only_first.clone()], 30_010);
        assert_eq!(conditional_return_estimator(&run, 1.0, 2).unwrap().theta_hat, 1.0);
        let chained: Vec<(u64, f64)> = (0..3000).map(|k| (2 * k, 5.0)).collect();
        let run = synthetic_run(vec![chained], 6000);
        let est = conditional_return_estimator(&run, 1.0, 2).unwrap();
        assert_eq!(est.theta_hat, 0.0);
        let short = synthetic_run(vec![only_first[..10].to_vec()], 30_010);
        assert!(conditional_return_estimator(&short, 1.0, 2).is_err());
    }

    #[test]
    fn threshold_and_blocks() {
        // 2000 blocks of length 100, one hit per block at increasing phi
        let hits: Vec<(u64, f64)> = (0..2000).map(|k| (100 * k + 7, 1.0 + k as f64)).collect();
        let run = synthetic_run(vec![hits], 200_000);
        assert!(threshold_for(100, 0.1, &run).is_err());
        let spec = threshold_for(100, 0.5, &run).unwrap();
        assert_eq!(spec.exceedances, 1000);
        assert_eq!(spec.v_n, 200.0);
        let lower = threshold_for(100, 0.9, &run).unwrap();
        assert!(lower.u_n < spec.u_n);
        let rows = block_maxima_survey(&run, 100, &[0.0, 0.5], Some(1.0)).unwrap();
        assert_eq!(rows[0].empirical, 1.0);
        assert_eq!(rows[1].empirical, 0.5);
        assert!(block_maxima_survey(&run, 10_000, &[0.5], None).is_err());
    }

    #[test]
    fn repp_partition() {
        let hits: Vec<(u64, f64)> = (0..2000).map(|k| (100 * k + 7, 1.0 + k as f64)).collect();
        let run = synthetic_run(vec![hits], 200_000);
        let spec = threshold_for(100, 0.5, &run).unwrap();
        let h = repp_counts(&run, &spec, 1.0, 1000).unwrap();
        assert_eq!(h.window_len, 200);
        assert_eq!(h.counts.iter().sum::<u64>(), 1000);
        let zero = repp_counts(&run, &spec, 0.0, 50).unwrap();
        assert_eq!(zero.counts, vec![50]);
        assert!(repp_counts(&run, &spec, 1.0, 5000).is_err());
    }
}
