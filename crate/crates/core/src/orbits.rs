//! Periodic orbits of the billiard map: the line-of-centers period-2 family,
//! Newton refinement on the chord-length functional, and the extremal index
//! `theta = 1 - 1/|DT^q_u|`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::billiard::{next_collision, BilliardError, PhasePoint, ScattererTable};
use crate::geometry::{point_segment_distance, wrap_signed, Vec2};
use crate::tangent::{
    self, curvature_fixed_point_period, expansion_factor_formula, expansion_factor_closed_form,
    jacobian_numeric, CollisionFactors, HyperbolicSplitting, TangentError, WavefrontState,
    WEAK_HYPERBOLICITY,
};

pub const CLOSURE_TOLERANCE: f64 = 1e-10;
pub const PRIME_PERIOD_TOLERANCE: f64 = 1e-8;
pub const CHORD_CLEARANCE: f64 = 1e-10;
pub const NEWTON_MAX_ITERATIONS: usize = 100;
/// theta below this is reported as weakly hyperbolic.
pub const WEAK_THETA: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrbitError {
    #[error("chord blocked by scatterer {scatterer} at image {image:?}")]
    CorridorBlocked { scatterer: usize, image: [i64; 2] },
    #[error("chord blocked during refinement by scatterer {scatterer} at image {image:?}")]
    ChordBlocked { scatterer: usize, image: [i64; 2] },
    #[error("chord {0} does not leave or enter its scatterers from outside")]
    InvalidChord(usize),
    #[error("Newton iteration did not converge ({iterations} iterations, |grad| = {gradient})")]
    NewtonDiverged { iterations: usize, gradient: f64 },
    #[error("orbit does not close (residual {0})")]
    NotClosed(f64),
    #[error("orbit has smaller period {0}")]
    NotPrimePeriod(usize),
    #[error("invalid orbit request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Tangent(#[from] TangentError),
    #[error(transparent)]
    Billiard(#[from] BilliardError),
}

impl OrbitError {
    fn not_hyperbolic(msg: String) -> Self {
        OrbitError::Tangent(TangentError::NotHyperbolic(msg))
    }
}

/// A closed hyperbolic orbit of the billiard map with its expansion data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub period: usize,
    pub points: Vec<PhasePoint>,
    pub flight_times: Vec<f64>,
    pub factors: Vec<CollisionFactors>,
    pub curvatures: Vec<WavefrontState>,
    /// Product of per-bounce wavefront expansions.
    pub expansion_formula: f64,
    /// `|lambda_max|` of the finite-difference `DT^q` at `points[0]`.
    pub expansion_numeric: f64,
    pub jacobian: tangent::Matrix2,
    pub jacobian_error: f64,
    pub splitting: HyperbolicSplitting,
    pub theta: f64,
    pub closure_residual: f64,
}

fn phase_distance(a: &PhasePoint, b: &PhasePoint, table: &ScattererTable) -> f64 {
    if a.scatterer != b.scatterer {
        return f64::INFINITY;
    }
    let perimeter = table.scatterers()[a.scatterer].perimeter();
    wrap_signed(a.r - b.r, perimeter)
        .abs()
        .max((a.theta - b.theta).abs())
}

impl PeriodicOrbit {
    /// Validate closure and prime period, then run both expansion pipelines.
    pub fn from_points(points: Vec<PhasePoint>, table: &ScattererTable) -> Result<Self, OrbitError> {
        let q = points.len();
        if q == 0 {
            return Err(OrbitError::InvalidRequest("empty orbit".into()));
        }
        let mut flight_times = Vec::with_capacity(q);
        let mut factors = Vec::with_capacity(q);
        let mut residual: f64 = 0.0;
        for (i, x) in points.iter().enumerate() {
            let c = next_collision(x, table)?;
            residual = residual.max(phase_distance(&c.next, &points[(i + 1) % q], table));
            flight_times.push(c.flight_time);
            let k = table.scatterer(x.scatterer)?.curvature();
            factors.push(CollisionFactors::new(c.flight_time, k, x.theta.cos())?);
        }
        if !(residual < CLOSURE_TOLERANCE) {
            return Err(OrbitError::NotClosed(residual));
        }
        for d in 1..q {
            if q.is_multiple_of(d) && phase_distance(&points[d], &points[0], table) < PRIME_PERIOD_TOLERANCE {
                return Err(OrbitError::NotPrimePeriod(d));
            }
        }
        let curvatures = curvature_fixed_point_period(&factors)?;
        let expansion_formula = expansion_factor_formula(&factors, &curvatures)?.total;
        let jac = jacobian_numeric(&points[0], q, table)?;
        let splitting = tangent::hyperbolic_splitting(&jac.matrix)?;
        let expansion_numeric = splitting.lambda_unstable.abs();
        Ok(Self {
            period: q,
            points,
            flight_times,
            factors,
            curvatures,
            expansion_formula,
            expansion_numeric,
            jacobian: jac.matrix,
            jacobian_error: jac.error,
            splitting,
            theta: 1.0 - 1.0 / expansion_numeric,
            closure_residual: residual,
        })
    }

    /// The same orbit traversed backwards: `[R x0, R x_{q-1}, ..., R x1]`.
    pub fn time_reversed(&self, table: &ScattererTable) -> Result<Self, OrbitError> {
        let q = self.period;
        let pts = (0..q)
            .map(|i| crate::billiard::time_reverse(self.points[(q - i) % q]))
            .collect();
        Self::from_points(pts, table)
    }
}

/// Smallest distance from any scatterer image other than `exclude` to the
/// segment `[a, b]`, minus that image's radius. Fails with the offending image.
fn chord_clear(
    table: &ScattererTable,
    a: Vec2,
    b: Vec2,
    exclude: &[(usize, [i64; 2])],
) -> Result<(), (usize, [i64; 2])> {
    let mid = (a + b) * 0.5;
    let half = (b - a).norm() * 0.5;
    for (s, sc) in table.scatterers().iter().enumerate() {
        let (lo, hi) = table.offset_box(sc.center - mid, half + sc.radius + CHORD_CLEARANCE);
        for p in lo[0]..=hi[0] {
            for q in lo[1]..=hi[1] {
                if exclude.contains(&(s, [p, q])) {
                    continue;
                }
                let c = table.image_center(s, [p, q]);
                if point_segment_distance(c, a, b) <= sc.radius + CHORD_CLEARANCE {
                    return Err((s, [p, q]));
                }
            }
        }
    }
    Ok(())
}

fn arc_position(angle: f64, radius: f64) -> f64 {
    let perimeter = 2.0 * PI * radius;
    (angle * radius).rem_euclid(perimeter)
}

/// Period-2 orbit bouncing normally between `scatterer` and its translate by
/// `lattice_vector`.
pub fn find_period2_line_of_centers(
    table: &ScattererTable,
    scatterer: usize,
    lattice_vector: [i64; 2],
) -> Result<PeriodicOrbit, OrbitError> {
    let sc = *table.scatterer(scatterer)?;
    let w = table.lattice_vector(lattice_vector);
    if w.norm() <= 2.0 * sc.radius {
        return Err(OrbitError::InvalidRequest(format!(
            "lattice vector {lattice_vector:?} is not longer than the diameter"
        )));
    }
    let dir = w.normalized();
    let start = sc.center + dir * sc.radius;
    let end = sc.center + w - dir * sc.radius;
    chord_clear(
        table,
        start,
        end,
        &[(scatterer, [0, 0]), (scatterer, lattice_vector)],
    )
    .map_err(|(s, image)| OrbitError::CorridorBlocked { scatterer: s, image })?;
    let points = vec![
        PhasePoint::new(scatterer, arc_position(dir.angle(), sc.radius), 0.0),
        PhasePoint::new(scatterer, arc_position((-dir).angle(), sc.radius), 0.0),
    ];
    PeriodicOrbit::from_points(points, table)
}

/// A boundary position on a specific scatterer image of the universal cover.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySeed {
    pub scatterer: usize,
    pub image: [i64; 2],
    pub r: f64,
}

/// Seed for Newton refinement. The orbit closes on `points[0]` translated by
/// `closing`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSeed {
    pub points: Vec<BoundarySeed>,
    #[serde(default)]
    pub closing: [i64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub gradient_norm: f64,
}

struct ChordGeometry {
    pos: Vec<Vec2>,
    normal: Vec<Vec2>,
    tangent: Vec<Vec2>,
    radius: Vec<f64>,
}

fn chord_geometry(table: &ScattererTable, seed: &OrbitSeed, arcs: &[f64]) -> ChordGeometry {
    let q = seed.points.len();
    let mut g = ChordGeometry {
        pos: Vec::with_capacity(q + 1),
        normal: Vec::with_capacity(q + 1),
        tangent: Vec::with_capacity(q + 1),
        radius: Vec::with_capacity(q + 1),
    };
    for i in 0..=q {
        let bs = &seed.points[i % q];
        let image = if i == q {
            [bs.image[0] + seed.closing[0], bs.image[1] + seed.closing[1]]
        } else {
            bs.image
        };
        let rho = table.scatterers()[bs.scatterer].radius;
        let n = Vec2::from_angle(arcs[i % q] / rho);
        g.pos.push(table.image_center(bs.scatterer, image) + n * rho);
        g.normal.push(n);
        g.tangent.push(n.perp());
        g.radius.push(rho);
    }
    g
}

fn check_seed_chords(table: &ScattererTable, seed: &OrbitSeed, arcs: &[f64]) -> Result<(), OrbitError> {
    let q = seed.points.len();
    let g = chord_geometry(table, seed, arcs);
    for i in 0..q {
        let a = &seed.points[i];
        let b = &seed.points[(i + 1) % q];
        let b_image = if i + 1 == q {
            [b.image[0] + seed.closing[0], b.image[1] + seed.closing[1]]
        } else {
            b.image
        };
        chord_clear(
            table,
            g.pos[i],
            g.pos[i + 1],
            &[(a.scatterer, a.image), (b.scatterer, b_image)],
        )
        .map_err(|(s, image)| OrbitError::ChordBlocked { scatterer: s, image })?;
    }
    Ok(())
}

/// Newton iteration for a critical point of the total chord length over the
/// boundary positions. Stationarity is the reflection law at every bounce.
pub fn refine_orbit_newton(
    seed: &OrbitSeed,
    table: &ScattererTable,
) -> Result<(PeriodicOrbit, NewtonReport), OrbitError> {
    let q = seed.points.len();
    if q < 2 {
        return Err(OrbitError::InvalidRequest("need at least two seed points".into()));
    }
    for bs in &seed.points {
        table.scatterer(bs.scatterer)?;
    }
    let mut arcs: Vec<f64> = seed.points.iter().map(|p| p.r).collect();
    check_seed_chords(table, seed, &arcs)?;

    let mut iterations = 0;
    let mut gradient_norm;
    loop {
        let g = chord_geometry(table, seed, &arcs);
        let mut grad = DVector::<f64>::zeros(q);
        let mut hess = DMatrix::<f64>::zeros(q, q);
        for i in 0..q {
            let j = (i + 1) % q;
            let d = g.pos[i + 1] - g.pos[i];
            let len = d.norm();
            let u = d * (1.0 / len);
            let (ti, tj) = (g.tangent[i], g.tangent[i + 1]);
            let (ni, nj) = (g.normal[i], g.normal[i + 1]);
            let (uti, utj) = (u.dot(ti), u.dot(tj));
            grad[i] -= uti;
            grad[j] += utj;
            hess[(i, i)] += (1.0 - uti * uti) / len + u.dot(ni) / g.radius[i];
            hess[(j, j)] += (1.0 - utj * utj) / len - u.dot(nj) / g.radius[i + 1];
            let mixed = (-ti.dot(tj) + uti * utj) / len;
            hess[(i, j)] += mixed;
            hess[(j, i)] += mixed;
        }
        gradient_norm = grad.amax();
        if gradient_norm < 1e-13 {
            break;
        }
        if iterations >= NEWTON_MAX_ITERATIONS || !gradient_norm.is_finite() {
            return Err(OrbitError::NewtonDiverged {
                iterations,
                gradient: gradient_norm,
            });
        }
        let step = hess.lu().solve(&(-grad)).ok_or(OrbitError::NewtonDiverged {
            iterations,
            gradient: gradient_norm,
        })?;
        for (a, s) in arcs.iter_mut().zip(step.iter()) {
            *a += s;
        }
        iterations += 1;
        if step.amax() < 1e-15 * (1.0 + arcs.iter().fold(0.0f64, |m, a| m.max(a.abs()))) {
            gradient_norm = 0.0;
            break;
        }
    }
    check_seed_chords(table, seed, &arcs)?;

    let g = chord_geometry(table, seed, &arcs);
    let mut points = Vec::with_capacity(q);
    for i in 0..q {
        let u = (g.pos[i + 1] - g.pos[i]).normalized();
        if u.dot(g.normal[i]) <= 0.0 || u.dot(g.normal[i + 1]) >= 0.0 {
            return Err(OrbitError::InvalidChord(i));
        }
        let theta = u.dot(g.tangent[i]).atan2(u.dot(g.normal[i]));
        points.push(PhasePoint::new(
            seed.points[i].scatterer,
            arc_position(arcs[i] / g.radius[i], g.radius[i]),
            theta,
        ));
    }
    let orbit = PeriodicOrbit::from_points(points, table)?;
    Ok((
        orbit,
        NewtonReport {
            iterations,
            gradient_norm,
        },
    ))
}

/// Extremal index with the data that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaRecord {
    pub theta: f64,
    pub expansion_formula: f64,
    pub expansion_numeric: f64,
    /// `|formula - numeric| / formula`.
    pub relative_gap: f64,
    pub weakly_hyperbolic: bool,
}

/// `theta = 1 - 1/lambda`, rejecting `lambda < 1 + 1e-6`.
pub fn theta_from_expansion(lambda: f64) -> Result<(f64, bool), OrbitError> {
    if !(lambda >= WEAK_HYPERBOLICITY) {
        return Err(OrbitError::not_hyperbolic(format!(
            "expansion {lambda} below 1 + 1e-6"
        )));
    }
    let theta = 1.0 - 1.0 / lambda;
    Ok((theta, theta < WEAK_THETA))
}

pub fn extremal_index(orbit: &PeriodicOrbit) -> Result<ThetaRecord, OrbitError> {
    let (theta, weak) = theta_from_expansion(orbit.expansion_numeric)?;
    Ok(ThetaRecord {
        theta,
        expansion_formula: orbit.expansion_formula,
        expansion_numeric: orbit.expansion_numeric,
        relative_gap: (orbit.expansion_formula - orbit.expansion_numeric).abs() / orbit.expansion_formula,
        weakly_hyperbolic: weak,
    })
}

/// One row of the line-of-centers family scan. Blocked rows carry only the
/// vector and status.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRow {
    pub vector: [i64; 2],
    pub status: String,
    pub tau: Option<f64>,
    pub collision_factor: Option<f64>,
    pub curvature_recursion: Option<f64>,
    pub curvature_closed_form: Option<f64>,
    pub expansion_formula: Option<f64>,
    pub expansion_numeric: Option<f64>,
    pub theta_numeric: Option<f64>,
    pub theta_closed_form: Option<f64>,
    pub theta_closed_form_asymptotic: Option<f64>,
    pub closure_residual: Option<f64>,
}

impl FamilyRow {
    fn blocked(vector: [i64; 2], status: String) -> Self {
        Self {
            vector,
            status,
            tau: None,
            collision_factor: None,
            curvature_recursion: None,
            curvature_closed_form: None,
            expansion_formula: None,
            expansion_numeric: None,
            theta_numeric: None,
            theta_closed_form: None,
            theta_closed_form_asymptotic: None,
            closure_residual: None,
        }
    }
}

fn family_row(table: &ScattererTable, scatterer: usize, vector: [i64; 2]) -> FamilyRow {
    let orbit = match find_period2_line_of_centers(table, scatterer, vector) {
        Ok(o) => o,
        Err(OrbitError::CorridorBlocked { .. }) => {
            return FamilyRow::blocked(vector, "corridor_blocked".into())
        }
        Err(e) => return FamilyRow::blocked(vector, format!("error: {e}")),
    };
    let f = orbit.factors[0];
    let chain = expansion_factor_closed_form(f.flight_time, f.collision_factor);
    let theta_numeric = extremal_index(&orbit).map(|t| t.theta).ok();
    FamilyRow {
        vector,
        status: "ok".into(),
        tau: Some(f.flight_time),
        collision_factor: Some(f.collision_factor),
        curvature_recursion: Some(orbit.curvatures[0].curvature),
        curvature_closed_form: Some(chain.curvature),
        expansion_formula: Some(orbit.expansion_formula),
        expansion_numeric: Some(orbit.expansion_numeric),
        theta_numeric,
        theta_closed_form: Some(chain.theta),
        theta_closed_form_asymptotic: Some(chain.theta_asymptotic),
        closure_residual: Some(orbit.closure_residual),
    }
}

/// Evaluate the period-2 family for each lattice vector, in input order.
pub fn infinite_horizon_family(table: &ScattererTable, scatterer: usize, vectors: &[[i64; 2]]) -> Vec<FamilyRow> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        vectors
            .par_iter()
            .map(|v| family_row(table, scatterer, *v))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        vectors.iter().map(|v| family_row(table, scatterer, *v)).collect()
    }
}
