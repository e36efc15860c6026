//! Linearized billiard dynamics.
//!
//! Two independent routes to the unstable expansion of a periodic orbit:
//! the wavefront curvature recursion (collision `B+ = B- + R`, free flight
//! `B -> B / (1 + tau B)`) and a finite-difference Jacobian of `T^q` in
//! `(r, theta)` coordinates. The closed-form chain for period-2 orbits from the
//! infinite-horizon literature is evaluated verbatim alongside them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::billiard::{next_collision, BilliardError, PhasePoint, ScattererTable};
use crate::geometry::wrap_signed;

/// Orbits with `|lambda_max|` below this are treated as not hyperbolic.
pub const WEAK_HYPERBOLICITY: f64 = 1.0 + 1e-6;

pub const FIXED_POINT_TOLERANCE: f64 = 1e-14;
pub const FIXED_POINT_MAX_PERIODS: usize = 100_000;

/// Relative finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;
pub const MIN_FD_STEP: f64 = 1e-9;

const STENCIL_ITINERARY: &str = "stencil point follows a different itinerary";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TangentError {
    #[error("wavefront curvature must be positive, got {0}")]
    NonPositiveCurvature(f64),
    #[error("invalid collision factors: {0}")]
    InvalidFactors(&'static str),
    #[error("curvature recursion did not converge after {0} periods")]
    NoConvergence(usize),
    #[error("singularity inside the finite-difference stencil: {0}")]
    SingularityNearby(String),
    #[error("not hyperbolic: {0}")]
    NotHyperbolic(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavefrontPhase {
    PreCollision,
    PostCollision,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavefrontState {
    pub curvature: f64,
    pub phase: WavefrontPhase,
}

impl WavefrontState {
    pub fn pre(curvature: f64) -> Self {
        Self {
            curvature,
            phase: WavefrontPhase::PreCollision,
        }
    }

    pub fn post(curvature: f64) -> Self {
        Self {
            curvature,
            phase: WavefrontPhase::PostCollision,
        }
    }
}

/// Data of one collision followed by one free flight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionFactors {
    /// Free path after the collision.
    pub flight_time: f64,
    /// `R = 2K / cos(theta)`.
    pub collision_factor: f64,
    pub curvature: f64,
    pub cos_theta: f64,
}

impl CollisionFactors {
    pub fn new(flight_time: f64, curvature: f64, cos_theta: f64) -> Result<Self, TangentError> {
        if !(flight_time.is_finite() && flight_time >= 0.0) {
            return Err(TangentError::InvalidFactors("flight time"));
        }
        if !(curvature.is_finite() && curvature > 0.0) {
            return Err(TangentError::InvalidFactors("curvature"));
        }
        if !(cos_theta > 0.0 && cos_theta <= 1.0) {
            return Err(TangentError::InvalidFactors("cos(theta)"));
        }
        Ok(Self {
            flight_time,
            collision_factor: 2.0 * curvature / cos_theta,
            curvature,
            cos_theta,
        })
    }

    /// Factors given directly by `(tau, R)`, as for a normal-incidence bounce
    /// (`cos(theta) = 1`, `K = R / 2`). `R = 0` is allowed and means a pure
    /// free flight.
    pub fn from_tau_r(flight_time: f64, collision_factor: f64) -> Result<Self, TangentError> {
        if !(flight_time.is_finite() && flight_time >= 0.0) {
            return Err(TangentError::InvalidFactors("flight time"));
        }
        if !(collision_factor.is_finite() && collision_factor >= 0.0) {
            return Err(TangentError::InvalidFactors("collision factor"));
        }
        Ok(Self {
            flight_time,
            collision_factor,
            curvature: collision_factor / 2.0,
            cos_theta: 1.0,
        })
    }
}

/// Result of one collision plus free flight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureStep {
    pub post: WavefrontState,
    pub next_pre: WavefrontState,
}

pub fn curvature_step(b_pre: WavefrontState, f: &CollisionFactors) -> Result<CurvatureStep, TangentError> {
    if !(b_pre.curvature > 0.0 && b_pre.curvature.is_finite()) {
        return Err(TangentError::NonPositiveCurvature(b_pre.curvature));
    }
    let post = b_pre.curvature + f.collision_factor;
    let next = post / (1.0 + f.flight_time * post);
    Ok(CurvatureStep {
        post: WavefrontState::post(post),
        next_pre: WavefrontState::pre(next),
    })
}

/// Pre-collision curvatures invariant under one period of the recursion.
pub fn curvature_fixed_point_period(factors: &[CollisionFactors]) -> Result<Vec<WavefrontState>, TangentError> {
    if factors.is_empty() {
        return Err(TangentError::InvalidFactors("empty orbit"));
    }
    let period = |b0: f64| -> Result<f64, TangentError> {
        let mut b = WavefrontState::pre(b0);
        for f in factors {
            b = curvature_step(b, f)?.next_pre;
        }
        Ok(b.curvature)
    };
    let mut b = 1.0;
    let mut converged = false;
    for _ in 0..FIXED_POINT_MAX_PERIODS {
        let next = period(b)?;
        let change = (next - b).abs() / next.abs();
        b = next;
        if change < FIXED_POINT_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(TangentError::NoConvergence(FIXED_POINT_MAX_PERIODS));
    }
    let mut out = Vec::with_capacity(factors.len());
    let mut state = WavefrontState::pre(b);
    for f in factors {
        out.push(state);
        state = curvature_step(state, f)?.next_pre;
    }
    Ok(out)
}

/// Positive root of `tau B^2 + tau R B - R = 0`, the fixed point of a single
/// repeated `(tau, R)` factor.
pub fn single_factor_fixed_point(tau: f64, r: f64) -> f64 {
    0.5 * r * ((1.0 + 4.0 / (r * tau)).sqrt() - 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    /// `1 + tau_i B+_i` for each collision.
    pub per_bounce: Vec<f64>,
    /// Product over the period.
    pub total: f64,
}

pub fn expansion_factor_formula(
    factors: &[CollisionFactors],
    curvatures: &[WavefrontState],
) -> Result<Expansion, TangentError> {
    if factors.len() != curvatures.len() || factors.is_empty() {
        return Err(TangentError::InvalidFactors("factor/curvature length mismatch"));
    }
    let per_bounce: Vec<f64> = factors
        .iter()
        .zip(curvatures)
        .map(|(f, b)| 1.0 + f.flight_time * (b.curvature + f.collision_factor))
        .collect();
    let total = per_bounce.iter().product();
    Ok(Expansion { per_bounce, total })
}

/// Closed-form period-2 chain of the infinite-horizon calculation,
/// evaluated without correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormChain {
    /// `R (sqrt(1 + 4/(R tau)) - 1)`.
    pub curvature: f64,
    /// `(1 + tau B)^(-2/tau)`.
    pub one_minus_theta: f64,
    pub theta: f64,
    /// `1 - 3^(-2/tau)`.
    pub theta_asymptotic: f64,
}

pub fn expansion_factor_closed_form(tau: f64, r: f64) -> ClosedFormChain {
    let curvature = r * ((1.0 + 4.0 / (r * tau)).sqrt() - 1.0);
    let one_minus_theta = (1.0 + tau * curvature).powf(-2.0 / tau);
    ClosedFormChain {
        curvature,
        one_minus_theta,
        theta: 1.0 - one_minus_theta,
        theta_asymptotic: closed_form_theta_asymptotic(tau),
    }
}

pub fn closed_form_theta_asymptotic(tau: f64) -> f64 {
    1.0 - 3f64.powf(-2.0 / tau)
}

/// One audit line of the curvature pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureAudit {
    pub tau: f64,
    pub collision_factor: f64,
    pub b_pre: f64,
    pub b_post: f64,
    pub factor: f64,
}

pub fn curvature_audit(factors: &[CollisionFactors], curvatures: &[WavefrontState]) -> Vec<CurvatureAudit> {
    factors
        .iter()
        .zip(curvatures)
        .map(|(f, b)| {
            let post = b.curvature + f.collision_factor;
            CurvatureAudit {
                tau: f.flight_time,
                collision_factor: f.collision_factor,
                b_pre: b.curvature,
                b_post: post,
                factor: 1.0 + f.flight_time * post,
            }
        })
        .collect()
}

pub type Matrix2 = [[f64; 2]; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianEstimate {
    /// `d(r', theta') / d(r, theta)`, rows are outputs.
    pub matrix: Matrix2,
    /// Richardson error estimate, max over entries.
    pub error: f64,
}

pub fn determinant(m: &Matrix2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

type Itinerary = Vec<(usize, [i64; 2])>;

fn iterate_with_itinerary(
    x: &PhasePoint,
    q: usize,
    table: &ScattererTable,
) -> Result<(PhasePoint, Itinerary), BilliardError> {
    let mut y = *x;
    let mut path = Vec::with_capacity(q);
    for _ in 0..q {
        let c = next_collision(&y, table)?;
        path.push((c.next.scatterer, c.image));
        y = c.next;
    }
    Ok((y, path))
}

/// [`jacobian_numeric_with_step`] at [`DEFAULT_FD_STEP`]. Strongly expanding
/// orbits can throw the stencil onto another itinerary; the step is then
/// reduced tenfold, down to [`MIN_FD_STEP`].
pub fn jacobian_numeric(x: &PhasePoint, q: usize, table: &ScattererTable) -> Result<JacobianEstimate, TangentError> {
    let mut step = DEFAULT_FD_STEP;
    loop {
        match jacobian_numeric_with_step(x, q, table, step) {
            Err(TangentError::SingularityNearby(msg)) if msg == STENCIL_ITINERARY && step > MIN_FD_STEP => {
                step /= 10.0;
            }
            other => return other,
        }
    }
}

/// Central differences at steps `h` and `h/2` with `h = step (1 + |coordinate|)`,
/// combined by Richardson extrapolation.
pub fn jacobian_numeric_with_step(
    x: &PhasePoint,
    q: usize,
    table: &ScattererTable,
    step: f64,
) -> Result<JacobianEstimate, TangentError> {
    if q == 0 {
        return Ok(JacobianEstimate {
            matrix: [[1.0, 0.0], [0.0, 1.0]],
            error: 0.0,
        });
    }
    let singular = |e: BilliardError| TangentError::SingularityNearby(e.to_string());
    let (_, base_path) = iterate_with_itinerary(x, q, table).map_err(singular)?;
    let eval = |dr: f64, dtheta: f64| -> Result<PhasePoint, TangentError> {
        let p = PhasePoint::new(x.scatterer, x.r + dr, x.theta + dtheta);
        let (y, path) = iterate_with_itinerary(&p, q, table).map_err(singular)?;
        if path != base_path {
            return Err(TangentError::SingularityNearby(STENCIL_ITINERARY.into()));
        }
        Ok(y)
    };
    let out_scatterer = base_path.last().map(|p| p.0).unwrap_or(x.scatterer);
    let perimeter = table.scatterers()[out_scatterer].perimeter();

    let central = |h: [f64; 2]| -> Result<Matrix2, TangentError> {
        let mut m = [[0.0; 2]; 2];
        for j in 0..2 {
            let (dr, dt) = if j == 0 { (h[0], 0.0) } else { (0.0, h[1]) };
            let plus = eval(dr, dt)?;
            let minus = eval(-dr, -dt)?;
            let width = 2.0 * h[j];
            m[0][j] = wrap_signed(plus.r - minus.r, perimeter) / width;
            m[1][j] = (plus.theta - minus.theta) / width;
        }
        Ok(m)
    };
    let h = [step * (1.0 + x.r.abs()), step * (1.0 + x.theta.abs())];
    let coarse = central(h)?;
    let fine = central([h[0] / 2.0, h[1] / 2.0])?;
    let mut matrix = [[0.0; 2]; 2];
    let mut error: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            matrix[i][j] = (4.0 * fine[i][j] - coarse[i][j]) / 3.0;
            error = error.max((fine[i][j] - coarse[i][j]).abs() / 3.0);
        }
    }
    Ok(JacobianEstimate { matrix, error })
}

/// Eigen-splitting of a hyperbolic 2x2 matrix. Directions are unit vectors in
/// `(r, theta)` coordinates with non-negative `r` component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicSplitting {
    pub lambda_unstable: f64,
    pub lambda_stable: f64,
    pub unstable: [f64; 2],
    pub stable: [f64; 2],
}

fn eigenvector(m: &Matrix2, lambda: f64) -> [f64; 2] {
    let a = [m[0][1], lambda - m[0][0]];
    let b = [lambda - m[1][1], m[1][0]];
    let na = a[0].hypot(a[1]);
    let nb = b[0].hypot(b[1]);
    let (v, n) = if na >= nb { (a, na) } else { (b, nb) };
    let mut v = [v[0] / n, v[1] / n];
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        v = [-v[0], -v[1]];
    }
    v
}

pub fn hyperbolic_splitting(m: &Matrix2) -> Result<HyperbolicSplitting, TangentError> {
    let tr = m[0][0] + m[1][1];
    let det = determinant(m);
    let disc = tr * tr - 4.0 * det;
    if !(disc > 0.0) {
        return Err(TangentError::NotHyperbolic(format!(
            "complex eigenvalues (trace {tr}, det {det})"
        )));
    }
    let big = 0.5 * (tr + tr.signum() * disc.sqrt());
    let small = det / big;
    if big.abs() < WEAK_HYPERBOLICITY {
        return Err(TangentError::NotHyperbolic(format!(
            "|lambda_max| = {} is too close to 1",
            big.abs()
        )));
    }
    Ok(HyperbolicSplitting {
        lambda_unstable: big,
        lambda_stable: small,
        unstable: eigenvector(m, big),
        stable: eigenvector(m, small),
    })
}

/// Numeric unstable/stable splitting of `DT^q` at `zeta`.
pub fn unstable_direction_numeric(
    zeta: &PhasePoint,
    q: usize,
    table: &ScattererTable,
) -> Result<HyperbolicSplitting, TangentError> {
    let jac = jacobian_numeric(zeta, q, table)?;
    hyperbolic_splitting(&jac.matrix)
}
