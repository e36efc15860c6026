//! Periodic Lorentz gas: circular scatterers on a planar lattice, the billiard
//! map between consecutive collisions, and its time reversal.
//!
//! Phase coordinates follow the usual convention for dispersing billiards:
//! `r` is arc length along the scatterer boundary (counterclockwise, starting
//! at the rightmost point of the circle) and `theta` is the angle between the
//! outgoing velocity and the outward normal, positive towards the direction of
//! increasing `r`. The invariant measure is `cos(theta) dr dtheta` up to
//! normalization.
//!
//! Collisions are located by walking the lattice cells crossed by the ray in
//! the universal cover. Each cell carries a precomputed list of scatterer
//! images that touch it, so the first hit found whose parameter lies before
//! the cell exit is the first hit along the whole ray.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

/// Collisions closer than this to tangency are rejected.
pub const GRAZING_GUARD: f64 = 1e-8;

/// Minimum gap between any two scatterer images.
pub const OVERLAP_TOLERANCE: f64 = 1e-12;

/// Default unfolding bound, in multiples of the longest lattice basis vector.
pub const DEFAULT_UNFOLD_LATTICE_UNITS: f64 = 1e3;

/// Default bound on `max(|p|, |q|)` for corridor directions `(p, q)`.
pub const DEFAULT_DIRECTION_BOUND: i64 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BilliardError {
    #[error("scatterers {first} and {second} (image offset {offset:?}) overlap or touch")]
    OverlappingScatterers {
        first: usize,
        second: usize,
        offset: [i64; 2],
    },
    #[error("lattice basis is degenerate")]
    DegenerateLattice,
    #[error("table has no scatterers")]
    NoScatterers,
    #[error("scatterer {0} has non-positive or non-finite radius")]
    InvalidRadius(usize),
    #[error("no collision within unfolding radius {0}")]
    HorizonExceeded(f64),
    #[error("grazing collision (|theta| = {0})")]
    GrazingCollision(f64),
    #[error("scatterer index {0} out of range")]
    UnknownScatterer(usize),
}

/// JSON geometry document: `{lattice, scatterers, max_unfold_radius}`.
///
/// `lattice` rows are the two basis vectors. Scatterer centers are Cartesian
/// positions in the same length units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub lattice: [[f64; 2]; 2],
    pub scatterers: Vec<ScattererConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_unfold_radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScattererConfig {
    pub center: [f64; 2],
    pub radius: f64,
}

impl GeometryConfig {
    /// Unit square lattice with one disk at the origin.
    pub fn square_single(radius: f64) -> Self {
        Self {
            lattice: [[1.0, 0.0], [0.0, 1.0]],
            scatterers: vec![ScattererConfig {
                center: [0.0, 0.0],
                radius,
            }],
            max_unfold_radius: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scatterer {
    pub center: Vec2,
    pub radius: f64,
}

impl Scatterer {
    pub fn perimeter(&self) -> f64 {
        2.0 * PI * self.radius
    }

    pub fn curvature(&self) -> f64 {
        1.0 / self.radius
    }
}

/// A point of the collision space: which scatterer, where on it, and the
/// outgoing reflection angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub scatterer: usize,
    pub r: f64,
    pub theta: f64,
}

impl PhasePoint {
    pub const fn new(scatterer: usize, r: f64, theta: f64) -> Self {
        Self {
            scatterer,
            r,
            theta,
        }
    }
}

/// `(r, theta) -> (r, -theta)`.
pub fn time_reverse(x: PhasePoint) -> PhasePoint {
    PhasePoint {
        theta: -x.theta,
        ..x
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionResult {
    pub next: PhasePoint,
    pub flight_time: f64,
    /// Straight flight in the universal cover, in the frame of the start cell.
    pub unfolded_segment: (Vec2, Vec2),
    /// Lattice translate of `next.scatterer` that was hit.
    pub image: [i64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    /// Primitive lattice direction `(p, q)`, meaning `p*e1 + q*e2`.
    pub direction: [i64; 2],
    pub width: f64,
    /// Signed distance from the origin to the strip's center line, measured
    /// along the left normal of the direction, modulo the line spacing.
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub finite: bool,
    pub direction_bound: i64,
    pub corridors: Vec<Corridor>,
}

#[derive(Clone, Debug)]
pub struct ScattererTable {
    basis: [Vec2; 2],
    /// Rows map Cartesian vectors to fractional lattice coordinates.
    inverse: [Vec2; 2],
    scatterers: Vec<Scatterer>,
    max_unfold_radius: f64,
    /// Scatterer images touching the base cell `[0,1)^2`.
    cell_candidates: Vec<(usize, [i64; 2])>,
    total_perimeter: f64,
    horizon: HorizonReport,
}

impl ScattererTable {
    pub fn build(config: &GeometryConfig) -> Result<Self, BilliardError> {
        let basis = [Vec2::from(config.lattice[0]), Vec2::from(config.lattice[1])];
        let det = basis[0].cross(basis[1]);
        let scale = basis[0].norm() * basis[1].norm();
        if !det.is_finite() || det.abs() <= 1e-12 * scale || scale == 0.0 {
            return Err(BilliardError::DegenerateLattice);
        }
        if config.scatterers.is_empty() {
            return Err(BilliardError::NoScatterers);
        }
        // inverse of [e1 e2] (columns) has rows (e2.y, -e2.x)/det, (-e1.y, e1.x)/det
        let inverse = [
            Vec2::new(basis[1].y, -basis[1].x) * (1.0 / det),
            Vec2::new(-basis[0].y, basis[0].x) * (1.0 / det),
        ];
        let mut scatterers = Vec::with_capacity(config.scatterers.len());
        for (i, s) in config.scatterers.iter().enumerate() {
            if !(s.radius.is_finite() && s.radius > 0.0) {
                return Err(BilliardError::InvalidRadius(i));
            }
            scatterers.push(Scatterer {
                center: Vec2::from(s.center),
                radius: s.radius,
            });
        }
        let longest = basis[0].norm().max(basis[1].norm());
        let max_unfold_radius = config
            .max_unfold_radius
            .unwrap_or(DEFAULT_UNFOLD_LATTICE_UNITS * longest);

        let mut table = Self {
            basis,
            inverse,
            total_perimeter: scatterers.iter().map(Scatterer::perimeter).sum(),
            scatterers,
            max_unfold_radius,
            cell_candidates: Vec::new(),
            horizon: HorizonReport {
                finite: true,
                direction_bound: 0,
                corridors: Vec::new(),
            },
        };
        table.check_overlaps()?;
        table.cell_candidates = table.compute_cell_candidates();
        table.horizon = horizon_classify(&table, DEFAULT_DIRECTION_BOUND);
        Ok(table)
    }

    pub fn scatterers(&self) -> &[Scatterer] {
        &self.scatterers
    }

    pub fn scatterer(&self, id: usize) -> Result<&Scatterer, BilliardError> {
        self.scatterers
            .get(id)
            .ok_or(BilliardError::UnknownScatterer(id))
    }

    pub fn basis(&self) -> [Vec2; 2] {
        self.basis
    }

    pub fn cell_area(&self) -> f64 {
        self.basis[0].cross(self.basis[1]).abs()
    }

    pub fn max_unfold_radius(&self) -> f64 {
        self.max_unfold_radius
    }

    pub fn total_perimeter(&self) -> f64 {
        self.total_perimeter
    }

    pub fn horizon(&self) -> &HorizonReport {
        &self.horizon
    }

    /// Same geometry with a different unfolding bound.
    pub fn with_max_unfold_radius(mut self, radius: f64) -> Self {
        self.max_unfold_radius = radius;
        self
    }

    pub fn lattice_vector(&self, offset: [i64; 2]) -> Vec2 {
        self.basis[0] * offset[0] as f64 + self.basis[1] * offset[1] as f64
    }

    pub fn image_center(&self, scatterer: usize, offset: [i64; 2]) -> Vec2 {
        self.scatterers[scatterer].center + self.lattice_vector(offset)
    }

    pub fn fractional(&self, p: Vec2) -> Vec2 {
        Vec2::new(self.inverse[0].dot(p), self.inverse[1].dot(p))
    }

    /// All lattice offsets `o` with `|center + o| <= radius` are contained in
    /// the returned inclusive ranges.
    pub fn offset_box(&self, center: Vec2, radius: f64) -> ([i64; 2], [i64; 2]) {
        let f = self.fractional(center);
        let reach = [
            radius * self.inverse[0].norm(),
            radius * self.inverse[1].norm(),
        ];
        let lo = [
            (-f.x - reach[0]).floor() as i64 - 1,
            (-f.y - reach[1]).floor() as i64 - 1,
        ];
        let hi = [
            (-f.x + reach[0]).ceil() as i64 + 1,
            (-f.y + reach[1]).ceil() as i64 + 1,
        ];
        (lo, hi)
    }

    fn check_overlaps(&self) -> Result<(), BilliardError> {
        for (i, a) in self.scatterers.iter().enumerate() {
            for (j, b) in self.scatterers.iter().enumerate().skip(i) {
                let reach = a.radius + b.radius + OVERLAP_TOLERANCE;
                let d = b.center - a.center;
                let (lo, hi) = self.offset_box(d, reach);
                for p in lo[0]..=hi[0] {
                    for q in lo[1]..=hi[1] {
                        if i == j && p == 0 && q == 0 {
                            continue;
                        }
                        let dist = (d + self.lattice_vector([p, q])).norm();
                        if dist <= reach {
                            return Err(BilliardError::OverlappingScatterers {
                                first: i,
                                second: j,
                                offset: [p, q],
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn distance_to_base_cell(&self, p: Vec2) -> f64 {
        let f = self.fractional(p);
        if (0.0..=1.0).contains(&f.x) && (0.0..=1.0).contains(&f.y) {
            return 0.0;
        }
        let o = Vec2::default();
        let [e1, e2] = self.basis;
        let corners = [o, e1, e1 + e2, e2];
        (0..4)
            .map(|k| crate::geometry::point_segment_distance(p, corners[k], corners[(k + 1) % 4]))
            .fold(f64::INFINITY, f64::min)
    }

    fn compute_cell_candidates(&self) -> Vec<(usize, [i64; 2])> {
        let cell_center = (self.basis[0] + self.basis[1]) * 0.5;
        let cell_reach = (self.basis[0] + self.basis[1])
            .norm()
            .max((self.basis[0] - self.basis[1]).norm())
            * 0.5;
        let mut out = Vec::new();
        for (s, sc) in self.scatterers.iter().enumerate() {
            let (lo, hi) = self.offset_box(sc.center - cell_center, cell_reach + sc.radius);
            for p in lo[0]..=hi[0] {
                for q in lo[1]..=hi[1] {
                    let c = self.image_center(s, [p, q]);
                    if self.distance_to_base_cell(c) <= sc.radius + 1e-9 {
                        out.push((s, [p, q]));
                    }
                }
            }
        }
        out
    }

    /// Position, outward normal and counterclockwise tangent at `(scatterer, r)`
    /// on the base image.
    pub fn boundary_frame(&self, scatterer: usize, r: f64) -> (Vec2, Vec2, Vec2) {
        let sc = &self.scatterers[scatterer];
        let normal = Vec2::from_angle(r / sc.radius);
        (sc.center + normal * sc.radius, normal, normal.perp())
    }

    /// Outgoing unit velocity for a phase point.
    pub fn velocity(&self, x: &PhasePoint) -> Vec2 {
        let (_, n, t) = self.boundary_frame(x.scatterer, x.r);
        let (s, c) = x.theta.sin_cos();
        n * c + t * s
    }

    /// Phase point at `hit` on image `(scatterer, image)` after specular
    /// reflection of incoming velocity `v`.
    pub fn reflect_at(&self, scatterer: usize, image: [i64; 2], hit: Vec2, v: Vec2) -> PhasePoint {
        let sc = &self.scatterers[scatterer];
        let center = self.image_center(scatterer, image);
        let n = (hit - center) * (1.0 / sc.radius);
        let t = n.perp();
        let vn = v.dot(n);
        let out = v - n * (2.0 * vn);
        let theta = out.dot(t).atan2(out.dot(n));
        let perimeter = sc.perimeter();
        let mut r = n.angle() * sc.radius;
        if r < 0.0 {
            r += perimeter;
        }
        if r >= perimeter {
            r -= perimeter;
        }
        PhasePoint::new(scatterer, r, theta)
    }

    fn validate(&self, x: &PhasePoint) -> Result<(), BilliardError> {
        if x.scatterer >= self.scatterers.len() {
            return Err(BilliardError::UnknownScatterer(x.scatterer));
        }
        if !(x.theta.abs() < FRAC_PI_2 - GRAZING_GUARD) {
            return Err(BilliardError::GrazingCollision(x.theta.abs()));
        }
        Ok(())
    }

    /// First scatterer image hit by the ray `p + t v`, `t > 0`, skipping
    /// `exclude`. Returns `(scatterer, image, t)`.
    pub fn cast_ray(
        &self,
        p: Vec2,
        v: Vec2,
        exclude: Option<(usize, [i64; 2])>,
    ) -> Result<(usize, [i64; 2], f64), BilliardError> {
        let f = self.fractional(p);
        let d = self.fractional(v);
        let mut cell = [f.x.floor() as i64, f.y.floor() as i64];
        let mut next = [0.0; 2];
        let mut step = [0.0; 2];
        let mut dir = [0i64; 2];
        for k in 0..2 {
            let (fk, dk) = if k == 0 { (f.x, d.x) } else { (f.y, d.y) };
            if dk > 0.0 {
                next[k] = (cell[k] as f64 + 1.0 - fk) / dk;
                step[k] = 1.0 / dk;
                dir[k] = 1;
            } else if dk < 0.0 {
                next[k] = (cell[k] as f64 - fk) / dk;
                step[k] = -1.0 / dk;
                dir[k] = -1;
            } else {
                next[k] = f64::INFINITY;
                step[k] = f64::INFINITY;
            }
        }

        let mut best: Option<(usize, [i64; 2], f64)> = None;
        loop {
            let t_exit = next[0].min(next[1]);
            for &(s, off) in &self.cell_candidates {
                let image = [off[0] + cell[0], off[1] + cell[1]];
                if exclude == Some((s, image)) {
                    continue;
                }
                let c = self.image_center(s, image);
                if let Some(t) = ray_circle(p, v, c, self.scatterers[s].radius) {
                    if best.is_none_or(|b| t < b.2) {
                        best = Some((s, image, t));
                    }
                }
            }
            if let Some(b) = best {
                if b.2 <= t_exit {
                    return Ok(b);
                }
            }
            if t_exit > self.max_unfold_radius {
                return Err(BilliardError::HorizonExceeded(self.max_unfold_radius));
            }
            if next[0] < next[1] {
                cell[0] += dir[0];
                next[0] += step[0];
            } else {
                cell[1] += dir[1];
                next[1] += step[1];
            }
        }
    }
}

/// Entry parameter of the ray `p + t v` (unit `v`) into the disk `(c, radius)`,
/// using the cancellation-free form of the near root.
#[inline]
pub fn ray_circle(p: Vec2, v: Vec2, c: Vec2, radius: f64) -> Option<f64> {
    let w = p - c;
    let b = v.dot(w);
    if b >= 0.0 {
        return None;
    }
    let cc = w.norm_sq() - radius * radius;
    if cc <= 0.0 {
        return None;
    }
    // b^2 - cc cancels badly for distant near-tangent disks; the squared
    // miss distance of the perpendicular component does not.
    let disc = radius * radius - (w - v * b).norm_sq();
    if disc <= 0.0 {
        return None;
    }
    let far = -b + disc.sqrt();
    Some(cc / far)
}

pub fn next_collision(x: &PhasePoint, table: &ScattererTable) -> Result<CollisionResult, BilliardError> {
    table.validate(x)?;
    let (p, n, t) = table.boundary_frame(x.scatterer, x.r);
    let (s, c) = x.theta.sin_cos();
    let v = n * c + t * s;
    let (hit_s, image, tau) = table.cast_ray(p, v, Some((x.scatterer, [0, 0])))?;
    let end = p + v * tau;
    let next = table.reflect_at(hit_s, image, end, v);
    if !(next.theta.abs() < FRAC_PI_2 - GRAZING_GUARD) {
        return Err(BilliardError::GrazingCollision(next.theta.abs()));
    }
    Ok(CollisionResult {
        next,
        flight_time: tau,
        unfolded_segment: (p, end),
        image,
    })
}

/// The billiard map `T`.
pub fn billiard_map(x: &PhasePoint, table: &ScattererTable) -> Result<PhasePoint, BilliardError> {
    next_collision(x, table).map(|c| c.next)
}

/// `T^{-1}` via time reversal.
pub fn inverse_map(x: &PhasePoint, table: &ScattererTable) -> Result<PhasePoint, BilliardError> {
    billiard_map(&time_reverse(*x), table).map(time_reverse)
}

/// Apply `T` (`steps > 0`) or `T^{-1}` (`steps < 0`) repeatedly.
pub fn iterate(x: &PhasePoint, steps: i64, table: &ScattererTable) -> Result<PhasePoint, BilliardError> {
    let mut y = *x;
    for _ in 0..steps.unsigned_abs() {
        y = if steps > 0 {
            billiard_map(&y, table)?
        } else {
            inverse_map(&y, table)?
        };
    }
    Ok(y)
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Enumerate scatterer-free strips along primitive lattice directions with
/// `max(|p|,|q|) <= bound`.
pub fn horizon_classify(table: &ScattererTable, bound: i64) -> HorizonReport {
    let mut corridors = Vec::new();
    for p in 0..=bound {
        for q in -bound..=bound {
            if (p == 0 && q != 1) || gcd(p, q) != 1 {
                continue;
            }
            corridors.extend(direction_corridors(table, [p, q]));
        }
    }
    HorizonReport {
        finite: corridors.is_empty(),
        direction_bound: bound,
        corridors,
    }
}

/// Corridors parallel to the primitive lattice direction `dir`.
pub fn direction_corridors(table: &ScattererTable, dir: [i64; 2]) -> Vec<Corridor> {
    let w = table.lattice_vector(dir);
    let normal = w.perp().normalized();
    let spacing = table.cell_area() / w.norm();
    let mut intervals = Vec::with_capacity(table.scatterers.len());
    for sc in &table.scatterers {
        if 2.0 * sc.radius >= spacing {
            return Vec::new();
        }
        let y = sc.center.dot(normal).rem_euclid(spacing);
        intervals.push((y - sc.radius, y + sc.radius));
    }
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut reach = intervals[0].1;
    for &(lo, hi) in &intervals[1..] {
        if lo > reach {
            out.push(Corridor {
                direction: dir,
                width: lo - reach,
                offset: 0.5 * (lo + reach),
            });
        }
        reach = reach.max(hi);
    }
    let wrap_gap = intervals[0].0 + spacing - reach;
    if wrap_gap > 0.0 {
        out.push(Corridor {
            direction: dir,
            width: wrap_gap,
            offset: (0.5 * (reach + intervals[0].0 + spacing)).rem_euclid(spacing),
        });
    }
    out
}

/// One step of a trajectory: the collision point and the free flight that
/// leaves it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub point: PhasePoint,
    pub flight_time: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("trajectory aborted at step {index}: {source}")]
pub struct TrajectoryError {
    pub index: u64,
    #[source]
    pub source: BilliardError,
}

/// Lazy stream of `n_steps` collisions starting at `x0`.
pub struct Trajectory<'a> {
    table: &'a ScattererTable,
    current: PhasePoint,
    index: u64,
    remaining: u64,
    failed: bool,
}

pub fn sample_trajectory(x0: PhasePoint, n_steps: u64, table: &ScattererTable) -> Trajectory<'_> {
    Trajectory {
        table,
        current: x0,
        index: 0,
        remaining: n_steps,
        failed: false,
    }
}

impl Iterator for Trajectory<'_> {
    type Item = Result<TrajectoryStep, TrajectoryError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 || self.failed {
            return None;
        }
        match next_collision(&self.current, self.table) {
            Ok(c) => {
                let step = TrajectoryStep {
                    point: self.current,
                    flight_time: c.flight_time,
                };
                self.current = c.next;
                self.index += 1;
                self.remaining -= 1;
                Some(Ok(step))
            }
            Err(source) => {
                self.failed = true;
                Some(Err(TrajectoryError {
                    index: self.index,
                    source,
                }))
            }
        }
    }
}

/// Draw a phase point from the invariant measure: scatterer weighted by
/// perimeter, `r` uniform, `sin(theta)` uniform on `(-1, 1)`.
pub fn sample_invariant_point<R: Rng + ?Sized>(table: &ScattererTable, rng: &mut R) -> PhasePoint {
    loop {
        let mut pick = rng.random::<f64>() * table.total_perimeter;
        let mut scatterer = table.scatterers.len() - 1;
        for (i, sc) in table.scatterers.iter().enumerate() {
            if pick < sc.perimeter() {
                scatterer = i;
                break;
            }
            pick -= sc.perimeter();
        }
        let perimeter = table.scatterers[scatterer].perimeter();
        let r = (rng.random::<f64>() * perimeter).min(perimeter * (1.0 - f64::EPSILON));
        let theta = (2.0 * rng.random::<f64>() - 1.0).asin();
        if theta.abs() < FRAC_PI_2 - GRAZING_GUARD {
            return PhasePoint::new(scatterer, r, theta);
        }
    }
}
