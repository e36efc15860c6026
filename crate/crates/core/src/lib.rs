//! Dispersing billiards and extreme value statistics at periodic orbits.
//!
//! The crate simulates the periodic Lorentz gas with circular scatterers,
//! computes the unstable expansion `|DT^q_u|` of periodic orbits both through
//! wavefront curvature and through a finite-difference Jacobian, and checks the
//! resulting extremal index `theta = 1 - 1/|DT^q_u|` against trajectory
//! statistics: block maxima, rare event point process counts (Pólya-Aeppli)
//! and runs-declustered cluster sizes (geometric).
//!
//! Module map:
//! - [`billiard`]: table geometry, the billiard map, time reversal, horizon.
//! - [`tangent`]: curvature recursion, expansion factors, numeric Jacobian.
//! - [`orbits`]: periodic orbit construction, refinement and extremal index.
//! - [`evt`]: adapted chart, observable, thresholds and estimators.
//! - [`compound_poisson`]: Pólya-Aeppli pmf/cdf, sampler, goodness of fit.

pub mod billiard;
pub mod compound_poisson;
pub mod evt;
pub mod geometry;
pub mod orbits;
pub mod stats;
pub mod tangent;

pub use billiard::{
    billiard_map, inverse_map, next_collision, sample_trajectory, time_reverse, BilliardError,
    GeometryConfig, PhasePoint, ScattererConfig, ScattererTable,
};
pub use orbits::{extremal_index, find_period2_line_of_centers, PeriodicOrbit};
