use std::path::Path;

use anyhow::{bail, Context};
use billiard_evt::billiard::{iterate, sample_invariant_point, sample_trajectory, GeometryConfig, ScattererTable};
use billiard_evt::compound_poisson::{
    goodness_of_fit, histogram, polya_aeppli_pmf, sample_compound_poisson, FitReport, PolyaAeppliParams,
};
use billiard_evt::orbits::{find_period2_line_of_centers, infinite_horizon_family, FamilyRow, PeriodicOrbit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::output::{fmt_f64, fmt_opt, read_json, Table, SCHEMA_VERSION};
use crate::pipeline::{OrbitDescriptor, ThetaSummary};

/// Geometry from either a bare table config or a full experiment config.
pub fn load_geometry(path: &Path) -> anyhow::Result<GeometryConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(g) = serde_json::from_str::<GeometryConfig>(&text) {
        return Ok(g);
    }
    #[derive(Deserialize)]
    struct WithGeometry {
        geometry: GeometryConfig,
    }
    let w: WithGeometry = serde_json::from_str(&text)
        .with_context(|| format!("{} is neither a geometry nor an experiment config", path.display()))?;
    Ok(w.geometry)
}

pub fn parse_vector(s: &str) -> anyhow::Result<[i64; 2]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("expected a lattice vector p,q, got {s:?}");
    }
    Ok([parts[0].parse()?, parts[1].parse()?])
}

/// Collisions from an invariant-measure start: `step,scatterer_id,r,theta,flight_time`.
pub fn simulate(geometry: &GeometryConfig, steps: u64, seed: u64, burn_in: u64) -> anyhow::Result<Vec<u8>> {
    let table = ScattererTable::build(geometry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = iterate(&sample_invariant_point(&table, &mut rng), burn_in as i64, &table).context("burn-in")?;
    let mut t = Table::new(&["step", "scatterer_id", "r", "theta", "flight_time"]);
    for (i, step) in sample_trajectory(x0, steps, &table).enumerate() {
        let s = step?;
        t.row([
            i.to_string(),
            s.point.scatterer.to_string(),
            fmt_f64(s.point.r),
            fmt_f64(s.point.theta),
            fmt_f64(s.flight_time),
        ]);
    }
    Ok(t.into_bytes())
}

pub fn find_orbit(geometry: &GeometryConfig, scatterer: usize, vector: [i64; 2]) -> anyhow::Result<OrbitDescriptor> {
    let table = ScattererTable::build(geometry)?;
    let orbit = find_period2_line_of_centers(&table, scatterer, vector)?;
    Ok(OrbitDescriptor { schema_version: SCHEMA_VERSION, geometry: geometry.clone(), orbit })
}

/// Rebuild the orbit from its points on its own table and report every theta.
pub fn theta(path: &Path) -> anyhow::Result<ThetaSummary> {
    let d: OrbitDescriptor = read_json(path)?;
    let table = ScattererTable::build(&d.geometry)?;
    let orbit = PeriodicOrbit::from_points(d.orbit.points, &table).context("re-validating the stored orbit")?;
    ThetaSummary::of(&orbit)
}

pub struct PolyaAeppliOutput {
    pub csv: Vec<u8>,
    pub fit: Option<FitReport>,
}

/// `k,exact_pmf,empirical_freq` for `k = 0..=k_max`; the empirical column
/// comes from `draws` sampler draws (empty when `draws = 0`).
pub fn polya_aeppli(theta: f64, t: f64, k_max: u64, draws: usize, seed: u64) -> anyhow::Result<PolyaAeppliOutput> {
    let p = PolyaAeppliParams::new(theta, t)?;
    let counts = (draws > 0).then(|| histogram(&sample_compound_poisson(&p, seed, draws)));
    let mut table = Table::new(&["k", "exact_pmf", "empirical_freq"]);
    for k in 0..=k_max {
        let freq = counts.as_ref().map(|c| c.get(k as usize).copied().unwrap_or(0) as f64 / draws as f64);
        table.row([k.to_string(), fmt_f64(polya_aeppli_pmf(&p, k)), fmt_opt(freq)]);
    }
    let fit = counts.map(|c| goodness_of_fit(&c, &p)).transpose()?;
    Ok(PolyaAeppliOutput { csv: table.into_bytes(), fit })
}

/// Vectors as a JSON array of pairs or as `p,q` lines.
pub fn load_vectors(path: &Path) -> anyhow::Result<Vec<[i64; 2]>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(v) = serde_json::from_str::<Vec<[i64; 2]>>(&text) {
        return Ok(v);
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#') && *l != "p,q")
        .map(parse_vector)
        .collect()
}

pub fn family_csv(rows: &[FamilyRow]) -> Vec<u8> {
    let mut t = Table::new(&[
        "p",
        "q",
        "status",
        "tau",
        "collision_factor",
        "curvature_recursion",
        "curvature_closed_form",
        "expansion_formula",
        "expansion_numeric",
        "theta_numeric",
        "theta_closed_form",
        "theta_closed_form_asymptotic",
        "closure_residual",
    ]);
    for r in rows {
        t.row([
            r.vector[0].to_string(),
            r.vector[1].to_string(),
            r.status.clone(),
            fmt_opt(r.tau),
            fmt_opt(r.collision_factor),
            fmt_opt(r.curvature_recursion),
            fmt_opt(r.curvature_closed_form),
            fmt_opt(r.expansion_formula),
            fmt_opt(r.expansion_numeric),
            fmt_opt(r.theta_numeric),
            fmt_opt(r.theta_closed_form),
            fmt_opt(r.theta_closed_form_asymptotic),
            fmt_opt(r.closure_residual),
        ]);
    }
    t.into_bytes()
}

pub fn infinite_horizon_scan(geometry: &GeometryConfig, vectors: &[[i64; 2]]) -> anyhow::Result<Vec<u8>> {
    let table = ScattererTable::build(geometry)?;
    Ok(family_csv(&infinite_horizon_family(&table, 0, vectors)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_parse_in_both_forms() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        std::fs::write(&a, "[[1,0],[2,-1]]").unwrap();
        let b = dir.path().join("b.csv");
        std::fs::write(&b, "p,q\n1,0\n 2, -1\n").unwrap();
        assert_eq!(load_vectors(&a).unwrap(), vec![[1, 0], [2, -1]]);
        assert_eq!(load_vectors(&b).unwrap(), vec![[1, 0], [2, -1]]);
        assert!(parse_vector("1").is_err());
    }

    #[test]
    fn simulate_is_seeded() {
        let g = GeometryConfig::square_single(0.3);
        let a = simulate(&g, 50, 4, 10).unwrap();
        assert_eq!(a, simulate(&g, 50, 4, 10).unwrap());
        assert_ne!(a, simulate(&g, 50, 5, 10).unwrap());
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 51);
    }

    #[test]
    fn pmf_table_without_draws_has_empty_column() {
        let out = polya_aeppli(0.5, 1.0, 3, 0, 0).unwrap();
        let text = String::from_utf8(out.csv).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(','));
        assert!(out.fit.is_none());
    }
}
