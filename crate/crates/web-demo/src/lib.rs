//! wasm-bindgen wrappers for the static page in `www/`. Results cross the
//! boundary as JSON strings.

use billiard_evt::billiard::{iterate, next_collision, sample_invariant_point, GeometryConfig, ScattererTable};
use billiard_evt::compound_poisson::{histogram, polya_aeppli_pmf, sample_compound_poisson, PolyaAeppliParams};
use billiard_evt::orbits::{infinite_horizon_family, FamilyRow};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_STEPS: u32 = 20_000;
const MAX_DRAWS: u32 = 2_000_000;

#[derive(Serialize)]
pub struct TrajectoryOut {
    pub radius: f64,
    /// Collision positions in the plane, starting in the home cell.
    pub path: Vec<[f64; 2]>,
    pub theta: Vec<f64>,
    pub flight_time: Vec<f64>,
}

fn table(radius: f64) -> Result<ScattererTable, String> {
    ScattererTable::build(&GeometryConfig::square_single(radius)).map_err(|e| e.to_string())
}

pub fn trajectory_data(radius: f64, steps: u32, seed: u64) -> Result<TrajectoryOut, String> {
    let table = table(radius)?;
    let steps = steps.min(MAX_STEPS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = iterate(&sample_invariant_point(&table, &mut rng), 100, &table).map_err(|e| e.to_string())?;
    let mut cell = [0i64; 2];
    let mut out = TrajectoryOut { radius, path: Vec::new(), theta: Vec::new(), flight_time: Vec::new() };
    for i in 0..steps {
        let c = next_collision(&x, &table).map_err(|e| e.to_string())?;
        let shift = table.lattice_vector(cell);
        if i == 0 {
            out.path.push((shift + c.unfolded_segment.0).to_array());
            out.theta.push(x.theta);
        }
        out.path.push((shift + c.unfolded_segment.1).to_array());
        out.theta.push(c.next.theta);
        out.flight_time.push(c.flight_time);
        cell = [cell[0] + c.image[0], cell[1] + c.image[1]];
        x = c.next;
    }
    Ok(out)
}

#[derive(Serialize)]
pub struct PmfOut {
    pub exact: Vec<f64>,
    pub empirical: Vec<f64>,
    pub mean_cluster: f64,
}

pub fn pmf_data(theta: f64, t: f64, k_max: u32, draws: u32, seed: u64) -> Result<PmfOut, String> {
    let p = PolyaAeppliParams::new(theta, t).map_err(|e| e.to_string())?;
    let draws = draws.min(MAX_DRAWS) as usize;
    let counts = histogram(&sample_compound_poisson(&p, seed, draws));
    let ks = 0..=k_max as u64;
    Ok(PmfOut {
        exact: ks.clone().map(|k| polya_aeppli_pmf(&p, k)).collect(),
        empirical: ks
            .map(|k| counts.get(k as usize).map_or(0.0, |&c| c as f64 / draws.max(1) as f64))
            .collect(),
        mean_cluster: 1.0 / theta,
    })
}

pub fn family_data(radius: f64, max_component: u32) -> Result<Vec<FamilyRow>, String> {
    let table = table(radius)?.with_max_unfold_radius(1e4);
    let m = max_component.clamp(1, 6) as i64;
    let mut vectors = Vec::new();
    for p in 0..=m {
        for q in 0..=m {
            if (p, q) != (0, 0) && gcd(p, q) == 1 {
                vectors.push([p, q]);
            }
        }
    }
    Ok(infinite_horizon_family(&table, 0, &vectors))
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

/// Collisions of one trajectory started from the invariant measure.
#[wasm_bindgen]
pub fn trajectory(radius: f64, steps: u32, seed: u32) -> Result<String, JsValue> {
    to_js(trajectory_data(radius, steps, seed.into()))
}

/// Pólya-Aeppli pmf next to sampler frequencies.
#[wasm_bindgen]
pub fn polya_aeppli(theta: f64, t: f64, k_max: u32, draws: u32, seed: u32) -> Result<String, JsValue> {
    to_js(pmf_data(theta, t, k_max, draws, seed.into()))
}

/// Period-2 line-of-centers orbits for primitive vectors up to `max_component`.
#[wasm_bindgen]
pub fn orbit_family(radius: f64, max_component: u32) -> Result<String, JsValue> {
    to_js(family_data(radius, max_component))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_has_one_more_point_than_flights() {
        let t = trajectory_data(0.3, 200, 1).unwrap();
        assert_eq!(t.path.len(), 201);
        assert_eq!(t.flight_time.len(), 200);
        // consecutive points are one flight apart
        for (w, tau) in t.path.windows(2).zip(&t.flight_time) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            assert!((d - tau).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_radius_is_an_error() {
        assert!(trajectory_data(0.7, 10, 1).is_err());
    }

    #[test]
    fn pmf_matches_exact_zero_term() {
        let p = pmf_data(0.5, 1.0, 10, 0, 0).unwrap();
        assert_eq!(p.exact[0], (-0.5f64).exp());
        assert!(p.empirical.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn family_contains_the_horizontal_orbit() {
        let rows = family_data(0.3, 2).unwrap();
        let h = rows.iter().find(|r| r.vector == [1, 0]).unwrap();
        assert!((h.theta_numeric.unwrap() - 0.9493082760794024).abs() < 1e-9);
    }
}
