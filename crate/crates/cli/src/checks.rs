//! Pass/fail checks shared by `evt`, `selftest` and the acceptance suite.

use std::f64::consts::FRAC_PI_2;

use anyhow::Context;
use billiard_evt::billiard::{iterate, next_collision, sample_invariant_point, ScattererTable};
use billiard_evt::compound_poisson::{
    histogram, polya_aeppli_pmf, sample_compound_poisson, support_cutoff, total_variation, PolyaAeppliParams,
};
use billiard_evt::orbits::{find_period2_line_of_centers, theta_from_expansion};
use billiard_evt::tangent::expansion_factor_closed_form;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub const MEASURE_BINS: usize = 90;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub steps: u64,
    /// `sum |empirical density - cos(theta)/2| * width` over the bins.
    pub l1_error: f64,
    /// Fraction of collisions with `|theta| <= pi/6`.
    pub central_mass: f64,
    pub restarts: u64,
}

/// Angle histogram of `segments` trajectories of `segment_len` collisions
/// each, started from the invariant measure after `burn_in` collisions.
pub fn measure_preservation(
    table: &ScattererTable,
    seed: u64,
    segments: u64,
    segment_len: u64,
    burn_in: u64,
) -> anyhow::Result<MeasureReport> {
    let width = std::f64::consts::PI / MEASURE_BINS as f64;
    let run = |stream: u64| -> anyhow::Result<(Vec<u64>, u64, u64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut restarts = 0;
        'attempt: loop {
            let mut bins = vec![0u64; MEASURE_BINS];
            let mut central = 0u64;
            let Ok(mut x) = iterate(&sample_invariant_point(table, &mut rng), burn_in as i64, table) else {
                restarts += 1;
                continue;
            };
            for _ in 0..segment_len {
                let k = (((x.theta + FRAC_PI_2) / width) as usize).min(MEASURE_BINS - 1);
                bins[k] += 1;
                if x.theta.abs() <= std::f64::consts::FRAC_PI_6 {
                    central += 1;
                }
                match next_collision(&x, table) {
                    Ok(c) => x = c.next,
                    Err(_) if restarts < 1000 => {
                        restarts += 1;
                        continue 'attempt;
                    }
                    Err(e) => return Err(e).context("measure run"),
                }
            }
            return Ok((bins, central, restarts));
        }
    };
    let parts: Vec<_> = (0..segments).into_par_iter().map(run).collect::<anyhow::Result<_>>()?;
    let mut bins = vec![0u64; MEASURE_BINS];
    let (mut central, mut restarts) = (0u64, 0u64);
    for (b, c, r) in parts {
        bins.iter_mut().zip(&b).for_each(|(t, x)| *t += x);
        central += c;
        restarts += r;
    }
    let n = (segments * segment_len) as f64;
    let l1_error = bins
        .iter()
        .enumerate()
        .map(|(k, &count)| {
            let lo = -FRAC_PI_2 + k as f64 * width;
            let exact = 0.5 * ((lo + width).sin() - lo.sin());
            (count as f64 / n - exact).abs()
        })
        .sum();
    Ok(MeasureReport { steps: segments * segment_len, l1_error, central_mass: central as f64 / n, restarts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationRow {
    pub vector: [i64; 2],
    pub expansion_formula: f64,
    pub expansion_numeric: f64,
    pub relative_gap: f64,
}

/// Curvature product against the finite-difference Jacobian on line-of-centers
/// orbits of one table.
pub fn jacobian_arbitration(table: &ScattererTable, vectors: &[[i64; 2]]) -> anyhow::Result<Vec<ArbitrationRow>> {
    vectors
        .iter()
        .map(|&v| {
            let o = find_period2_line_of_centers(table, 0, v).with_context(|| format!("orbit along {v:?}"))?;
            Ok(ArbitrationRow {
                vector: v,
                expansion_formula: o.expansion_formula,
                expansion_numeric: o.expansion_numeric,
                relative_gap: (o.expansion_numeric - o.expansion_formula).abs() / o.expansion_formula,
            })
        })
        .collect()
}

pub fn theta_of(lambda: f64) -> f64 {
    theta_from_expansion(lambda).map(|t| t.0).unwrap_or(f64::NAN)
}

/// Exactness of the Pólya-Aeppli pmf and sampler on a parameter grid.
pub fn distribution_library(draws: usize) -> anyhow::Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut worst_mass: f64 = 0.0;
    let mut worst_poisson: f64 = 0.0;
    let mut k0_exact = true;
    let mut worst_tv: f64 = 0.0;
    for (i, theta) in [0.1, 0.5, 0.9, 1.0].into_iter().enumerate() {
        for (j, t) in [0.5, 1.0, 5.0].into_iter().enumerate() {
            let p = PolyaAeppliParams::new(theta, t)?;
            let kmax = support_cutoff(&p) + 50;
            let mut terms: Vec<f64> = (0..=kmax).map(|k| polya_aeppli_pmf(&p, k)).collect();
            terms.sort_by(f64::total_cmp);
            let mass: f64 = terms.iter().sum();
            worst_mass = worst_mass.max((mass - 1.0).abs());
            k0_exact &= polya_aeppli_pmf(&p, 0) == (-theta * t).exp();
            if draws > 0 {
                let samples = sample_compound_poisson(&p, 1000 + (i * 10 + j) as u64, draws);
                worst_tv = worst_tv.max(total_variation(&histogram(&samples), &p));
            }
        }
    }
    for t in [0.5, 1.0, 5.0, 20.0] {
        let p = PolyaAeppliParams::new(1.0, t)?;
        let mut poisson = (-t).exp();
        for k in 0..120u64 {
            if k > 0 {
                poisson *= t / k as f64;
            }
            worst_poisson = worst_poisson.max((polya_aeppli_pmf(&p, k) - poisson).abs());
        }
    }
    checks.push(Check::new("pmf normalization", worst_mass < 1e-12, format!("max |sum - 1| = {worst_mass:e}")));
    checks.push(Check::new(
        "Poisson reduction at theta = 1",
        worst_poisson < 1e-12,
        format!("max abs error {worst_poisson:e}"),
    ));
    checks.push(Check::new("k = 0 equals exp(-theta t) exactly", k0_exact, "bitwise on the grid"));
    if draws > 0 {
        checks.push(Check::new(
            "sampler total variation",
            worst_tv < 0.005,
            format!("max TV {worst_tv:.5} at {draws} draws"),
        ));
    }
    Ok(checks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormRow {
    pub tau: f64,
    pub r: f64,
    pub curvature: f64,
    pub theta_closed_form: f64,
    pub theta_closed_form_asymptotic: f64,
    /// `1 - 1/lambda` with `lambda = (1 + tau B+)^2` at the same `(tau, R)`.
    pub theta_map: f64,
}

/// The closed-form curvature chain on `tau = R`, next to the map-derivative
/// `1 - 1/lambda` of a single bounce with the same `(tau, R)`.
pub fn closed_form_grid(grid: &[f64]) -> Vec<ClosedFormRow> {
    grid.iter()
        .map(|&tau| {
            let chain = expansion_factor_closed_form(tau, tau);
            let b_pre = billiard_evt::tangent::single_factor_fixed_point(tau, tau);
            let lambda = (1.0 + tau * (b_pre + tau)).powi(2);
            ClosedFormRow {
                tau,
                r: tau,
                curvature: chain.curvature,
                theta_closed_form: chain.theta,
                theta_closed_form_asymptotic: chain.theta_asymptotic,
                theta_map: theta_of(lambda),
            }
        })
        .collect()
}
