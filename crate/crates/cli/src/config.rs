use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use billiard_evt::billiard::{GeometryConfig, ScattererTable};
use billiard_evt::evt::{SegmentSeed, DEFAULT_BURN_IN};
use billiard_evt::orbits::{find_period2_line_of_centers, refine_orbit_newton, OrbitSeed, PeriodicOrbit};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Bundled headline experiment: the period-2 orbit on the radius-0.3 square
/// lattice, 1e8 collisions.
pub const PERIOD2_R03: &str = include_str!("../configs/period2_r03.json");

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigInvalid(pub String);

impl fmt::Display for ConfigInvalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigInvalid {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrbitSpec {
    LineOfCenters {
        #[serde(default)]
        scatterer: usize,
        vector: [i64; 2],
    },
    Seeded {
        seed: OrbitSeed,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRequest {
    pub n: u64,
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReppRequest {
    pub t_window: f64,
    pub n_windows: u64,
}

/// Which acceptance checks decide the exit code.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckToggles {
    pub theta: bool,
    pub gumbel: bool,
    pub repp: bool,
    pub clusters: bool,
}

impl Default for CheckToggles {
    fn default() -> Self {
        Self { theta: true, gumbel: true, repp: true, clusters: true }
    }
}

fn default_segment_length() -> u64 {
    1_000_000
}

fn default_burn_in() -> u64 {
    DEFAULT_BURN_IN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub orbit: OrbitSpec,
    /// `(n, tau)` pairs. The first one is the headline level for the
    /// conditional estimator, the point process and the clusters.
    pub thresholds: Vec<ThresholdRequest>,
    pub trajectory_length: u64,
    #[serde(default = "default_segment_length")]
    pub segment_length: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    pub repp: ReppRequest,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub checks: CheckToggles,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| ConfigInvalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("loading {}", path.display()))
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        let bad = |msg: String| Err(ConfigInvalid(msg));
        if self.thresholds.is_empty() {
            return bad("thresholds must not be empty".into());
        }
        for t in &self.thresholds {
            if t.n == 0 || !(t.tau > 0.0 && t.tau.is_finite()) || t.tau >= t.n as f64 {
                return bad(format!("threshold (n = {}, tau = {}) needs n > 0 and 0 < tau < n", t.n, t.tau));
            }
        }
        let max_n = self.max_n();
        if self.trajectory_length < 200 * max_n {
            return bad(format!(
                "trajectory_length {} below 200 * max(n) = {}",
                self.trajectory_length,
                200 * max_n
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.segment_length < max_n {
            return bad(format!("segment_length {} shorter than a block of {max_n}", self.segment_length));
        }
        let chunk = self.segment_length * self.seeds.len() as u64;
        if !self.trajectory_length.is_multiple_of(chunk) {
            return bad(format!(
                "trajectory_length {} is not a multiple of segment_length * seeds = {chunk}",
                self.trajectory_length
            ));
        }
        if !(self.repp.t_window > 0.0 && self.repp.t_window.is_finite()) || self.repp.n_windows == 0 {
            return bad("repp needs t_window > 0 and n_windows > 0".into());
        }
        if let OrbitSpec::Seeded { seed } = &self.orbit {
            if seed.points.is_empty() {
                return bad("orbit seed has no points".into());
            }
        }
        Ok(())
    }

    pub fn max_n(&self) -> u64 {
        self.thresholds.iter().map(|t| t.n).max().unwrap_or(0)
    }

    /// Largest exceedance probability `tau / n` the statistics will use.
    pub fn max_exceedance_prob(&self) -> f64 {
        self.thresholds.iter().map(|t| t.tau / t.n as f64).fold(0.0, f64::max)
    }

    /// One ChaCha stream per segment, seeds taken in order.
    pub fn segment_seeds(&self) -> Vec<SegmentSeed> {
        let per_seed = self.trajectory_length / (self.segment_length * self.seeds.len() as u64);
        self.seeds
            .iter()
            .flat_map(|&seed| (0..per_seed).map(move |stream| SegmentSeed { seed, stream }))
            .collect()
    }

    pub fn table(&self) -> anyhow::Result<ScattererTable> {
        ScattererTable::build(&self.geometry).context("building the scatterer table")
    }

    pub fn orbit(&self, table: &ScattererTable) -> anyhow::Result<PeriodicOrbit> {
        match &self.orbit {
            OrbitSpec::LineOfCenters { scatterer, vector } => find_period2_line_of_centers(table, *scatterer, *vector)
                .with_context(|| format!("period-2 orbit along {vector:?}")),
            OrbitSpec::Seeded { seed } => Ok(refine_orbit_newton(seed, table).context("refining the orbit seed")?.0),
        }
    }

    /// SHA-256 of the config with `output_dir` cleared: where results go does
    /// not change them.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
