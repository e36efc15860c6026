//! Pearson chi-square goodness of fit for count histograms.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

pub const MIN_EXPECTED: f64 = 5.0;
pub const MIN_TOTAL: u64 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

/// Adjacent categories pooled into one bin. `hi = None` is the open upper tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledBin {
    pub lo: usize,
    pub hi: Option<usize>,
    pub observed: u64,
    pub expected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareFit {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: Vec<PooledBin>,
}

/// Upper tail probability of the chi-square distribution.
pub fn chi_square_survival(statistic: f64, dof: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    if !statistic.is_finite() {
        return 0.0;
    }
    gamma_ur(dof as f64 / 2.0, statistic / 2.0)
}

/// Fit `observed[k]` (counts of category `k`) against probabilities
/// `pmf(k)` on `k = 0, 1, ...`. Categories are pooled left to right until each
/// bin expects at least [`MIN_EXPECTED`] counts; the last bin is the open tail.
/// No parameters are treated as estimated, so `dof = bins - 1`.
pub fn chi_square_fit(observed: &[u64], pmf: impl Fn(usize) -> f64) -> Result<ChiSquareFit, StatsError> {
    let total: u64 = observed.iter().sum();
    if total < MIN_TOTAL {
        return Err(StatsError::InsufficientData(format!(
            "{total} observations, need {MIN_TOTAL}"
        )));
    }
    let n = total as f64;
    let obs = |k: usize| observed.get(k).copied().unwrap_or(0);
    let mut bins = Vec::new();
    let (mut lo, mut cur_obs, mut cur_exp, mut cum) = (0usize, 0u64, 0.0f64, 0.0f64);
    let mut k = 0usize;
    loop {
        let tail = (1.0 - cum).max(0.0);
        if n * tail < 2.0 * MIN_EXPECTED || k > 1_000_000 {
            let rest: u64 = observed.iter().skip(k).sum();
            bins.push(PooledBin {
                lo,
                hi: None,
                observed: cur_obs + rest,
                expected: cur_exp + n * tail,
            });
            break;
        }
        let p = pmf(k);
        cur_exp += n * p;
        cur_obs += obs(k);
        cum += p;
        if cur_exp >= MIN_EXPECTED && n * (1.0 - cum) >= MIN_EXPECTED {
            bins.push(PooledBin {
                lo,
                hi: Some(k),
                observed: cur_obs,
                expected: cur_exp,
            });
            lo = k + 1;
            cur_obs = 0;
            cur_exp = 0.0;
        }
        k += 1;
    }
    // a short final tail is folded into its neighbour
    if bins.len() >= 2 && bins[bins.len() - 1].expected < MIN_EXPECTED {
        let last = bins.pop().unwrap();
        let prev = bins.last_mut().unwrap();
        prev.hi = None;
        prev.observed += last.observed;
        prev.expected += last.expected;
    }
    if bins.len() < 2 {
        return Err(StatsError::InsufficientData(
            "fewer than two bins after pooling".into(),
        ));
    }
    let statistic: f64 = bins
        .iter()
        .map(|b| {
            let d = b.observed as f64 - b.expected;
            d * d / b.expected
        })
        .sum();
    let dof = bins.len() - 1;
    Ok(ChiSquareFit {
        statistic,
        dof,
        p_value: chi_square_survival(statistic, dof),
        bins,
    })
}
