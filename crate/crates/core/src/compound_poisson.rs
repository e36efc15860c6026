//! Pólya-Aeppli law: a Poisson(`theta t`) number of clusters with i.i.d.
//! geometric(`theta`) sizes on `{1, 2, ...}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::{ln_binomial, ln_factorial};
use thiserror::Error;

use crate::stats::{chi_square_fit, PooledBin, StatsError};

/// Tail mass below which infinite sums are truncated.
pub const TAIL_MASS: f64 = 1e-14;

/// Draws per independent ChaCha stream in the sampler.
pub const SAMPLER_CHUNK: usize = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("domain error: {0}")]
    DomainError(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyaAeppliParams {
    pub theta: f64,
    pub t: f64,
}

impl PolyaAeppliParams {
    pub fn new(theta: f64, t: f64) -> Result<Self, DistributionError> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(DistributionError::DomainError(format!("theta = {theta} not in (0, 1]")));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(DistributionError::DomainError(format!("t = {t} must be positive")));
        }
        Ok(Self { theta, t })
    }

    /// Mean number of clusters.
    pub fn cluster_rate(&self) -> f64 {
        self.theta * self.t
    }
}

/// `G(k) = theta (1 - theta)^(k-1)` for `k >= 1`.
pub fn geometric_multiplicity_pmf(theta: f64, k: u64) -> Result<f64, DistributionError> {
    if k < 1 {
        return Err(DistributionError::DomainError("cluster size must be >= 1".into()));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(DistributionError::DomainError(format!("theta = {theta} not in (0, 1]")));
    }
    if theta == 1.0 {
        return Ok(if k == 1 { 1.0 } else { 0.0 });
    }
    Ok(theta * (1.0 - theta).powi((k - 1) as i32))
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// `P(N = k) = e^{-theta t} sum_{j=1}^k theta^j (1-theta)^{k-j} (theta t)^j / j! C(k-1, j-1)`,
/// summed in log space.
pub fn polya_aeppli_pmf(params: &PolyaAeppliParams, k: u64) -> f64 {
    let PolyaAeppliParams { theta, t } = *params;
    if k == 0 {
        return (-theta * t).exp();
    }
    let ln_theta = theta.ln();
    let ln_rest = (1.0 - theta).ln();
    let ln_rate = (theta * t).ln();
    let logs: Vec<f64> = (1..=k)
        .filter(|&j| j == k || theta < 1.0)
        .map(|j| {
            let jf = j as f64;
            let rest = if j == k { 0.0 } else { (k - j) as f64 * ln_rest };
            -theta * t + jf * ln_theta + rest + jf * ln_rate - ln_factorial(j) + ln_binomial(k - 1, j - 1)
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let scaled: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    max.exp() * pairwise_sum(&scaled)
}

/// Smallest `K` beyond the mean where the remaining mass is below
/// [`TAIL_MASS`], bounded by a geometric tail estimate.
pub fn support_cutoff(params: &PolyaAeppliParams) -> u64 {
    let mean = params.t;
    let mut prev = polya_aeppli_pmf(params, 0);
    let mut k = 1u64;
    loop {
        let p = polya_aeppli_pmf(params, k);
        if k as f64 > mean && p > 0.0 && p < prev {
            let ratio = p / prev;
            if p * ratio / (1.0 - ratio) < TAIL_MASS * 1e-2 {
                return k;
            }
        }
        if p == 0.0 && k as f64 > mean {
            return k;
        }
        prev = p;
        k += 1;
    }
}

/// `P(N <= k)`. Beyond the support cutoff the partial sum stops growing.
pub fn polya_aeppli_cdf(params: &PolyaAeppliParams, k: u64) -> f64 {
    let last = k.min(support_cutoff(params));
    let terms: Vec<f64> = (0..=last).map(|j| polya_aeppli_pmf(params, j)).collect();
    pairwise_sum(&terms)
}

/// Compound Poisson counts with geometric multiplicity. Draw `i` comes from
/// ChaCha stream `i / SAMPLER_CHUNK` of `seed`, so the output is the same for
/// any number of workers.
pub fn sample_compound_poisson(params: &PolyaAeppliParams, seed: u64, n_draws: usize) -> Vec<u64> {
    let chunks = n_draws.div_ceil(SAMPLER_CHUNK);
    let draw_chunk = |c: usize| -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let clusters = Poisson::new(params.cluster_rate()).expect("positive rate");
        let sizes = Geometric::new(params.theta).expect("theta in (0, 1]");
        let len = SAMPLER_CHUNK.min(n_draws - c * SAMPLER_CHUNK);
        (0..len)
            .map(|_| {
                let m = clusters.sample(&mut rng) as u64;
                (0..m).map(|_| 1 + sizes.sample(&mut rng)).sum()
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Vec<u64>> = {
        use rayon::prelude::*;
        (0..chunks).into_par_iter().map(draw_chunk).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Vec<u64>> = (0..chunks).map(draw_chunk).collect();
    parts.concat()
}

/// `counts[k]` = number of samples equal to `k`.
pub fn histogram(samples: &[u64]) -> Vec<u64> {
    let max = samples.iter().copied().max().unwrap_or(0) as usize;
    let mut h = vec![0u64; max + 1];
    for &s in samples {
        h[s as usize] += 1;
    }
    h
}

/// Total variation distance between an empirical histogram and the exact law.
pub fn total_variation(counts: &[u64], params: &PolyaAeppliParams) -> f64 {
    let n: u64 = counts.iter().sum();
    let upper = (counts.len() as u64).max(support_cutoff(params) + 1);
    let mut diff = 0.0;
    let mut covered = 0.0;
    for k in 0..upper {
        let p = polya_aeppli_pmf(params, k);
        covered += p;
        let emp = counts.get(k as usize).copied().unwrap_or(0) as f64 / n as f64;
        diff += (emp - p).abs();
    }
    0.5 * (diff + (1.0 - covered).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub theta: f64,
    pub t: f64,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    pub pooled_bins: Vec<PooledBin>,
}

/// Pearson chi-square of a count histogram against the Pólya-Aeppli pmf.
pub fn goodness_of_fit(counts: &[u64], params: &PolyaAeppliParams) -> Result<FitReport, DistributionError> {
    let fit = chi_square_fit(counts, |k| polya_aeppli_pmf(params, k as u64))?;
    Ok(FitReport {
        theta: params.theta,
        t: params.t,
        chi2: fit.statistic,
        dof: fit.dof,
        p_value: fit.p_value,
        pooled_bins: fit.bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(theta: f64, t: f64) -> PolyaAeppliParams {
        PolyaAeppliParams::new(theta, t).unwrap()
    }

    #[test]
    fn geometric_examples() {
        assert_eq!(geometric_multiplicity_pmf(0.3, 1).unwrap(), 0.3);
        assert_eq!(geometric_multiplicity_pmf(1.0, 2).unwrap(), 0.0);
        assert_eq!(geometric_multiplicity_pmf(1.0, 7).unwrap(), 0.0);
        assert!(geometric_multiplicity_pmf(0.3, 0).is_err());
        for theta in [0.1, 0.3, 0.9, 1.0] {
            let mut terms = Vec::new();
            let mut k = 1;
            loop {
                let p = geometric_multiplicity_pmf(theta, k).unwrap();
                terms.push(k as f64 * p);
                if p < 1e-20 {
                    break;
                }
                k += 1;
            }
            assert!((pairwise_sum(&terms) - 1.0 / theta).abs() < 1e-12);
        }
    }

    #[test]
    fn pmf_examples() {
        let p = params(0.5, 1.0);
        assert_eq!(polya_aeppli_pmf(&p, 0), (-0.5f64).exp());
        assert!((polya_aeppli_pmf(&p, 1) - (-0.5f64).exp() * 0.25).abs() < 1e-15);
        assert!((polya_aeppli_pmf(&p, 1) - 0.151633).abs() < 1e-6);
        assert_eq!(polya_aeppli_cdf(&p, 0), (-0.5f64).exp());
    }

    #[test]
    fn invalid_params() {
        assert!(PolyaAeppliParams::new(0.0, 1.0).is_err());
        assert!(PolyaAeppliParams::new(1.5, 1.0).is_err());
        assert!(PolyaAeppliParams::new(0.5, 0.0).is_err());
    }

    #[test]
    fn cdf_telescopes_and_saturates() {
        let p = params(0.3, 2.0);
        for k in 1..40 {
            let d = polya_aeppli_cdf(&p, k) - polya_aeppli_cdf(&p, k - 1);
            assert!((d - polya_aeppli_pmf(&p, k)).abs() < 1e-14);
        }
        assert!((polya_aeppli_cdf(&p, 10_000) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn large_k_is_finite() {
        let p = params(0.05, 5.0);
        let v = polya_aeppli_pmf(&p, 300);
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn sampler_is_reproducible() {
        let p = params(0.5, 2.0);
        let a = sample_compound_poisson(&p, 42, 50_000);
        let b = sample_compound_poisson(&p, 42, 50_000);
        assert_eq!(a, b);
        assert_eq!(a.len(), 50_000);
        let c = sample_compound_poisson(&p, 43, 50_000);
        assert_ne!(a, c);
        // prefix property: chunking depends only on the draw index
        let short = sample_compound_poisson(&p, 42, 20_000);
        assert_eq!(&a[..20_000], &short[..]);
    }

    #[test]
    fn single_bin_histogram_rejected() {
        assert!(matches!(
            goodness_of_fit(&[10], &params(0.5, 1.0)),
            Err(DistributionError::Stats(StatsError::InsufficientData(_)))
        ));
    }
}
