//! Posterior summaries: medians, SDs and 95% credible intervals, relative
//! odds ratios, combined bias and the predictive heterogeneity distribution.
//!
//! Quantiles interpolate linearly between order statistics (position
//! `(n - 1) p`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::stats::{mean, quantile_sorted, sd};

const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SummaryError {
    #[error("no draws to summarize")]
    Empty,
    #[error("draw vectors have different lengths ({0} vs {1})")]
    Misaligned(usize, usize),
    #[error("non-finite draw")]
    NonFinite,
    #[error("empty characteristic subset")]
    EmptySubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Summary {
    pub fn map(&self, f: impl Fn(f64) -> f64) -> (f64, f64, f64) {
        (f(self.median), f(self.ci_lo), f(self.ci_hi))
    }
}

pub fn summarize_param(draws: &[f64]) -> Result<Summary, SummaryError> {
    if draws.is_empty() {
        return Err(SummaryError::Empty);
    }
    if draws.iter().any(|x| !x.is_finite()) {
        return Err(SummaryError::NonFinite);
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let constant = sorted[0] == sorted[sorted.len() - 1];
    Ok(Summary {
        mean: if constant { sorted[0] } else { mean(draws) },
        median: quantile_sorted(&sorted, 0.5),
        sd: spread(draws),
        ci_lo: quantile_sorted(&sorted, 0.025),
        ci_hi: quantile_sorted(&sorted, 0.975),
    })
}

/// Sample SD, exactly zero for constant or single draws.
fn spread(xs: &[f64]) -> f64 {
    let first = xs[0];
    if xs.iter().all(|&x| x == first) {
        0.0
    } else {
        sd(xs)
    }
}

/// Summary of `exp(b0)`. Mean and SD come from the exponentiated draws;
/// quantiles are interpolated on the log scale and then exponentiated, so
/// the median and interval are exactly `exp` of those of `b0`.
pub fn ror(b0: &[f64]) -> Result<Summary, SummaryError> {
    let log_scale = summarize_param(b0)?;
    let e: Vec<f64> = b0.iter().map(|x| x.exp()).collect();
    let (median, ci_lo, ci_hi) = log_scale.map(f64::exp);
    Ok(Summary {
        median,
        ci_lo,
        ci_hi,
        ..summarize_param(&e)?
    })
}

/// Summary of the per-draw sum of several aligned series.
pub fn combined_bias(series: &[&[f64]]) -> Result<Summary, SummaryError> {
    let Some(first) = series.first() else {
        return Err(SummaryError::EmptySubset);
    };
    let n = first.len();
    if let Some(bad) = series.iter().find(|s| s.len() != n) {
        return Err(SummaryError::Misaligned(n, bad.len()));
    }
    let sums: Vec<f64> = (0..n).map(|i| series.iter().map(|s| s[i]).sum()).collect();
    summarize_param(&sums)
}

/// Log-normal fitted to the predictive distribution of `tau_new^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveTau {
    pub meanlog: f64,
    pub sdlog: f64,
    pub median: f64,
    pub range_lo: f64,
    pub range_hi: f64,
    /// Quantiles of the raw predictive samples.
    pub raw_median: f64,
    pub raw_lo: f64,
    pub raw_hi: f64,
}

impl PredictiveTau {
    /// Median and 95% range of `LogNormal(meanlog, sdlog^2)`; the raw fields
    /// equal the fitted ones.
    pub fn from_lognormal(meanlog: f64, sdlog: f64) -> Self {
        let median = meanlog.exp();
        let range_lo = (meanlog - Z_975 * sdlog).exp();
        let range_hi = (meanlog + Z_975 * sdlog).exp();
        Self {
            meanlog,
            sdlog,
            median,
            range_lo,
            range_hi,
            raw_median: median,
            raw_lo: range_lo,
            raw_hi: range_hi,
        }
    }
}

/// Draws `ln tau_new^2 ~ N(mu_t, sigma_t^2)` once per iteration and fits a
/// log-normal by the mean and SD of those log draws.
pub fn predictive_tau(mu: &[f64], sigma: &[f64], seed: u64) -> Result<PredictiveTau, SummaryError> {
    if mu.len() != sigma.len() {
        return Err(SummaryError::Misaligned(mu.len(), sigma.len()));
    }
    if mu.is_empty() {
        return Err(SummaryError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = Vec::with_capacity(mu.len());
    for (&m, &s) in mu.iter().zip(sigma) {
        let x = if s > 0.0 {
            Normal::new(m, s)
                .map_err(|_| SummaryError::NonFinite)?
                .sample(&mut rng)
        } else {
            m
        };
        logs.push(x);
    }
    let raw = summarize_param(&logs)?;
    Ok(PredictiveTau {
        raw_median: raw.median.exp(),
        raw_lo: raw.ci_lo.exp(),
        raw_hi: raw.ci_hi.exp(),
        ..PredictiveTau::from_lognormal(raw.mean, raw.sd)
    })
}
