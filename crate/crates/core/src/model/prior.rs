//! Prior families and their densities, quantiles and draws.
//!
//! Densities are on the natural scale of the parameter. The sampler moves
//! positive parameters on the log scale, so [`PriorSpec::ln_pdf_log_scale`]
//! returns the density of `u = ln x` with the Jacobian included.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::stats::normal_logpdf;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PriorSpec {
    Normal {
        mean: f64,
        variance: f64,
    },
    /// Point mass at zero with probability `p0`, inverse-gamma slab otherwise.
    /// The mixing weight `p0` has its own prior role.
    InverseGammaZeroMixture {
        shape: f64,
        rate: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    LogNormal {
        meanlog: f64,
        sdlog: f64,
    },
    TruncatedLogNormal {
        meanlog: f64,
        sdlog: f64,
        lower: f64,
    },
    /// `ln x ~ Uniform(lo, hi)`.
    UniformOnLog {
        lo: f64,
        hi: f64,
    },
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

impl PriorSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            Self::Normal { .. } => "normal",
            Self::InverseGammaZeroMixture { .. } => "inverse-gamma-zero-mixture",
            Self::Uniform { .. } => "uniform",
            Self::LogNormal { .. } => "log-normal",
            Self::TruncatedLogNormal { .. } => "truncated-log-normal",
            Self::UniformOnLog { .. } => "uniform-on-log",
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = match *self {
            Self::Normal { mean, variance } => mean.is_finite() && variance > 0.0,
            Self::InverseGammaZeroMixture { shape, rate } => shape > 0.0 && rate > 0.0,
            Self::Uniform { lo, hi } | Self::UniformOnLog { lo, hi } => {
                lo.is_finite() && hi.is_finite() && lo < hi
            }
            Self::LogNormal { meanlog, sdlog } => meanlog.is_finite() && sdlog > 0.0,
            Self::TruncatedLogNormal {
                meanlog,
                sdlog,
                lower,
            } => meanlog.is_finite() && sdlog > 0.0 && lower >= 0.0 && lower.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidPrior(format!("{self:?}")))
        }
    }

    /// True when the family puts all mass on `(0, inf)`.
    pub fn is_positive(&self) -> bool {
        match *self {
            Self::Normal { .. } => false,
            Self::Uniform { lo, .. } => lo >= 0.0,
            _ => true,
        }
    }

    /// Log density on the natural scale. For the zero-mixture family this is
    /// the density of the inverse-gamma slab.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, variance } => normal_logpdf(x, mean, variance),
            Self::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            _ if x <= 0.0 => f64::NEG_INFINITY,
            _ => self.ln_pdf_log_scale(x.ln()) - x.ln(),
        }
    }

    /// Log density of `u = ln x`, i.e. `ln_pdf(e^u) + u`, evaluated without
    /// forming `e^u` where that could overflow.
    pub fn ln_pdf_log_scale(&self, u: f64) -> f64 {
        match *self {
            Self::Normal { .. } | Self::Uniform { .. } => self.ln_pdf(u.exp()) + u,
            Self::InverseGammaZeroMixture { shape, rate } => {
                shape * rate.ln() - ln_gamma(shape) - shape * u - rate * (-u).exp()
            }
            Self::LogNormal { meanlog, sdlog } => normal_logpdf(u, meanlog, sdlog * sdlog),
            Self::TruncatedLogNormal {
                meanlog,
                sdlog,
                lower,
            } => {
                if u < lower.ln() {
                    return f64::NEG_INFINITY;
                }
                let tail = 1.0 - std_normal().cdf((lower.ln() - meanlog) / sdlog);
                normal_logpdf(u, meanlog, sdlog * sdlog) - tail.ln()
            }
            Self::UniformOnLog { lo, hi } => {
                if (lo..=hi).contains(&u) {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Quantile on the natural scale.
    pub fn quantile(&self, prob: f64) -> Result<f64, ModelError> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(ModelError::InvalidArgument(format!(
                "quantile probability {prob} outside (0, 1)"
            )));
        }
        let z = |q: f64| std_normal().inverse_cdf(q);
        Ok(match *self {
            Self::Normal { mean, variance } => mean + variance.sqrt() * z(prob),
            Self::Uniform { lo, hi } => lo + prob * (hi - lo),
            Self::LogNormal { meanlog, sdlog } => (meanlog + sdlog * z(prob)).exp(),
            Self::TruncatedLogNormal {
                meanlog,
                sdlog,
                lower,
            } => {
                let below = std_normal().cdf((lower.ln() - meanlog) / sdlog);
                (meanlog + sdlog * z(below + prob * (1.0 - below))).exp()
            }
            Self::UniformOnLog { lo, hi } => (lo + prob * (hi - lo)).exp(),
            Self::InverseGammaZeroMixture { .. } => {
                return Err(ModelError::Unsupported(
                    "quantiles of the zero-mixture prior depend on the mixing weight".into(),
                ))
            }
        })
    }

    /// Draws `ln x` from the prior. The inverse-gamma slab is drawn in log
    /// space because vague shapes put most mass beyond `f64::MAX`.
    pub fn sample_log_scale<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::InverseGammaZeroMixture { shape, rate } => {
                // ln G(a) = ln G(a + 1) + ln(U) / a, G ~ Gamma(a, 1)
                let g1: f64 = Gamma::new(shape + 1.0, 1.0)
                    .expect("valid gamma")
                    .sample(rng);
                let unif: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let ln_gamma_draw = g1.ln() + unif.ln() / shape - rate.ln();
                -ln_gamma_draw
            }
            Self::LogNormal { meanlog, sdlog } => {
                let e: f64 = StandardNormal.sample(rng);
                meanlog + sdlog * e
            }
            _ => {
                let q: f64 = rng.random_range(1e-12..1.0 - 1e-12);
                self.quantile(q).map_or(f64::NAN, f64::ln)
            }
        }
    }
}

/// Quantiles of a prior at several probabilities.
pub fn prior_quantiles(prior: &PriorSpec, probs: &[f64]) -> Result<Vec<f64>, ModelError> {
    prior.validate()?;
    probs.iter().map(|&q| prior.quantile(q)).collect()
}

/// A named candidate prior for the heterogeneity-variance ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPrior {
    pub name: String,
    pub prior: PriorSpec,
}

/// The five shipped candidate priors for the variance ratio. Priors 1 to 4
/// have median 1; prior 5 restricts the ratio to values above 1.
pub fn sensitivity_priors() -> Vec<NamedPrior> {
    let named = |i: usize, prior| NamedPrior {
        name: format!("prior-{i}"),
        prior,
    };
    vec![
        named(
            1,
            PriorSpec::LogNormal {
                meanlog: 0.0,
                sdlog: 0.5,
            },
        ),
        named(
            2,
            PriorSpec::LogNormal {
                meanlog: 0.0,
                sdlog: 1.0,
            },
        ),
        named(
            3,
            PriorSpec::UniformOnLog {
                lo: 0.2f64.ln(),
                hi: 5f64.ln(),
            },
        ),
        named(
            4,
            PriorSpec::UniformOnLog {
                lo: 0.1f64.ln(),
                hi: 10f64.ln(),
            },
        ),
        named(
            5,
            PriorSpec::TruncatedLogNormal {
                meanlog: 0.0,
                sdlog: 1.0,
                lower: 1.0,
            },
        ),
    ]
}
