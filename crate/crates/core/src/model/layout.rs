//! Parameter index map.
//!
//! Coordinates are laid out as globals, then per-meta-analysis blocks, then
//! per-trial pairs:
//!
//! ```text
//! b0[0..p] | phi_slab[0..p] | kappa_slab[0..p] or lambda[0..p] | p0 | (mu, sigma)
//! for each meta-analysis m: d_m, tau_m, eta_m[0..p]
//! for each trial t:         gamma_t, theta_t
//! ```
//!
//! Values are stored on the sampler's unconstrained scale (see
//! [`Transform`]). Point-mass indicators for `phi_j^2` (and `kappa_j^2` in the
//! additive model) are held separately as booleans.
//!
//! The per-meta-analysis bias is stored standardized: `b_jm = b0_j + phi_j *
//! eta_jm` with `eta_jm ~ N(0, 1)`, which keeps the model well defined when
//! the point mass sets `phi_j = 0`.

use serde::{Deserialize, Serialize};

use crate::stats::expit;

use super::spec::VarianceStructure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Param {
    B0(usize),
    /// Slab variance behind `phi_j^2`.
    PhiSlab(usize),
    /// Slab variance behind `kappa_j^2` (additive only).
    KappaSlab(usize),
    Lambda(usize),
    MixingWeight,
    TauMean,
    TauSd,
    EffectMean(usize),
    Tau(usize),
    /// Standardized bias `eta` for (meta-analysis, characteristic).
    Bias(usize, usize),
    Baseline(usize),
    Effect(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    Log,
    Logit,
}

impl Transform {
    pub fn to_natural(self, u: f64) -> f64 {
        match self {
            Self::Identity => u,
            Self::Log => u.exp(),
            Self::Logit => expit(u),
        }
    }

    pub fn to_unconstrained(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Log => x.ln(),
            Self::Logit => (x / (1.0 - x)).ln(),
        }
    }

    /// `ln |dx/du|`
    pub fn ln_jacobian(self, u: f64) -> f64 {
        match self {
            Self::Identity => 0.0,
            Self::Log => u,
            Self::Logit => -crate::stats::softplus(-u) - crate::stats::softplus(u),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Indicator {
    Phi(usize),
    Kappa(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub p: usize,
    pub n_meta: usize,
    pub n_trials: usize,
    pub structure: VarianceStructure,
    pub tau_hierarchy: bool,
}

impl ParamLayout {
    pub fn n_globals(&self) -> usize {
        3 * self.p + 1 + if self.tau_hierarchy { 2 } else { 0 }
    }

    fn meta_stride(&self) -> usize {
        2 + self.p
    }

    pub fn dim(&self) -> usize {
        self.n_globals() + self.n_meta * self.meta_stride() + 2 * self.n_trials
    }

    pub fn b0(&self, j: usize) -> usize {
        j
    }
    pub fn phi_slab(&self, j: usize) -> usize {
        self.p + j
    }
    /// Kappa slab or lambda, depending on the structure.
    pub fn het(&self, j: usize) -> usize {
        2 * self.p + j
    }
    pub fn mixing_weight(&self) -> usize {
        3 * self.p
    }
    pub fn tau_mean(&self) -> Option<usize> {
        self.tau_hierarchy.then(|| 3 * self.p + 1)
    }
    pub fn tau_sd(&self) -> Option<usize> {
        self.tau_hierarchy.then(|| 3 * self.p + 2)
    }
    pub fn effect_mean(&self, m: usize) -> usize {
        self.n_globals() + m * self.meta_stride()
    }
    pub fn tau(&self, m: usize) -> usize {
        self.effect_mean(m) + 1
    }
    pub fn bias(&self, m: usize, j: usize) -> usize {
        self.effect_mean(m) + 2 + j
    }
    pub fn baseline(&self, t: usize) -> usize {
        self.n_globals() + self.n_meta * self.meta_stride() + 2 * t
    }
    pub fn effect(&self, t: usize) -> usize {
        self.baseline(t) + 1
    }

    pub fn n_indicators(&self) -> usize {
        match self.structure {
            VarianceStructure::Additive => 2 * self.p,
            VarianceStructure::LabelInvariant => self.p,
        }
    }

    pub fn phi_on(&self, j: usize) -> usize {
        j
    }
    pub fn kappa_on(&self, j: usize) -> Option<usize> {
        (self.structure == VarianceStructure::Additive).then(|| self.p + j)
    }

    pub fn indicator(&self, i: usize) -> Indicator {
        if i < self.p {
            Indicator::Phi(i)
        } else {
            Indicator::Kappa(i - self.p)
        }
    }

    /// Which role sits at coordinate `k`.
    pub fn param(&self, k: usize) -> Param {
        let p = self.p;
        let g = self.n_globals();
        if k < g {
            return match k {
                _ if k < p => Param::B0(k),
                _ if k < 2 * p => Param::PhiSlab(k - p),
                _ if k < 3 * p => match self.structure {
                    VarianceStructure::Additive => Param::KappaSlab(k - 2 * p),
                    VarianceStructure::LabelInvariant => Param::Lambda(k - 2 * p),
                },
                _ if k == 3 * p => Param::MixingWeight,
                _ if k == 3 * p + 1 => Param::TauMean,
                _ => Param::TauSd,
            };
        }
        let meta_end = g + self.n_meta * self.meta_stride();
        if k < meta_end {
            let m = (k - g) / self.meta_stride();
            return match (k - g) % self.meta_stride() {
                0 => Param::EffectMean(m),
                1 => Param::Tau(m),
                r => Param::Bias(m, r - 2),
            };
        }
        let t = (k - meta_end) / 2;
        if (k - meta_end) % 2 == 0 {
            Param::Baseline(t)
        } else {
            Param::Effect(t)
        }
    }

    pub fn index_of(&self, param: Param) -> Option<usize> {
        let k = match param {
            Param::B0(j) => self.b0(j),
            Param::PhiSlab(j) => self.phi_slab(j),
            Param::KappaSlab(j) if self.structure == VarianceStructure::Additive => self.het(j),
            Param::Lambda(j) if self.structure == VarianceStructure::LabelInvariant => self.het(j),
            Param::KappaSlab(_) | Param::Lambda(_) => return None,
            Param::MixingWeight => self.mixing_weight(),
            Param::TauMean => self.tau_mean()?,
            Param::TauSd => self.tau_sd()?,
            Param::EffectMean(m) => self.effect_mean(m),
            Param::Tau(m) => self.tau(m),
            Param::Bias(m, j) => self.bias(m, j),
            Param::Baseline(t) => self.baseline(t),
            Param::Effect(t) => self.effect(t),
        };
        (k < self.dim() && self.param(k) == param).then_some(k)
    }

    pub fn transform(&self, param: Param) -> Transform {
        match param {
            Param::PhiSlab(_)
            | Param::KappaSlab(_)
            | Param::Lambda(_)
            | Param::TauSd
            | Param::Tau(_) => Transform::Log,
            Param::MixingWeight => Transform::Logit,
            _ => Transform::Identity,
        }
    }
}

/// One point in parameter space, on the unconstrained scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub values: Vec<f64>,
    pub indicators: Vec<bool>,
}

impl ParameterState {
    pub fn zeros(layout: &ParamLayout) -> Self {
        Self {
            values: vec![0.0; layout.dim()],
            indicators: vec![true; layout.n_indicators()],
        }
    }
}
