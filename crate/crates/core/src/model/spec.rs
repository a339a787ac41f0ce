use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::prior::PriorSpec;
use super::ModelError;

/// How the between-trial variance of flagged trials relates to that of
/// unflagged trials in the same meta-analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceStructure {
    /// `tau^2 + sum_j x_j kappa_j^2`
    Additive,
    /// `tau^2 * prod_j lambda_j^{x_j}`
    LabelInvariant,
}

impl fmt::Display for VarianceStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Additive => "additive",
            Self::LabelInvariant => "label-invariant",
        })
    }
}

impl std::str::FromStr for VarianceStructure {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "additive" => Ok(Self::Additive),
            "label-invariant" => Ok(Self::LabelInvariant),
            other => Err(ModelError::InvalidArgument(format!(
                "unknown variance structure '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorRole {
    /// Every location parameter: `d_m`, baselines, `b0_j`.
    Location,
    KappaSq,
    PhiSq,
    Lambda,
    /// Per-meta-analysis `tau_m` when the hierarchy on `ln tau_m^2` is off.
    Tau,
    /// Mean of `ln tau_m^2` under the hierarchy.
    TauMean,
    /// Standard deviation of `ln tau_m^2` under the hierarchy.
    TauSd,
    MixingWeight,
}

impl PriorRole {
    fn admits(self, prior: &PriorSpec) -> bool {
        match self {
            Self::Location | Self::TauMean => matches!(prior, PriorSpec::Normal { .. }),
            Self::KappaSq | Self::PhiSq => {
                matches!(prior, PriorSpec::InverseGammaZeroMixture { .. })
            }
            Self::Lambda | Self::Tau | Self::TauSd => {
                prior.is_positive() && !matches!(prior, PriorSpec::InverseGammaZeroMixture { .. })
            }
            Self::MixingWeight => {
                matches!(prior, PriorSpec::Uniform { lo, hi } if *lo >= 0.0 && *hi <= 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub structure: VarianceStructure,
    /// Characteristic names, resolved against the dataset header.
    pub characteristics: Vec<String>,
    #[serde(default)]
    pub tau_hierarchy: bool,
    #[serde(default = "default_threshold")]
    pub min_each_side_for_variance: usize,
    /// Keep only meta-analyses informative for every characteristic; when
    /// false, those informative for at least one are kept.
    #[serde(default = "default_true")]
    pub require_all_informative: bool,
    /// Roles left out of a config file take their defaults.
    #[serde(default)]
    pub priors: BTreeMap<PriorRole, PriorSpec>,
}

fn default_threshold() -> usize {
    2
}

fn default_true() -> bool {
    true
}

pub fn default_prior(role: PriorRole) -> PriorSpec {
    match role {
        PriorRole::Location | PriorRole::TauMean => PriorSpec::Normal {
            mean: 0.0,
            variance: 1000.0,
        },
        PriorRole::KappaSq | PriorRole::PhiSq => PriorSpec::InverseGammaZeroMixture {
            shape: 0.001,
            rate: 0.001,
        },
        PriorRole::Lambda => PriorSpec::LogNormal {
            meanlog: 0.0,
            sdlog: 1.0,
        },
        PriorRole::Tau | PriorRole::TauSd => PriorSpec::Uniform { lo: 0.0, hi: 2.0 },
        PriorRole::MixingWeight => PriorSpec::Uniform { lo: 0.0, hi: 1.0 },
    }
}

fn required_roles(structure: VarianceStructure, tau_hierarchy: bool) -> Vec<PriorRole> {
    let mut roles = vec![
        PriorRole::Location,
        PriorRole::PhiSq,
        PriorRole::MixingWeight,
    ];
    roles.push(match structure {
        VarianceStructure::Additive => PriorRole::KappaSq,
        VarianceStructure::LabelInvariant => PriorRole::Lambda,
    });
    if tau_hierarchy {
        roles.extend([PriorRole::TauMean, PriorRole::TauSd]);
    } else {
        roles.push(PriorRole::Tau);
    }
    roles.sort();
    roles
}

impl ModelSpec {
    /// A spec with the default prior for every required role.
    pub fn new(
        structure: VarianceStructure,
        characteristics: Vec<String>,
        tau_hierarchy: bool,
    ) -> Self {
        let priors = required_roles(structure, tau_hierarchy)
            .into_iter()
            .map(|role| (role, default_prior(role)))
            .collect();
        Self {
            structure,
            characteristics,
            tau_hierarchy,
            min_each_side_for_variance: default_threshold(),
            require_all_informative: true,
            priors,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.characteristics.is_empty() {
            return Err(ModelError::InvalidSpec(
                "at least one characteristic is required".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.characteristics {
            if !seen.insert(c) {
                return Err(ModelError::InvalidSpec(format!(
                    "characteristic '{c}' listed twice"
                )));
            }
        }
        let required = required_roles(self.structure, self.tau_hierarchy);
        let present: Vec<PriorRole> = self.priors.keys().copied().collect();
        if present != required {
            return Err(ModelError::InvalidSpec(format!(
                "{} model{} needs priors for {required:?}, found {present:?}",
                self.structure,
                if self.tau_hierarchy {
                    " with tau hierarchy"
                } else {
                    ""
                }
            )));
        }
        for (role, prior) in &self.priors {
            prior.validate()?;
            if !role.admits(prior) {
                return Err(ModelError::InvalidSpec(format!(
                    "{} prior not allowed for role {role:?}",
                    prior.family_name()
                )));
            }
        }
        Ok(())
    }

    pub fn prior(&self, role: PriorRole) -> PriorSpec {
        self.priors
            .get(&role)
            .copied()
            .unwrap_or_else(|| default_prior(role))
    }

    /// Switches structure or hierarchy while keeping any priors that remain
    /// applicable and filling the rest with defaults.
    pub fn reshaped(&self, structure: VarianceStructure, tau_hierarchy: bool) -> Self {
        let priors = required_roles(structure, tau_hierarchy)
            .into_iter()
            .map(|role| {
                (
                    role,
                    self.priors
                        .get(&role)
                        .copied()
                        .unwrap_or_else(|| default_prior(role)),
                )
            })
            .collect();
        Self {
            structure,
            tau_hierarchy,
            priors,
            ..self.clone()
        }
    }

    pub fn with_prior(mut self, role: PriorRole, prior: PriorSpec) -> Self {
        self.priors.insert(role, prior);
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let mut spec: Self =
            toml::from_str(text).map_err(|e| ModelError::InvalidSpec(e.to_string()))?;
        for role in required_roles(spec.structure, spec.tau_hierarchy) {
            spec.priors
                .entry(role)
                .or_insert_with(|| default_prior(role));
        }
        spec.validate()?;
        Ok(spec)
    }
}
