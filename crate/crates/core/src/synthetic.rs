//! Forward simulation of meta-epidemiological datasets with known truth.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MetaAnalysis, Trial};
use crate::model::{effect_mean, effect_variance, VarianceStructure};
use crate::stats::expit;

const MAX_FLAG_REDRAWS: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error("invalid truth config: {0}")]
    Invalid(String),
    #[error("could not draw flags with {min} trials on each side in meta-analysis {meta}")]
    FlagRedraw { meta: usize, min: usize },
    #[error("toml: {0}")]
    TomlRead(#[from] toml::de::Error),
    #[error("toml: {0}")]
    TomlWrite(#[from] toml::ser::Error),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl CountRange {
    pub fn fixed(n: u32) -> Self {
        Self { min: n, max: n }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> u32 {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicTruth {
    pub name: String,
    pub b0: f64,
    pub phi: f64,
    /// kappa (an SD) for additive truths, lambda for label-invariant ones.
    pub heterogeneity: f64,
    pub flag_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthConfig {
    pub structure: VarianceStructure,
    pub characteristics: Vec<CharacteristicTruth>,
    /// `ln tau_m^2 ~ N(mu, sigma^2)`
    pub mu: f64,
    pub sigma: f64,
    pub n_meta: usize,
    pub trials_per_meta: CountRange,
    pub arm_size: CountRange,
    /// Baseline log-odds drawn uniformly from `[lo, hi]`.
    pub baseline_range: [f64; 2],
    #[serde(default = "default_effect_mean_sd")]
    pub effect_mean_sd: f64,
    /// Flags of a meta-analysis are redrawn until every characteristic has at
    /// least this many trials on each side.
    #[serde(default)]
    pub min_per_group: usize,
    pub seed: u64,
}

fn default_effect_mean_sd() -> f64 {
    0.5
}

impl TruthConfig {
    /// One characteristic named `c1` with the given truth, 30 meta-analyses of
    /// 6 to 12 trials.
    pub fn univariable(
        structure: VarianceStructure,
        b0: f64,
        phi: f64,
        heterogeneity: f64,
    ) -> Self {
        Self {
            structure,
            characteristics: vec![CharacteristicTruth {
                name: "c1".into(),
                b0,
                phi,
                heterogeneity,
                flag_probability: 0.5,
            }],
            mu: -2.94,
            sigma: 1.0,
            n_meta: 30,
            trials_per_meta: CountRange { min: 6, max: 12 },
            arm_size: CountRange { min: 50, max: 200 },
            baseline_range: [-2.0, -0.5],
            effect_mean_sd: default_effect_mean_sd(),
            min_per_group: 2,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::Invalid(m));
        if self.n_meta == 0 || self.trials_per_meta.max == 0 {
            return bad("no trials to generate".into());
        }
        if self.trials_per_meta.min > self.trials_per_meta.max
            || self.arm_size.min > self.arm_size.max
        {
            return bad("range with min above max".into());
        }
        if self.arm_size.min == 0 {
            return bad("arm size must be positive".into());
        }
        if self.characteristics.len() > 32 {
            return bad("at most 32 characteristics".into());
        }
        if !(self.sigma >= 0.0) || !(self.effect_mean_sd >= 0.0) {
            return bad("sigma and effect_mean_sd must be non-negative".into());
        }
        if !(self.baseline_range[0] <= self.baseline_range[1]) {
            return bad("baseline range reversed".into());
        }
        for c in &self.characteristics {
            if !(c.phi >= 0.0) {
                return bad(format!("{}: phi must be non-negative", c.name));
            }
            let het_ok = match self.structure {
                VarianceStructure::Additive => c.heterogeneity >= 0.0,
                VarianceStructure::LabelInvariant => c.heterogeneity > 0.0,
            };
            if !het_ok {
                return bad(format!(
                    "{}: invalid heterogeneity {}",
                    c.name, c.heterogeneity
                ));
            }
            if !(c.flag_probability > 0.0 && c.flag_probability < 1.0) {
                return bad(format!("{}: flag probability must lie in (0, 1)", c.name));
            }
        }
        if 2 * self.min_per_group > self.trials_per_meta.min as usize {
            return bad("min_per_group needs more trials per meta-analysis".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SyntheticError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, SyntheticError> {
        Ok(toml::to_string(self)?)
    }

    fn variance_parameters(&self) -> Vec<f64> {
        self.characteristics
            .iter()
            .map(|c| match self.structure {
                VarianceStructure::Additive => c.heterogeneity * c.heterogeneity,
                VarianceStructure::LabelInvariant => c.heterogeneity,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    pub trial_id: String,
    pub gamma: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTruth {
    pub meta_id: String,
    pub tau_sq: f64,
    pub d: f64,
    pub b: Vec<f64>,
    pub trials: Vec<TrialTruth>,
}

/// Generating values written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub config: TruthConfig,
    pub meta: Vec<MetaTruth>,
}

impl TruthRecord {
    pub fn to_toml(&self) -> Result<String, SyntheticError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, SyntheticError> {
        Ok(toml::from_str(text)?)
    }
}

/// Draws a dataset: per meta-analysis `tau_m^2 ~ LogNormal(mu, sigma^2)`,
/// `d_m ~ N(0, effect_mean_sd^2)`, `b_jm ~ N(b0_j, phi_j^2)`; per trial
/// Bernoulli flags, `theta` from the structure's normal law, uniform baseline
/// log-odds and binomial arm counts.
pub fn generate(truth: &TruthConfig) -> Result<(Dataset, TruthRecord), SyntheticError> {
    truth.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(truth.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let het = truth.variance_parameters();
    let p = truth.characteristics.len();
    let mut metas = Vec::with_capacity(truth.n_meta);
    let mut record = Vec::with_capacity(truth.n_meta);

    for m in 0..truth.n_meta {
        let tau_sq = (truth.mu + truth.sigma * std_normal.sample(&mut rng)).exp();
        let d = truth.effect_mean_sd * std_normal.sample(&mut rng);
        let b: Vec<f64> = truth
            .characteristics
            .iter()
            .map(|c| c.b0 + c.phi * std_normal.sample(&mut rng))
            .collect();
        let n_trials = truth.trials_per_meta.draw(&mut rng) as usize;
        let flags = draw_flags(truth, n_trials, m, &mut rng)?;

        let mut trials = Vec::with_capacity(n_trials);
        let mut trial_truth = Vec::with_capacity(n_trials);
        for (i, f) in flags.into_iter().enumerate() {
            let mean = effect_mean(&f, d, &b).expect("flag count matches");
            let var = effect_variance(&f, tau_sq, truth.structure, &het, true)
                .expect("validated parameters")
                .variance;
            let theta = mean + var.sqrt() * std_normal.sample(&mut rng);
            let [lo, hi] = truth.baseline_range;
            let gamma = if lo < hi {
                rng.random_range(lo..hi)
            } else {
                lo
            };
            let size_ctrl = truth.arm_size.draw(&mut rng);
            let size_treat = truth.arm_size.draw(&mut rng);
            let events_ctrl = binomial(&mut rng, size_ctrl, expit(gamma));
            let events_treat = binomial(&mut rng, size_treat, expit(gamma + theta));
            let trial_id = format!("T{:02}", i + 1);
            trial_truth.push(TrialTruth {
                trial_id: trial_id.clone(),
                gamma,
                theta,
            });
            trials.push(Trial {
                trial_id,
                events_treat,
                size_treat,
                events_ctrl,
                size_ctrl,
                flags: f,
            });
        }
        let meta_id = format!("MA{:03}", m + 1);
        record.push(MetaTruth {
            meta_id: meta_id.clone(),
            tau_sq,
            d,
            b,
            trials: trial_truth,
        });
        metas.push(MetaAnalysis { meta_id, trials });
    }
    debug_assert!(metas
        .iter()
        .all(|m| m.trials.iter().all(|t| t.flags.len() == p)));
    let names = truth
        .characteristics
        .iter()
        .map(|c| c.name.clone())
        .collect();
    let dataset = Dataset::new(metas, names)?;
    Ok((
        dataset,
        TruthRecord {
            config: truth.clone(),
            meta: record,
        },
    ))
}

fn binomial<R: Rng>(rng: &mut R, n: u32, p: f64) -> u32 {
    let draw = Binomial::new(u64::from(n), p.clamp(0.0, 1.0))
        .expect("probability clamped")
        .sample(rng);
    u32::try_from(draw).expect("bounded by n")
}

fn draw_flags<R: Rng>(
    truth: &TruthConfig,
    n_trials: usize,
    meta: usize,
    rng: &mut R,
) -> Result<Vec<Vec<bool>>, SyntheticError> {
    let p = truth.characteristics.len();
    let k = truth.min_per_group;
    let mut flags = vec![vec![false; p]; n_trials];
    for (j, c) in truth.characteristics.iter().enumerate() {
        let mut ok = false;
        for _ in 0..MAX_FLAG_REDRAWS {
            for row in flags.iter_mut() {
                row[j] = rng.random_bool(c.flag_probability);
            }
            let on = flags.iter().filter(|r| r[j]).count();
            if on >= k && n_trials - on >= k {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(SyntheticError::FlagRedraw { meta, min: k });
        }
    }
    Ok(flags)
}

/// `<dir>/<stem>.truth.toml` for a dataset at `<dir>/<stem>.<ext>`.
pub fn truth_sidecar_path(dataset_path: &Path) -> PathBuf {
    let stem = dataset_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    dataset_path.with_file_name(format!("{stem}.truth.toml"))
}

/// Writes the dataset and its truth sidecar; returns the sidecar path.
pub fn write_simulation(
    dataset_path: &Path,
    dataset: &Dataset,
    record: &TruthRecord,
) -> Result<PathBuf, SyntheticError> {
    std::fs::write(dataset_path, dataset.to_csv_string())?;
    let sidecar = truth_sidecar_path(dataset_path);
    std::fs::write(&sidecar, record.to_toml()?)?;
    Ok(sidecar)
}
