//! Model definitions: priors, the parameter index map, and the joint
//! log-density of the additive and label-invariant models.

pub mod layout;
pub mod prior;
pub mod spec;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{self, Dataset, InformativenessReport};
use crate::stats::{binomial_kernel, expit, ln_choose, logit, normal_logpdf};

pub use layout::{Indicator, Param, ParamLayout, ParameterState, Transform};
pub use prior::{prior_quantiles, sensitivity_priors, NamedPrior, PriorSpec};
pub use spec::{default_prior, ModelSpec, PriorRole, VarianceStructure};

const MAX_CHARACTERISTICS: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("unknown characteristic '{0}'")]
    UnknownCharacteristic(String),
    #[error("no meta-analysis is informative for the requested characteristics")]
    EmptyInformativeSubset,
}

/// Why a density could not be evaluated.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DensityError {
    #[error("{0} is outside the support of its prior")]
    OutOfSupport(String),
    #[error("non-finite density contribution from {0}")]
    NonFinite(String),
}

/// Mean of a trial's underlying effect: `d_m + sum_j x_j b_jm`.
pub fn effect_mean(flags: &[bool], d: f64, bias: &[f64]) -> Result<f64, ModelError> {
    if flags.len() != bias.len() {
        return Err(ModelError::InvalidArgument(format!(
            "{} flags but {} bias terms",
            flags.len(),
            bias.len()
        )));
    }
    Ok(d + flags
        .iter()
        .zip(bias)
        .filter(|(&f, _)| f)
        .map(|(_, b)| b)
        .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceTerm {
    pub variance: f64,
    /// False for cut meta-analyses: the variance uses the current
    /// kappa/lambda values but must not feed back into their updates.
    pub informs_variance_parameters: bool,
}

/// Variance of a trial's underlying effect. `het` holds `kappa_j^2` for the
/// additive structure and `lambda_j` for the label-invariant one.
pub fn effect_variance(
    flags: &[bool],
    tau_sq: f64,
    structure: VarianceStructure,
    het: &[f64],
    apply_variance_terms: bool,
) -> Result<VarianceTerm, ModelError> {
    if flags.len() != het.len() {
        return Err(ModelError::InvalidArgument(format!(
            "{} flags but {} variance terms",
            flags.len(),
            het.len()
        )));
    }
    if tau_sq < 0.0 || het.iter().any(|&h| h < 0.0) {
        return Err(ModelError::InvalidArgument(
            "negative variance input".into(),
        ));
    }
    let flagged = flags.iter().zip(het).filter(|(&f, _)| f).map(|(_, &h)| h);
    let variance = match structure {
        VarianceStructure::Additive => tau_sq + flagged.sum::<f64>(),
        VarianceStructure::LabelInvariant => {
            if het.iter().any(|&h| h == 0.0) {
                return Err(ModelError::InvalidArgument(
                    "variance ratio must be positive".into(),
                ));
            }
            tau_sq * flagged.product::<f64>()
        }
    };
    Ok(VarianceTerm {
        variance,
        informs_variance_parameters: apply_variance_terms,
    })
}

#[derive(Debug, Clone)]
pub(crate) struct TrialData {
    pub meta: usize,
    pub events_treat: u32,
    pub size_treat: u32,
    pub events_ctrl: u32,
    pub size_ctrl: u32,
    pub flags: u32,
}

impl TrialData {
    pub fn flagged(&self, j: usize) -> bool {
        self.flags >> j & 1 == 1
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ResolvedPriors {
    pub location: PriorSpec,
    pub phi_sq: PriorSpec,
    /// Kappa slab or lambda prior.
    pub het: PriorSpec,
    pub tau: Option<PriorSpec>,
    pub tau_mean: Option<PriorSpec>,
    pub tau_sd: Option<PriorSpec>,
    pub mixing: PriorSpec,
}

/// A model bound to a dataset: index map, cut mask and densities.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    dataset: Dataset,
    characteristic_columns: Vec<usize>,
    layout: ParamLayout,
    informativeness: InformativenessReport,
    /// `cut_eligible[m * p + j]`
    cut_eligible: Vec<bool>,
    pub(crate) trials: Vec<TrialData>,
    pub(crate) meta_ranges: Vec<Range<usize>>,
    /// Trials flagged for each characteristic.
    pub(crate) flagged: Vec<Vec<usize>>,
    pub(crate) priors: ResolvedPriors,
    ln_binomial_constant: f64,
}

/// Builds a model on the informative subset of `dataset`.
pub fn build_model(spec: &ModelSpec, dataset: &Dataset) -> Result<Model, ModelError> {
    Model::new(spec, dataset)
}

impl Model {
    pub fn new(spec: &ModelSpec, dataset: &Dataset) -> Result<Self, ModelError> {
        let columns = resolve_characteristics(spec, dataset)?;
        let subset = data::informative_subset_with(dataset, &columns, spec.require_all_informative);
        Self::from_parts(spec, subset, columns)
    }

    /// Builds on `dataset` as given, without dropping uninformative
    /// meta-analyses. Used for prior-recovery checks.
    pub fn new_unfiltered(spec: &ModelSpec, dataset: &Dataset) -> Result<Self, ModelError> {
        let columns = resolve_characteristics(spec, dataset)?;
        Self::from_parts(spec, dataset.clone(), columns)
    }

    fn from_parts(
        spec: &ModelSpec,
        dataset: Dataset,
        columns: Vec<usize>,
    ) -> Result<Self, ModelError> {
        if dataset.meta_analyses.is_empty() {
            return Err(ModelError::EmptyInformativeSubset);
        }
        let p = columns.len();
        let informativeness = data::classify(&dataset, spec.min_each_side_for_variance);
        let mut cut_eligible = Vec::with_capacity(dataset.meta_analyses.len() * p);
        let mut trials = Vec::with_capacity(dataset.n_trials());
        let mut meta_ranges = Vec::with_capacity(dataset.meta_analyses.len());
        for (m, ma) in dataset.meta_analyses.iter().enumerate() {
            cut_eligible.extend(
                columns
                    .iter()
                    .map(|&c| informativeness.get(m, c).cut_eligible),
            );
            let start = trials.len();
            for t in &ma.trials {
                let flags = columns
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| t.flags[c])
                    .fold(0u32, |acc, (j, _)| acc | 1 << j);
                trials.push(TrialData {
                    meta: m,
                    events_treat: t.events_treat,
                    size_treat: t.size_treat,
                    events_ctrl: t.events_ctrl,
                    size_ctrl: t.size_ctrl,
                    flags,
                });
            }
            meta_ranges.push(start..trials.len());
        }
        let flagged = (0..p)
            .map(|j| {
                (0..trials.len())
                    .filter(|&t| trials[t].flagged(j))
                    .collect()
            })
            .collect();
        let ln_binomial_constant = trials
            .iter()
            .map(|t| {
                ln_choose(t.size_treat, t.events_treat) + ln_choose(t.size_ctrl, t.events_ctrl)
            })
            .sum();
        let layout = ParamLayout {
            p,
            n_meta: dataset.meta_analyses.len(),
            n_trials: trials.len(),
            structure: spec.structure,
            tau_hierarchy: spec.tau_hierarchy,
        };
        let priors = ResolvedPriors {
            location: spec.prior(PriorRole::Location),
            phi_sq: spec.prior(PriorRole::PhiSq),
            het: match spec.structure {
                VarianceStructure::Additive => spec.prior(PriorRole::KappaSq),
                VarianceStructure::LabelInvariant => spec.prior(PriorRole::Lambda),
            },
            tau: (!spec.tau_hierarchy).then(|| spec.prior(PriorRole::Tau)),
            tau_mean: spec.tau_hierarchy.then(|| spec.prior(PriorRole::TauMean)),
            tau_sd: spec.tau_hierarchy.then(|| spec.prior(PriorRole::TauSd)),
            mixing: spec.prior(PriorRole::MixingWeight),
        };
        Ok(Self {
            spec: spec.clone(),
            dataset,
            characteristic_columns: columns,
            layout,
            informativeness,
            cut_eligible,
            trials,
            meta_ranges,
            flagged,
            priors,
            ln_binomial_constant,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }
    /// The (subsetted) data the model is fitted to.
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }
    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }
    pub fn structure(&self) -> VarianceStructure {
        self.spec.structure
    }
    pub fn n_characteristics(&self) -> usize {
        self.layout.p
    }
    pub fn n_meta(&self) -> usize {
        self.layout.n_meta
    }
    pub fn n_trials(&self) -> usize {
        self.layout.n_trials
    }
    pub fn informativeness(&self) -> &InformativenessReport {
        &self.informativeness
    }
    pub fn characteristic_names(&self) -> &[String] {
        &self.spec.characteristics
    }
    /// Dataset column of each model characteristic.
    pub fn characteristic_columns(&self) -> &[usize] {
        &self.characteristic_columns
    }
    pub fn meta_of_trial(&self, t: usize) -> usize {
        self.trials[t].meta
    }
    pub fn trials_of_meta(&self, m: usize) -> Range<usize> {
        self.meta_ranges[m].clone()
    }
    pub fn trial_flags(&self, t: usize) -> Vec<bool> {
        (0..self.layout.p)
            .map(|j| self.trials[t].flagged(j))
            .collect()
    }

    /// Whether meta-analysis `m` may inform kappa_j / lambda_j.
    pub fn cut_eligible(&self, m: usize, j: usize) -> bool {
        self.cut_eligible[m * self.layout.p + j]
    }

    /// `mask[m][j]`: true when meta-analysis `m` feeds back into the update
    /// of kappa_j or lambda_j.
    pub fn cut_update_mask(&self) -> Vec<Vec<bool>> {
        (0..self.layout.n_meta)
            .map(|m| {
                (0..self.layout.p)
                    .map(|j| self.cut_eligible(m, j))
                    .collect()
            })
            .collect()
    }

    /// The same model with every meta-analysis allowed to inform kappa/lambda.
    pub fn without_cut(&self) -> Self {
        let mut out = self.clone();
        out.cut_eligible.iter_mut().for_each(|c| *c = true);
        out
    }

    pub fn parameter_name(&self, k: usize) -> String {
        let names = &self.spec.characteristics;
        let meta = |m: usize| &self.dataset.meta_analyses[m].meta_id;
        let trial = |t: usize| {
            let m = self.trials[t].meta;
            let local = t - self.meta_ranges[m].start;
            format!(
                "{}/{}",
                meta(m),
                self.dataset.meta_analyses[m].trials[local].trial_id
            )
        };
        match self.layout.param(k) {
            Param::B0(j) => format!("b0[{}]", names[j]),
            Param::PhiSlab(j) => format!("phi_slab_var[{}]", names[j]),
            Param::KappaSlab(j) => format!("kappa_slab_var[{}]", names[j]),
            Param::Lambda(j) => format!("lambda[{}]", names[j]),
            Param::MixingWeight => "p0".into(),
            Param::TauMean => "mu".into(),
            Param::TauSd => "sigma".into(),
            Param::EffectMean(m) => format!("d[{}]", meta(m)),
            Param::Tau(m) => format!("tau[{}]", meta(m)),
            Param::Bias(m, j) => format!("eta[{},{}]", meta(m), names[j]),
            Param::Baseline(t) => format!("gamma[{}]", trial(t)),
            Param::Effect(t) => format!("theta[{}]", trial(t)),
        }
    }

    // ---- state accessors (natural scale) ----

    pub fn natural(&self, state: &ParameterState, k: usize) -> f64 {
        self.layout
            .transform(self.layout.param(k))
            .to_natural(state.values[k])
    }

    pub fn b0(&self, s: &ParameterState, j: usize) -> f64 {
        s.values[self.layout.b0(j)]
    }

    pub fn phi_on(&self, s: &ParameterState, j: usize) -> bool {
        s.indicators[self.layout.phi_on(j)]
    }

    pub fn phi_sq(&self, s: &ParameterState, j: usize) -> f64 {
        if self.phi_on(s, j) {
            s.values[self.layout.phi_slab(j)].exp()
        } else {
            0.0
        }
    }

    pub fn phi(&self, s: &ParameterState, j: usize) -> f64 {
        if self.phi_on(s, j) {
            (0.5 * s.values[self.layout.phi_slab(j)]).exp()
        } else {
            0.0
        }
    }

    pub fn kappa_on(&self, s: &ParameterState, j: usize) -> bool {
        self.layout.kappa_on(j).is_some_and(|i| s.indicators[i])
    }

    /// `kappa_j^2` (additive) or `lambda_j` (label-invariant).
    pub fn het(&self, s: &ParameterState, j: usize) -> f64 {
        let u = s.values[self.layout.het(j)];
        match self.spec.structure {
            VarianceStructure::Additive if !self.kappa_on(s, j) => 0.0,
            _ => u.exp(),
        }
    }

    pub fn het_values(&self, s: &ParameterState) -> Vec<f64> {
        (0..self.layout.p).map(|j| self.het(s, j)).collect()
    }

    pub fn effect_mean_of(&self, s: &ParameterState, m: usize) -> f64 {
        s.values[self.layout.effect_mean(m)]
    }

    pub fn tau(&self, s: &ParameterState, m: usize) -> f64 {
        s.values[self.layout.tau(m)].exp()
    }

    /// Natural-scale bias `b_jm = b0_j + phi_j * eta_jm`.
    pub fn bias(&self, s: &ParameterState, m: usize, j: usize) -> f64 {
        self.b0(s, j) + self.phi(s, j) * s.values[self.layout.bias(m, j)]
    }

    pub fn biases(&self, s: &ParameterState, m: usize) -> Vec<f64> {
        (0..self.layout.p).map(|j| self.bias(s, m, j)).collect()
    }

    pub fn mixing_weight(&self, s: &ParameterState) -> f64 {
        expit(s.values[self.layout.mixing_weight()])
    }

    pub fn baseline(&self, s: &ParameterState, t: usize) -> f64 {
        s.values[self.layout.baseline(t)]
    }

    pub fn effect(&self, s: &ParameterState, t: usize) -> f64 {
        s.values[self.layout.effect(t)]
    }

    pub fn trial_mean(&self, s: &ParameterState, t: usize) -> f64 {
        let trial = &self.trials[t];
        let mut mean = self.effect_mean_of(s, trial.meta);
        for j in 0..self.layout.p {
            if trial.flagged(j) {
                mean += self.bias(s, trial.meta, j);
            }
        }
        mean
    }

    pub fn trial_variance(&self, s: &ParameterState, t: usize) -> f64 {
        let trial = &self.trials[t];
        let tau_sq = (2.0 * s.values[self.layout.tau(trial.meta)]).exp();
        let mut var = tau_sq;
        for j in 0..self.layout.p {
            if trial.flagged(j) {
                match self.spec.structure {
                    VarianceStructure::Additive => var += self.het(s, j),
                    VarianceStructure::LabelInvariant => var *= self.het(s, j),
                }
            }
        }
        var
    }

    // ---- density terms ----

    /// `ln N(theta_t | mean_t, var_t)`.
    pub(crate) fn theta_term(&self, s: &ParameterState, t: usize) -> f64 {
        normal_logpdf(
            self.effect(s, t),
            self.trial_mean(s, t),
            self.trial_variance(s, t),
        )
    }

    pub(crate) fn ctrl_term(&self, s: &ParameterState, t: usize) -> f64 {
        let trial = &self.trials[t];
        binomial_kernel(trial.events_ctrl, trial.size_ctrl, self.baseline(s, t))
    }

    pub(crate) fn treat_term(&self, s: &ParameterState, t: usize) -> f64 {
        let trial = &self.trials[t];
        binomial_kernel(
            trial.events_treat,
            trial.size_treat,
            self.baseline(s, t) + self.effect(s, t),
        )
    }

    /// Prior of coordinate `tau_m` on the log scale, Jacobian included.
    pub(crate) fn tau_term(&self, s: &ParameterState, m: usize) -> f64 {
        let u = s.values[self.layout.tau(m)];
        match (self.layout.tau_mean(), self.layout.tau_sd()) {
            (Some(mu), Some(sigma)) => {
                let sigma = s.values[sigma].exp();
                // ln tau^2 = 2u ~ N(mu, sigma^2); |d(2u)/du| = 2
                normal_logpdf(2.0 * u, s.values[mu], sigma * sigma) + std::f64::consts::LN_2
            }
            _ => self
                .priors
                .tau
                .expect("tau prior without hierarchy")
                .ln_pdf_log_scale(u),
        }
    }

    pub(crate) fn indicator_term(&self, s: &ParameterState, i: usize) -> f64 {
        let u = s.values[self.layout.mixing_weight()];
        if s.indicators[i] {
            // ln(1 - p0)
            -crate::stats::softplus(u)
        } else {
            -crate::stats::softplus(-u)
        }
    }

    /// Unconstrained-scale prior term of a coordinate whose prior does not
    /// depend on other parameters. Hierarchical coordinates (`tau_m`, and
    /// `theta_t` through its normal term) are handled separately.
    pub(crate) fn own_prior_term(&self, s: &ParameterState, k: usize) -> f64 {
        let u = s.values[k];
        match self.layout.param(k) {
            Param::B0(_) | Param::EffectMean(_) | Param::Baseline(_) => {
                self.priors.location.ln_pdf(u)
            }
            Param::TauMean => self.priors.tau_mean.expect("mu prior").ln_pdf(u),
            Param::PhiSlab(_) => self.priors.phi_sq.ln_pdf_log_scale(u),
            Param::KappaSlab(_) | Param::Lambda(_) => self.priors.het.ln_pdf_log_scale(u),
            Param::TauSd => self
                .priors
                .tau_sd
                .expect("tau sd prior")
                .ln_pdf_log_scale(u),
            Param::MixingWeight => {
                let p = expit(u);
                self.priors.mixing.ln_pdf(p) + Transform::Logit.ln_jacobian(u)
            }
            Param::Bias(..) => -0.5 * (crate::stats::LN_2PI + u * u),
            Param::Tau(m) => self.tau_term(s, m),
            Param::Effect(_) => 0.0,
        }
    }

    /// Binomial log-likelihood of all arms, coefficients included.
    pub fn log_likelihood(&self, s: &ParameterState) -> f64 {
        self.ln_binomial_constant
            + (0..self.layout.n_trials)
                .map(|t| self.ctrl_term(s, t) + self.treat_term(s, t))
                .sum::<f64>()
    }

    /// Joint log prior on the natural scale of every parameter (`tau_m`,
    /// slab variances, `lambda_j`, `sigma`, `p0`), including the hierarchical
    /// terms for `theta`, `eta`, the point-mass indicators and `tau_m`.
    pub fn log_prior(&self, s: &ParameterState) -> Result<f64, DensityError> {
        let l = &self.layout;
        let mut total = 0.0;
        let mut add = |name: &dyn Fn() -> String, value: f64| -> Result<(), DensityError> {
            if value == f64::NEG_INFINITY {
                return Err(DensityError::OutOfSupport(name()));
            }
            if !value.is_finite() {
                return Err(DensityError::NonFinite(name()));
            }
            total += value;
            Ok(())
        };
        for k in 0..l.dim() {
            let param = l.param(k);
            let name = || self.parameter_name(k);
            let x = self.natural(s, k);
            let term = match param {
                Param::B0(_) | Param::EffectMean(_) | Param::Baseline(_) => {
                    self.priors.location.ln_pdf(x)
                }
                Param::TauMean => self.priors.tau_mean.expect("mu prior").ln_pdf(x),
                Param::TauSd => self.priors.tau_sd.expect("sigma prior").ln_pdf(x),
                Param::PhiSlab(_) => self.priors.phi_sq.ln_pdf_log_scale(s.values[k]) - s.values[k],
                Param::KappaSlab(_) | Param::Lambda(_) => {
                    self.priors.het.ln_pdf_log_scale(s.values[k]) - s.values[k]
                }
                Param::MixingWeight => self.priors.mixing.ln_pdf(x),
                Param::Bias(..) => normal_logpdf(x, 0.0, 1.0),
                Param::Tau(m) => self.tau_term(s, m) - s.values[k],
                Param::Effect(t) => self.theta_term(s, t),
            };
            add(&name, term)?;
        }
        for i in 0..l.n_indicators() {
            add(&|| format!("indicator {i}"), self.indicator_term(s, i))?;
        }
        Ok(total)
    }

    /// `sum_k ln |dx_k/du_k|` over all coordinates.
    pub fn log_jacobian(&self, s: &ParameterState) -> f64 {
        (0..self.layout.dim())
            .map(|k| {
                self.layout
                    .transform(self.layout.param(k))
                    .ln_jacobian(s.values[k])
            })
            .sum()
    }

    /// Joint log density on the unconstrained scale: the sampler's target
    /// when no meta-analysis is cut.
    pub fn log_target(&self, s: &ParameterState) -> f64 {
        let l = &self.layout;
        let priors: f64 = (0..l.dim()).map(|k| self.own_prior_term(s, k)).sum();
        let thetas: f64 = (0..l.n_trials).map(|t| self.theta_term(s, t)).sum();
        let indicators: f64 = (0..l.n_indicators())
            .map(|i| self.indicator_term(s, i))
            .sum();
        priors + thetas + indicators + self.log_likelihood(s)
    }

    /// Checks the support invariants of a state.
    pub fn check_support(&self, s: &ParameterState) -> Result<(), DensityError> {
        if s.values.len() != self.layout.dim() || s.indicators.len() != self.layout.n_indicators() {
            return Err(DensityError::NonFinite("state dimension".into()));
        }
        self.log_prior(s).map(|_| ())
    }

    // ---- fitted values ----

    /// Observed `(events, size)` per arm, control arm first within each trial.
    pub fn arm_counts(&self) -> Vec<(u32, u32)> {
        self.trials
            .iter()
            .flat_map(|t| [(t.events_ctrl, t.size_ctrl), (t.events_treat, t.size_treat)])
            .collect()
    }

    pub fn n_arms(&self) -> usize {
        2 * self.layout.n_trials
    }

    /// Fitted event probabilities per arm, in [`Self::arm_counts`] order.
    pub fn fitted_probabilities(&self, s: &ParameterState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_arms());
        self.fitted_probabilities_into(s, &mut out);
        out
    }

    pub(crate) fn fitted_probabilities_into(&self, s: &ParameterState, out: &mut Vec<f64>) {
        out.clear();
        for t in 0..self.layout.n_trials {
            let gamma = self.baseline(s, t);
            out.push(expit(gamma));
            out.push(expit(gamma + self.effect(s, t)));
        }
    }

    // ---- initial values ----

    /// Deterministically dispersed starting point for chain `chain` of
    /// `n_chains`. Locations are offset by `chain - (n_chains - 1) / 2`,
    /// scale parameters sit at prior quantile `(chain + 1) / (n_chains + 1)`,
    /// and trial-level parameters start at empirical logits with a small
    /// seeded jitter.
    pub fn initial_state(&self, chain: usize, n_chains: usize, seed: u64) -> ParameterState {
        let l = &self.layout;
        let offset = chain as f64 - (n_chains as f64 - 1.0) / 2.0;
        let q = (chain as f64 + 1.0) / (n_chains as f64 + 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x1000 + chain as u64);
        let mut s = ParameterState::zeros(l);

        let slab = (0.04f64).ln() + offset;
        for j in 0..l.p {
            s.values[l.b0(j)] = offset;
            s.values[l.phi_slab(j)] = slab;
            s.values[l.het(j)] = match self.spec.structure {
                VarianceStructure::Additive => slab,
                VarianceStructure::LabelInvariant => {
                    self.priors.het.quantile(q).map_or(0.0, f64::ln)
                }
            };
        }
        s.values[l.mixing_weight()] = logit(q);
        let tau0 = match (l.tau_mean(), l.tau_sd()) {
            (Some(mu), Some(sigma)) => {
                s.values[mu] = offset;
                let sd = self.priors.tau_sd.expect("sigma prior");
                s.values[sigma] = sd.quantile(q).map_or(0.0, f64::ln);
                (0.5 * offset).exp()
            }
            _ => self
                .priors
                .tau
                .expect("tau prior")
                .quantile(q)
                .unwrap_or(1.0),
        };
        for m in 0..l.n_meta {
            s.values[l.effect_mean(m)] = offset;
            s.values[l.tau(m)] = tau0.ln();
        }
        for (t, trial) in self.trials.iter().enumerate() {
            let emp = |r: u32, n: u32| logit((f64::from(r) + 0.5) / (f64::from(n) + 1.0));
            let gamma = emp(trial.events_ctrl, trial.size_ctrl);
            let theta = emp(trial.events_treat, trial.size_treat) - gamma;
            s.values[l.baseline(t)] = gamma + rng.random_range(-0.05..0.05);
            s.values[l.effect(t)] = theta + 0.1 * offset + rng.random_range(-0.05..0.05);
        }
        s
    }
}

fn resolve_characteristics(spec: &ModelSpec, dataset: &Dataset) -> Result<Vec<usize>, ModelError> {
    spec.validate()?;
    if spec.characteristics.len() > MAX_CHARACTERISTICS {
        return Err(ModelError::InvalidSpec(format!(
            "at most {MAX_CHARACTERISTICS} characteristics are supported"
        )));
    }
    spec.characteristics
        .iter()
        .map(|name| {
            dataset
                .characteristic_index(name)
                .ok_or_else(|| ModelError::UnknownCharacteristic(name.clone()))
        })
        .collect()
}

/// Serializable description of the index map.
#[derive(Debug, Clone, Serialize)]
pub struct IndexMapEntry {
    pub index: usize,
    pub name: String,
    pub param: Param,
    pub transform: Transform,
}

impl Model {
    pub fn index_map(&self) -> Vec<IndexMapEntry> {
        (0..self.dim())
            .map(|k| {
                let param = self.layout.param(k);
                IndexMapEntry {
                    index: k,
                    name: self.parameter_name(k),
                    param,
                    transform: self.layout.transform(param),
                }
            })
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod tests;
