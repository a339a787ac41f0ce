//! Adaptive random-walk Metropolis-within-Gibbs over a [`Model`]'s index map.
//!
//! Every coordinate is updated one at a time on its unconstrained scale, in
//! index-map order, followed by the point-mass indicator flips and a few
//! joint moves that leave the target invariant while crossing the usual
//! hierarchical-model ridges (see [`sampler`]). Proposal scales adapt by
//! Robbins-Monro during burn-in only and are frozen afterwards.
//!
//! Meta-analyses that are not cut-eligible for characteristic `j` use the
//! current kappa_j / lambda_j but their effect terms are left out of the
//! acceptance ratio of every kappa_j / lambda_j update.

mod sampler;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Model, Param, ParameterState, VarianceStructure};

pub use sampler::MoveKind;

#[derive(Debug, thiserror::Error)]
pub enum McmcError {
    #[error("invalid MCMC config: {0}")]
    InvalidConfig(String),
    #[error("chain {chain}: non-finite density at the initial state ({detail})")]
    NonFiniteInitial { chain: usize, detail: String },
    #[error("chain {chain}: proposal scale for {parameter} collapsed during adaptation")]
    AdaptationCollapse { chain: usize, parameter: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which quantities are stored for every retained iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monitor {
    /// Global parameters and derived standard deviations.
    Globals,
    /// Globals plus `d_m`, `tau_m`, `b_jm`.
    GlobalsAndMeta,
    /// Everything, including trial-level parameters and slab variances.
    All,
    /// An explicit list of columns.
    Columns(Vec<Column>),
}

/// One stored series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Column {
    /// Natural-scale value of an index-map coordinate.
    Coord(usize),
    /// `phi_j = sqrt(z_j * v_j)`
    Phi(usize),
    /// `kappa_j = sqrt(z_j * v_j)` (additive only)
    Kappa(usize),
    /// Natural-scale bias `b_jm`.
    Bias(usize, usize),
    IndicatorPhi(usize),
    IndicatorKappa(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
    pub seed: u64,
    pub adapt_window: usize,
    pub target_accept: f64,
    pub monitor: Monitor,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 3,
            burn_in: 5_000,
            iterations: 20_000,
            thin: 1,
            seed: 1,
            adapt_window: 100,
            target_accept: 0.44,
            monitor: Monitor::Globals,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), McmcError> {
        let bad = |m: &str| Err(McmcError::InvalidConfig(m.into()));
        if self.n_chains == 0 {
            return bad("n_chains must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        if self.adapt_window == 0 {
            return bad("adapt_window must be positive");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        self.iterations / self.thin
    }
}

/// Restricts sampling to a subset of coordinates; the rest stay at their
/// initial values.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeMask {
    pub coords: Vec<bool>,
    pub indicators: Vec<bool>,
}

impl FreeMask {
    pub fn only(model: &Model, params: &[Param]) -> Self {
        let mut coords = vec![false; model.dim()];
        for &p in params {
            if let Some(k) = model.layout().index_of(p) {
                coords[k] = true;
            }
        }
        Self {
            coords,
            indicators: vec![false; model.layout().n_indicators()],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub free: Option<FreeMask>,
    /// One starting state per chain; defaults to [`initial_states`].
    pub initial: Option<Vec<ParameterState>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub name: String,
    pub kind: MoveKind,
    pub proposed: u64,
    pub accepted: u64,
    /// Frozen proposal standard deviation (unconstrained scale); `None` for
    /// indicator flips.
    pub scale: Option<f64>,
}

impl MoveStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    /// `columns[c][i]`: value of column `c` at retained iteration `i`.
    pub columns: Vec<Vec<f64>>,
    /// Residual deviance at each retained iteration.
    pub deviance: Vec<f64>,
    /// Mean fitted probability of every arm over the retained iterations.
    pub fitted_mean: Vec<f64>,
    /// Post-burn-in acceptance statistics per move.
    pub acceptance: Vec<MoveStats>,
    pub final_state: ParameterState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub columns: Vec<Column>,
    pub chains: Vec<ChainDraws>,
    pub config: McmcConfig,
}

impl PosteriorDraws {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Per-chain series for a named column.
    pub fn chains_of(&self, name: &str) -> Option<Vec<&[f64]>> {
        let c = self.column_index(name)?;
        Some(
            self.chains
                .iter()
                .map(|ch| ch.columns[c].as_slice())
                .collect(),
        )
    }

    /// All chains concatenated in chain order.
    pub fn pooled(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column_index(name)?;
        Some(self.pooled_column(c))
    }

    pub fn pooled_column(&self, c: usize) -> Vec<f64> {
        self.chains
            .iter()
            .flat_map(|ch| ch.columns[c].iter().copied())
            .collect()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.chains.first().map_or(0, |c| c.deviance.len())
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.deviance.len()).sum()
    }

    /// Writes one chain as delimited text: header of column names, one row
    /// per retained iteration.
    pub fn write_chain_csv<W: Write>(&self, chain: usize, mut out: W) -> std::io::Result<()> {
        let ch = &self.chains[chain];
        writeln!(out, "iteration,{},deviance", self.names.join(","))?;
        for i in 0..ch.deviance.len() {
            write!(out, "{}", i + 1)?;
            for col in &ch.columns {
                write!(out, ",{}", col[i])?;
            }
            writeln!(out, ",{}", ch.deviance[i])?;
        }
        Ok(())
    }
}

/// Column list for a monitor setting.
pub fn monitored_columns(model: &Model, monitor: &Monitor) -> Vec<Column> {
    let l = model.layout();
    let mut cols = Vec::new();
    let globals = |cols: &mut Vec<Column>| {
        for j in 0..l.p {
            cols.push(Column::Coord(l.b0(j)));
            cols.push(Column::Phi(j));
            match l.structure {
                VarianceStructure::Additive => cols.push(Column::Kappa(j)),
                VarianceStructure::LabelInvariant => cols.push(Column::Coord(l.het(j))),
            }
        }
        cols.push(Column::Coord(l.mixing_weight()));
        if let (Some(mu), Some(sigma)) = (l.tau_mean(), l.tau_sd()) {
            cols.push(Column::Coord(mu));
            cols.push(Column::Coord(sigma));
        }
        for j in 0..l.p {
            cols.push(Column::IndicatorPhi(j));
            if l.structure == VarianceStructure::Additive {
                cols.push(Column::IndicatorKappa(j));
            }
        }
    };
    let metas = |cols: &mut Vec<Column>| {
        for m in 0..l.n_meta {
            cols.push(Column::Coord(l.effect_mean(m)));
            cols.push(Column::Coord(l.tau(m)));
            for j in 0..l.p {
                cols.push(Column::Bias(m, j));
            }
        }
    };
    match monitor {
        Monitor::Globals => globals(&mut cols),
        Monitor::GlobalsAndMeta => {
            globals(&mut cols);
            metas(&mut cols);
        }
        Monitor::All => {
            globals(&mut cols);
            for j in 0..l.p {
                cols.push(Column::Coord(l.phi_slab(j)));
                if l.structure == VarianceStructure::Additive {
                    cols.push(Column::Coord(l.het(j)));
                }
            }
            metas(&mut cols);
            for t in 0..l.n_trials {
                cols.push(Column::Coord(l.baseline(t)));
                cols.push(Column::Coord(l.effect(t)));
            }
        }
        Monitor::Columns(list) => cols.extend(list.iter().copied()),
    }
    cols
}

pub fn column_name(model: &Model, column: Column) -> String {
    let names = model.characteristic_names();
    let meta = |m: usize| &model.dataset().meta_analyses[m].meta_id;
    match column {
        Column::Coord(k) => model.parameter_name(k),
        Column::Phi(j) => format!("phi[{}]", names[j]),
        Column::Kappa(j) => format!("kappa[{}]", names[j]),
        Column::Bias(m, j) => format!("b[{},{}]", meta(m), names[j]),
        Column::IndicatorPhi(j) => format!("z_phi[{}]", names[j]),
        Column::IndicatorKappa(j) => format!("z_kappa[{}]", names[j]),
    }
}

pub(crate) fn column_value(model: &Model, s: &ParameterState, column: Column) -> f64 {
    let l = model.layout();
    match column {
        Column::Coord(k) => model.natural(s, k),
        Column::Phi(j) => model.phi(s, j),
        Column::Kappa(j) => model.het(s, j).sqrt(),
        Column::Bias(m, j) => model.bias(s, m, j),
        Column::IndicatorPhi(j) => f64::from(u8::from(s.indicators[l.phi_on(j)])),
        Column::IndicatorKappa(j) => {
            f64::from(u8::from(l.kappa_on(j).is_some_and(|i| s.indicators[i])))
        }
    }
}

/// Dispersed starting states, one per chain.
pub fn initial_states(model: &Model, n_chains: usize, seed: u64) -> Vec<ParameterState> {
    (0..n_chains)
        .map(|c| model.initial_state(c, n_chains, seed))
        .collect()
}

/// Random stream for chain `chain`: the run seed selects the key, the chain
/// index the stream, so chains never share random numbers.
pub(crate) fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

pub fn run(model: &Model, config: &McmcConfig) -> Result<PosteriorDraws, McmcError> {
    run_with(model, config, &RunOptions::default())
}

pub fn run_with(
    model: &Model,
    config: &McmcConfig,
    options: &RunOptions,
) -> Result<PosteriorDraws, McmcError> {
    config.validate()?;
    let starts = match &options.initial {
        Some(states) => {
            if states.len() != config.n_chains {
                return Err(McmcError::InvalidConfig(format!(
                    "{} initial states for {} chains",
                    states.len(),
                    config.n_chains
                )));
            }
            states.clone()
        }
        None => initial_states(model, config.n_chains, config.seed),
    };
    if let Some(mask) = &options.free {
        if mask.coords.len() != model.dim()
            || mask.indicators.len() != model.layout().n_indicators()
        {
            return Err(McmcError::InvalidConfig(
                "free mask has the wrong dimension".into(),
            ));
        }
    }
    let columns = monitored_columns(model, &config.monitor);
    let names = columns.iter().map(|&c| column_name(model, c)).collect();
    let chains = starts
        .into_par_iter()
        .enumerate()
        .map(|(c, start)| {
            sampler::ChainSampler::new(model, config, options.free.as_ref(), start, c)?
                .run(&columns)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PosteriorDraws {
        names,
        columns,
        chains,
        config: config.clone(),
    })
}
