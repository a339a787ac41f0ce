//! Single-chain sampler.
//!
//! Besides one random-walk update per coordinate the sweep contains:
//!
//! - `FlipPhi` / `FlipKappa`: Metropolized toggle of a point-mass indicator
//!   with the slab value held fixed. While an indicator is off its slab
//!   variance is redrawn exactly from the prior. Switching `z_phi` on also
//!   redraws the standardized biases from their Gaussian conditional given
//!   the effects; switching it off redraws them from N(0, 1).
//! - `ShiftB0`: `b0_j += delta` with every `eta_mj` moved so that `b_jm` is
//!   unchanged.
//! - `ScalePhi`: rescales `phi_j` with `b_jm` held fixed.
//! - `ScaleTau`: rescales `tau_m` and the effect deviations of its trials.
//! - `ShiftEffect`: moves `d_m` together with every effect of its trials.
//!
//! Each update evaluates only the density terms that change; the rest of the
//! joint cancels in the acceptance ratio.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::residual_deviance;
use crate::model::{Model, Param, ParameterState};

use super::{
    chain_rng, column_value, ChainDraws, Column, FreeMask, McmcConfig, McmcError, MoveStats,
};

const COLLAPSE_LOG_SCALE: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Coord(usize),
    FlipPhi(usize),
    FlipKappa(usize),
    ShiftB0(usize),
    ScalePhi(usize),
    ScaleTau(usize),
    ShiftEffect(usize),
}

impl MoveKind {
    fn is_flip(self) -> bool {
        matches!(self, Self::FlipPhi(_) | Self::FlipKappa(_))
    }
}

#[derive(Debug, Clone)]
struct MoveState {
    kind: MoveKind,
    log_scale: f64,
    proposed: u64,
    accepted: u64,
}

/// Moves available under a free mask, in sweep order.
pub(crate) fn build_moves(model: &Model, free: Option<&FreeMask>) -> Vec<MoveKind> {
    let l = model.layout();
    let cf = |k: usize| free.is_none_or(|f| f.coords[k]);
    let inf = |i: usize| free.is_none_or(|f| f.indicators[i]);
    let mut moves: Vec<MoveKind> = (0..l.dim())
        .filter(|&k| cf(k))
        .map(MoveKind::Coord)
        .collect();
    for j in 0..l.p {
        if inf(l.phi_on(j)) {
            moves.push(MoveKind::FlipPhi(j));
        }
        if let Some(i) = l.kappa_on(j) {
            if inf(i) {
                moves.push(MoveKind::FlipKappa(j));
            }
        }
    }
    for j in 0..l.p {
        let etas_free = (0..l.n_meta).all(|m| cf(l.bias(m, j)));
        if etas_free && cf(l.b0(j)) {
            moves.push(MoveKind::ShiftB0(j));
        }
        if etas_free && cf(l.phi_slab(j)) {
            moves.push(MoveKind::ScalePhi(j));
        }
    }
    for m in 0..l.n_meta {
        let thetas_free = model.trials_of_meta(m).all(|t| cf(l.effect(t)));
        if thetas_free && cf(l.tau(m)) {
            moves.push(MoveKind::ScaleTau(m));
        }
        if thetas_free && cf(l.effect_mean(m)) {
            moves.push(MoveKind::ShiftEffect(m));
        }
    }
    moves
}

pub(crate) struct ChainSampler<'a> {
    model: &'a Model,
    config: &'a McmcConfig,
    pub(crate) state: ParameterState,
    rng: ChaCha8Rng,
    moves: Vec<MoveState>,
    chain: usize,
    saved: Vec<(usize, f64)>,
    scratch: Vec<f64>,
    counts: Vec<(u32, u32)>,
    saturated: f64,
    /// Per characteristic: every `eta_mj` is free, so `FlipPhi` may redraw them.
    etas_free: Vec<bool>,
}

impl<'a> ChainSampler<'a> {
    pub(crate) fn new(
        model: &'a Model,
        config: &'a McmcConfig,
        free: Option<&FreeMask>,
        start: ParameterState,
        chain: usize,
    ) -> Result<Self, McmcError> {
        if start.values.len() != model.dim()
            || start.indicators.len() != model.layout().n_indicators()
        {
            return Err(McmcError::InvalidConfig(format!(
                "initial state for chain {chain} has the wrong dimension"
            )));
        }
        let lt = model.log_target(&start);
        if !lt.is_finite() {
            let detail = match model.check_support(&start) {
                Err(e) => e.to_string(),
                Ok(()) => format!("log target {lt}"),
            };
            return Err(McmcError::NonFiniteInitial { chain, detail });
        }
        let moves = build_moves(model, free)
            .into_iter()
            .map(|kind| MoveState {
                kind,
                log_scale: initial_log_scale(model, kind),
                proposed: 0,
                accepted: 0,
            })
            .collect();
        let l = model.layout();
        let etas_free = (0..l.p)
            .map(|j| (0..l.n_meta).all(|m| free.is_none_or(|f| f.coords[l.bias(m, j)])))
            .collect();
        Ok(Self {
            model,
            config,
            state: start,
            rng: chain_rng(config.seed, chain),
            moves,
            chain,
            saved: Vec::new(),
            scratch: Vec::new(),
            counts: model.arm_counts(),
            saturated: saturated_kernel(model),
            etas_free,
        })
    }

    pub(crate) fn run(mut self, columns: &[Column]) -> Result<ChainDraws, McmcError> {
        let cfg = self.config;
        let n_keep = cfg.draws_per_chain();
        let mut out: Vec<Vec<f64>> = columns.iter().map(|_| Vec::with_capacity(n_keep)).collect();
        let mut deviance = Vec::with_capacity(n_keep);
        let n_arms = self.model.n_arms();
        let mut fitted_sum = vec![0.0; n_arms];
        let mut fitted = Vec::with_capacity(n_arms);

        for iter in 0..cfg.burn_in + cfg.iterations {
            let gain = (iter < cfg.burn_in)
                .then(|| (1.0 + iter as f64 / cfg.adapt_window as f64).powf(-0.6));
            self.sweep(gain)?;
            if iter >= cfg.burn_in && (iter - cfg.burn_in + 1) % cfg.thin == 0 {
                for (series, &col) in out.iter_mut().zip(columns) {
                    series.push(column_value(self.model, &self.state, col));
                }
                self.model
                    .fitted_probabilities_into(&self.state, &mut fitted);
                // same formula as the plug-in, so one draw gives p_D = 0
                let dev = residual_deviance(&self.counts, &fitted)
                    .unwrap_or_else(|_| self.log_scale_deviance());
                deviance.push(dev);
                for (acc, p) in fitted_sum.iter_mut().zip(&fitted) {
                    *acc += p;
                }
            }
        }
        let n = deviance.len().max(1) as f64;
        let fitted_mean = fitted_sum.into_iter().map(|s| s / n).collect();
        let acceptance = self
            .moves
            .iter()
            .map(|mv| MoveStats {
                name: move_name(self.model, mv.kind),
                kind: mv.kind,
                proposed: mv.proposed,
                accepted: mv.accepted,
                scale: (!mv.kind.is_flip()).then(|| mv.log_scale.exp()),
            })
            .collect();
        Ok(ChainDraws {
            columns: out,
            deviance,
            fitted_mean,
            acceptance,
            final_state: self.state,
        })
    }

    pub(crate) fn sweep(&mut self, gain: Option<f64>) -> Result<(), McmcError> {
        for idx in 0..self.moves.len() {
            let kind = self.moves[idx].kind;
            let scale = self.moves[idx].log_scale.exp();
            let Some(accepted) = self.step(kind, scale) else {
                continue;
            };
            let target = self.config.target_accept;
            let mv = &mut self.moves[idx];
            match gain {
                Some(g) if !kind.is_flip() => {
                    mv.log_scale += g * (f64::from(u8::from(accepted)) - target);
                    if mv.log_scale < COLLAPSE_LOG_SCALE {
                        return Err(McmcError::AdaptationCollapse {
                            chain: self.chain,
                            parameter: move_name(self.model, kind),
                        });
                    }
                }
                Some(_) => {}
                None => {
                    mv.proposed += 1;
                    mv.accepted += u64::from(accepted);
                }
            }
        }
        Ok(())
    }

    /// One update. `None` when the move did not apply as a Metropolis step.
    fn step(&mut self, kind: MoveKind, scale: f64) -> Option<bool> {
        let m = self.model;
        let l = m.layout();
        match kind {
            MoveKind::Coord(k) => match l.param(k) {
                Param::PhiSlab(j) if !m.phi_on(&self.state, j) => {
                    self.state.values[k] = m.priors.phi_sq.sample_log_scale(&mut self.rng);
                    return None;
                }
                Param::KappaSlab(j) if !m.kappa_on(&self.state, j) => {
                    self.state.values[k] = m.priors.het.sample_log_scale(&mut self.rng);
                    return None;
                }
                _ => {}
            },
            MoveKind::FlipPhi(j) if self.etas_free[j] => return Some(self.flip_phi(j)),
            MoveKind::FlipPhi(j) => return Some(self.flip(l.phi_on(j), j, false)),
            MoveKind::FlipKappa(j) => {
                return Some(self.flip(l.kappa_on(j).expect("additive"), j, true))
            }
            MoveKind::ShiftB0(j) | MoveKind::ScalePhi(j) if !m.phi_on(&self.state, j) => {
                return None
            }
            _ => {}
        }
        let delta = scale * self.rng.sample::<f64, _>(StandardNormal);
        let before = self.terms(kind);
        let log_jacobian = self.apply(kind, delta);
        let after = self.terms(kind);
        let log_ratio = after - before + log_jacobian;
        let u: f64 = self.rng.random();
        if u.ln() < log_ratio {
            self.saved.clear();
            true
        } else {
            for (k, v) in self.saved.drain(..) {
                self.state.values[k] = v;
            }
            false
        }
        .into()
    }

    fn flip(&mut self, indicator: usize, j: usize, cut: bool) -> bool {
        let before = self.model.indicator_term(&self.state, indicator) + self.flagged_theta(j, cut);
        self.state.indicators[indicator] ^= true;
        let after = self.model.indicator_term(&self.state, indicator) + self.flagged_theta(j, cut);
        let u: f64 = self.rng.random();
        if u.ln() < after - before {
            true
        } else {
            self.state.indicators[indicator] ^= true;
            false
        }
    }

    /// Toggles `z_phi[j]` jointly with all `eta_mj`. Given the slab variance
    /// `v`, the effects and everything else, `eta_mj` is Gaussian with
    /// precision `1 + v S` and mean `sqrt(v) R / (1 + v S)`, where `S` and `R`
    /// sum `1 / var_t` and `r_t / var_t` over flagged trials of `m` and `r_t`
    /// is the effect residual with the bias term replaced by `b0_j`. That
    /// conditional is the proposal when switching on; N(0, 1), the
    /// conditional while off, is the proposal when switching off.
    fn flip_phi(&mut self, j: usize) -> bool {
        let m = self.model;
        let l = m.layout();
        let indicator = l.phi_on(j);
        let was_on = self.state.indicators[indicator];
        let phi_now = m.phi(&self.state, j);
        let root_v = (0.5 * self.state.values[l.phi_slab(j)]).exp();

        let mut cond = std::mem::take(&mut self.scratch);
        cond.clear();
        for mm in 0..l.n_meta {
            let eta = self.state.values[l.bias(mm, j)];
            let (mut s_inv, mut r_sum) = (0.0, 0.0);
            for t in m.trials_of_meta(mm).filter(|&t| m.trials[t].flagged(j)) {
                let var = m.trial_variance(&self.state, t);
                let r = m.effect(&self.state, t) - m.trial_mean(&self.state, t) + phi_now * eta;
                s_inv += 1.0 / var;
                r_sum += r / var;
            }
            let prec = 1.0 + root_v * root_v * s_inv;
            cond.push(root_v * r_sum / prec);
            cond.push(prec);
        }
        // log N(x; mean, 1/prec) - log N(x; 0, 1), constants cancelling
        let log_q_ratio = |x: f64, mean: f64, prec: f64| {
            0.5 * prec.ln() - 0.5 * prec * (x - mean) * (x - mean) + 0.5 * x * x
        };

        let before = m.indicator_term(&self.state, indicator) + self.flagged_theta(j, false);
        let mut log_ratio = -before;
        self.state.indicators[indicator] = !was_on;
        for mm in 0..l.n_meta {
            let k = l.bias(mm, j);
            let (mean, prec) = (cond[2 * mm], cond[2 * mm + 1]);
            self.save(k);
            let z: f64 = self.rng.sample(StandardNormal);
            if was_on {
                log_ratio += log_q_ratio(self.state.values[k], mean, prec);
                self.state.values[k] = z;
            } else {
                let x = mean + z / prec.sqrt();
                log_ratio -= log_q_ratio(x, mean, prec);
                self.state.values[k] = x;
            }
        }
        self.scratch = cond;
        log_ratio += m.indicator_term(&self.state, indicator) + self.flagged_theta(j, false);
        let u: f64 = self.rng.random();
        if u.ln() < log_ratio {
            self.saved.clear();
            true
        } else {
            self.state.indicators[indicator] = was_on;
            for (k, v) in self.saved.drain(..) {
                self.state.values[k] = v;
            }
            false
        }
    }

    fn save(&mut self, k: usize) {
        self.saved.push((k, self.state.values[k]));
    }

    /// Mutates the state by `delta` and returns the log Jacobian of the move.
    fn apply(&mut self, kind: MoveKind, delta: f64) -> f64 {
        let m = self.model;
        let l = m.layout();
        match kind {
            MoveKind::Coord(k) => {
                self.save(k);
                self.state.values[k] += delta;
                0.0
            }
            MoveKind::ShiftB0(j) => {
                let phi = m.phi(&self.state, j);
                self.save(l.b0(j));
                self.state.values[l.b0(j)] += delta;
                for mm in 0..l.n_meta {
                    let k = l.bias(mm, j);
                    self.save(k);
                    self.state.values[k] -= delta / phi;
                }
                0.0
            }
            MoveKind::ScalePhi(j) => {
                let k = l.phi_slab(j);
                self.save(k);
                self.state.values[k] += delta;
                let factor = (-0.5 * delta).exp();
                for mm in 0..l.n_meta {
                    let k = l.bias(mm, j);
                    self.save(k);
                    self.state.values[k] *= factor;
                }
                -0.5 * delta * l.n_meta as f64
            }
            MoveKind::ScaleTau(mm) => {
                let trials = m.trials_of_meta(mm);
                let mut scratch = std::mem::take(&mut self.scratch);
                scratch.clear();
                for t in trials.clone() {
                    scratch.push(m.trial_mean(&self.state, t));
                    scratch.push(m.trial_variance(&self.state, t));
                }
                self.save(l.tau(mm));
                self.state.values[l.tau(mm)] += delta;
                let mut log_j = 0.0;
                for (i, t) in trials.enumerate() {
                    let (mean, var) = (scratch[2 * i], scratch[2 * i + 1]);
                    let ratio = m.trial_variance(&self.state, t) / var;
                    let k = l.effect(t);
                    self.save(k);
                    self.state.values[k] = mean + (self.state.values[k] - mean) * ratio.sqrt();
                    log_j += 0.5 * ratio.ln();
                }
                self.scratch = scratch;
                log_j
            }
            MoveKind::ShiftEffect(mm) => {
                self.save(l.effect_mean(mm));
                self.state.values[l.effect_mean(mm)] += delta;
                for t in m.trials_of_meta(mm) {
                    self.save(l.effect(t));
                    self.state.values[l.effect(t)] += delta;
                }
                0.0
            }
            MoveKind::FlipPhi(_) | MoveKind::FlipKappa(_) => unreachable!("flips handled apart"),
        }
    }

    /// Sum of the log-density terms a move can change.
    pub(crate) fn terms(&self, kind: MoveKind) -> f64 {
        let m = self.model;
        let l = m.layout();
        let s = &self.state;
        match kind {
            MoveKind::Coord(k) => self.coord_terms(k),
            MoveKind::ShiftB0(j) => {
                m.own_prior_term(s, l.b0(j))
                    + (0..l.n_meta)
                        .map(|mm| m.own_prior_term(s, l.bias(mm, j)))
                        .sum::<f64>()
            }
            MoveKind::ScalePhi(j) => {
                m.own_prior_term(s, l.phi_slab(j))
                    + (0..l.n_meta)
                        .map(|mm| m.own_prior_term(s, l.bias(mm, j)))
                        .sum::<f64>()
            }
            MoveKind::ScaleTau(mm) => m.tau_term(s, mm) + self.meta_effect_terms(mm),
            MoveKind::ShiftEffect(mm) => {
                m.own_prior_term(s, l.effect_mean(mm)) + self.meta_effect_terms(mm)
            }
            MoveKind::FlipPhi(_) | MoveKind::FlipKappa(_) => unreachable!("flips handled apart"),
        }
    }

    fn coord_terms(&self, k: usize) -> f64 {
        let m = self.model;
        let l = m.layout();
        let s = &self.state;
        let own = m.own_prior_term(s, k);
        own + match l.param(k) {
            Param::B0(j) | Param::PhiSlab(j) => self.flagged_theta(j, false),
            Param::KappaSlab(j) | Param::Lambda(j) => self.flagged_theta(j, true),
            Param::MixingWeight => (0..l.n_indicators()).map(|i| m.indicator_term(s, i)).sum(),
            Param::TauMean | Param::TauSd => (0..l.n_meta).map(|mm| m.tau_term(s, mm)).sum(),
            Param::EffectMean(mm) | Param::Tau(mm) => {
                m.trials_of_meta(mm).map(|t| m.theta_term(s, t)).sum()
            }
            Param::Bias(mm, j) => m
                .trials_of_meta(mm)
                .filter(|&t| m.trials[t].flagged(j))
                .map(|t| m.theta_term(s, t))
                .sum(),
            Param::Baseline(t) => m.ctrl_term(s, t) + m.treat_term(s, t),
            Param::Effect(t) => m.treat_term(s, t) + m.theta_term(s, t),
        }
    }

    /// Effect terms of trials flagged for `j`; with `cut`, only those in
    /// meta-analyses eligible to inform kappa_j / lambda_j.
    fn flagged_theta(&self, j: usize, cut: bool) -> f64 {
        let m = self.model;
        m.flagged[j]
            .iter()
            .filter(|&&t| !cut || m.cut_eligible(m.trials[t].meta, j))
            .map(|&t| m.theta_term(&self.state, t))
            .sum()
    }

    /// Residual deviance from the binomial kernels on the log-odds scale,
    /// finite even where a fitted probability rounds to 0 or 1.
    fn log_scale_deviance(&self) -> f64 {
        let m = self.model;
        let kernel: f64 = (0..m.n_trials())
            .map(|t| m.ctrl_term(&self.state, t) + m.treat_term(&self.state, t))
            .sum();
        (2.0 * (self.saturated - kernel)).max(0.0)
    }

    fn meta_effect_terms(&self, mm: usize) -> f64 {
        let m = self.model;
        m.trials_of_meta(mm)
            .map(|t| m.treat_term(&self.state, t) + m.theta_term(&self.state, t))
            .sum()
    }
}

/// `sum r ln(r/n) + (n-r) ln((n-r)/n)` over arms, with `0 ln 0 = 0`.
fn saturated_kernel(model: &Model) -> f64 {
    let xlogy = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * y.ln() };
    model
        .arm_counts()
        .into_iter()
        .map(|(r, n)| {
            let (r, n) = (f64::from(r), f64::from(n));
            xlogy(r, r / n) + xlogy(n - r, (n - r) / n)
        })
        .sum()
}

fn initial_log_scale(model: &Model, kind: MoveKind) -> f64 {
    match kind {
        MoveKind::Coord(k) => match model.layout().param(k) {
            Param::PhiSlab(_) | Param::KappaSlab(_) | Param::MixingWeight => 0.0,
            _ => 0.3f64.ln(),
        },
        _ => 0.2f64.ln(),
    }
}

pub(crate) fn move_name(model: &Model, kind: MoveKind) -> String {
    let names = model.characteristic_names();
    let meta = |m: usize| &model.dataset().meta_analyses[m].meta_id;
    match kind {
        MoveKind::Coord(k) => model.parameter_name(k),
        MoveKind::FlipPhi(j) => format!("flip z_phi[{}]", names[j]),
        MoveKind::FlipKappa(j) => format!("flip z_kappa[{}]", names[j]),
        MoveKind::ShiftB0(j) => format!("shift b0[{}]", names[j]),
        MoveKind::ScalePhi(j) => format!("scale phi[{}]", names[j]),
        MoveKind::ScaleTau(m) => format!("scale tau[{}]", meta(m)),
        MoveKind::ShiftEffect(m) => format!("shift d[{}]", meta(m)),
    }
}

#[cfg(test)]
pub(crate) fn test_sampler<'a>(
    model: &'a Model,
    config: &'a McmcConfig,
    start: ParameterState,
) -> ChainSampler<'a> {
    ChainSampler::new(model, config, None, start, 0).expect("finite start")
}

#[cfg(test)]
impl ChainSampler<'_> {
    /// Applies `kind` with `delta` and returns
    /// `(local delta + log jacobian, log jacobian)`, leaving the state moved.
    pub(crate) fn probe(&mut self, kind: MoveKind, delta: f64) -> (f64, f64) {
        let before = self.terms(kind);
        let lj = self.apply(kind, delta);
        self.saved.clear();
        (self.terms(kind) - before, lj)
    }

    pub(crate) fn moves(&self) -> Vec<MoveKind> {
        self.moves.iter().map(|m| m.kind).collect()
    }
}
