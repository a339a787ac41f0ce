//! Convergence and fit assessment.

use serde::{Deserialize, Serialize};

use crate::mcmc::{Column, PosteriorDraws};
use crate::model::Model;
use crate::stats::{mean, sd, variance};

pub const DEFAULT_RHAT_THRESHOLD: f64 = 1.05;
pub const DEFAULT_BATCHES: usize = 50;
/// DIC differences below this are not considered meaningful.
pub const DIC_MEANINGFUL_DIFFERENCE: f64 = 5.0;

const MIN_CHAINS: usize = 2;
const MIN_DRAWS: usize = 10;
const MIN_BATCHES: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("R-hat needs at least {MIN_CHAINS} chains, got {0}")]
    TooFewChains(usize),
    #[error("R-hat needs at least {MIN_DRAWS} draws per chain, got {0}")]
    TooFewDraws(usize),
    #[error("chains have unequal lengths")]
    UnequalChains,
    #[error("batch-means MC error needs at least {MIN_BATCHES} batches, got {0}")]
    TooFewBatches(usize),
    #[error("{draws} draws cannot fill {batches} batches")]
    ShortSeries { draws: usize, batches: usize },
    #[error(
        "fitted probability {value} for arm {arm} is outside [0, 1] or contradicts its counts"
    )]
    FittedOutOfRange { arm: usize, value: f64 },
    #[error("{fitted} fitted probabilities for {arms} arms")]
    ArmMismatch { fitted: usize, arms: usize },
    #[error("no draws")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rhat {
    pub value: f64,
    /// Zero within-chain variance; `value` is reported as 1.
    pub degenerate: bool,
}

/// Brooks-Gelman-Rubin potential scale reduction factor,
/// `sqrt((W (n-1)/n + B/n) / W)` with `B = n * var(chain means)`.
pub fn rhat(chains: &[&[f64]]) -> Result<Rhat, DiagnosticsError> {
    if chains.len() < MIN_CHAINS {
        return Err(DiagnosticsError::TooFewChains(chains.len()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(DiagnosticsError::UnequalChains);
    }
    if n < MIN_DRAWS {
        return Err(DiagnosticsError::TooFewDraws(n));
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| variance(c)).sum::<f64>() / chains.len() as f64;
    let nf = n as f64;
    let b = nf * variance(&means);
    if !(w > 0.0) {
        return Ok(Rhat {
            value: 1.0,
            degenerate: true,
        });
    }
    let pooled = w * (nf - 1.0) / nf + b / nf;
    Ok(Rhat {
        value: (pooled / w).sqrt(),
        degenerate: false,
    })
}

/// R-hat on chains split into first and second halves.
pub fn split_rhat(chains: &[&[f64]]) -> Result<Rhat, DiagnosticsError> {
    let half = chains.first().map_or(0, |c| c.len() / 2);
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[half..2 * half]])
        .collect();
    if chains.iter().any(|c| c.len() != chains[0].len()) {
        return Err(DiagnosticsError::UnequalChains);
    }
    rhat(&halves)
}

/// Batch-means Monte Carlo standard error: SD of `batches` consecutive batch
/// means over `sqrt(batches)`. Trailing draws that do not fill a batch are
/// dropped.
pub fn mc_error(draws: &[f64], batches: usize) -> Result<f64, DiagnosticsError> {
    if batches < MIN_BATCHES {
        return Err(DiagnosticsError::TooFewBatches(batches));
    }
    let size = draws.len() / batches;
    if size == 0 {
        return Err(DiagnosticsError::ShortSeries {
            draws: draws.len(),
            batches,
        });
    }
    let batch_means: Vec<f64> = draws.chunks_exact(size).take(batches).map(mean).collect();
    Ok(sd(&batch_means) / (batches as f64).sqrt())
}

/// Saturated-versus-fitted binomial deviance summed over arms.
pub fn residual_deviance(counts: &[(u32, u32)], fitted: &[f64]) -> Result<f64, DiagnosticsError> {
    if counts.len() != fitted.len() {
        return Err(DiagnosticsError::ArmMismatch {
            fitted: fitted.len(),
            arms: counts.len(),
        });
    }
    let xlog = |x: f64, ratio: f64| if x == 0.0 { 0.0 } else { x * ratio.ln() };
    let mut total = 0.0;
    for (arm, (&(r, n), &p)) in counts.iter().zip(fitted).enumerate() {
        // p may sit on a boundary only where the matching count is zero
        let ok = (0.0..=1.0).contains(&p) && (p > 0.0 || r == 0) && (p < 1.0 || r == n);
        if !ok {
            return Err(DiagnosticsError::FittedOutOfRange { arm, value: p });
        }
        let (r, n) = (f64::from(r), f64::from(n));
        total += 2.0 * (xlog(r, r / (n * p)) + xlog(n - r, (n - r) / (n - n * p)));
    }
    Ok(total.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStatistics {
    pub d_res: f64,
    pub p_d: f64,
    pub dic: f64,
    pub negative_p_d: bool,
}

impl FitStatistics {
    pub fn from_components(d_res: f64, p_d: f64) -> Self {
        Self {
            d_res,
            p_d,
            dic: d_res + p_d,
            negative_p_d: p_d < 0.0,
        }
    }

    /// From the per-draw deviances and the plug-in deviance at the posterior
    /// mean fitted probabilities.
    pub fn from_deviances(deviances: &[f64], plug_in: f64) -> Result<Self, DiagnosticsError> {
        if deviances.is_empty() {
            return Err(DiagnosticsError::Empty);
        }
        let d_res = mean(deviances);
        Ok(Self::from_components(d_res, d_res - plug_in))
    }
}

/// `D_res`, `p_D` and DIC, with the plug-in deviance evaluated at the
/// posterior mean of each arm's fitted probability.
pub fn dic(draws: &PosteriorDraws, model: &Model) -> Result<FitStatistics, DiagnosticsError> {
    let total = draws.total_draws();
    if total == 0 {
        return Err(DiagnosticsError::Empty);
    }
    let mut fitted = vec![0.0; model.n_arms()];
    for ch in &draws.chains {
        let w = ch.deviance.len() as f64 / total as f64;
        for (acc, p) in fitted.iter_mut().zip(&ch.fitted_mean) {
            *acc += w * p;
        }
    }
    let deviances: Vec<f64> = draws
        .chains
        .iter()
        .flat_map(|c| c.deviance.iter().copied())
        .collect();
    let plug_in = residual_deviance(&model.arm_counts(), &fitted)?;
    FitStatistics::from_deviances(&deviances, plug_in)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicComparison {
    /// `second.dic - first.dic`
    pub delta: f64,
    pub meaningful: bool,
}

pub fn compare_dic(first: &FitStatistics, second: &FitStatistics) -> DicComparison {
    let delta = second.dic - first.dic;
    DicComparison {
        delta,
        meaningful: delta.abs() >= DIC_MEANINGFUL_DIFFERENCE,
    }
}

impl DicComparison {
    pub fn annotation(&self) -> &'static str {
        if self.meaningful {
            "meaningful"
        } else {
            "not meaningful (|difference| < 5)"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamConvergence {
    pub name: String,
    pub rhat: Option<Rhat>,
    pub mc_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub params: Vec<ParamConvergence>,
    pub max_rhat: Option<f64>,
    pub threshold: f64,
    pub split: bool,
    /// Every assessed parameter below `threshold`. False when R-hat could not
    /// be computed (fewer than two chains or ten draws).
    pub converged: bool,
}

impl ConvergenceReport {
    pub fn get(&self, name: &str) -> Option<&ParamConvergence> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// R-hat and MC error for every monitored continuous column. Indicator
/// columns are skipped: their information is carried by the matching SD
/// column.
pub fn convergence_report(
    draws: &PosteriorDraws,
    threshold: f64,
    split: bool,
) -> ConvergenceReport {
    let mut params = Vec::new();
    let mut max_rhat: Option<f64> = None;
    let mut assessable = true;
    for (c, (name, column)) in draws.names.iter().zip(&draws.columns).enumerate() {
        if matches!(column, Column::IndicatorPhi(_) | Column::IndicatorKappa(_)) {
            continue;
        }
        let chains: Vec<&[f64]> = draws
            .chains
            .iter()
            .map(|ch| ch.columns[c].as_slice())
            .collect();
        let r = if split {
            split_rhat(&chains)
        } else {
            rhat(&chains)
        }
        .ok();
        match r {
            Some(r) => max_rhat = Some(max_rhat.map_or(r.value, |m: f64| m.max(r.value))),
            None => assessable = false,
        }
        let mce = mc_error(&draws.pooled_column(c), DEFAULT_BATCHES).ok();
        params.push(ParamConvergence {
            name: name.clone(),
            rhat: r,
            mc_error: mce,
        });
    }
    let converged = assessable && max_rhat.is_none_or(|m| m < threshold);
    ConvergenceReport {
        params,
        max_rhat,
        threshold,
        split,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| shift + Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect::<Vec<f64>>()
    }

    #[test]
    fn rhat_same_distribution_near_one() {
        let a = normals(1, 10_000, 0.0);
        let b = normals(2, 10_000, 0.0);
        let r = rhat(&[&a, &b]).unwrap();
        assert!(r.value < 1.01 && !r.degenerate, "{r:?}");
    }

    #[test]
    fn rhat_mean_shift_by_hand() {
        let a = normals(1, 10_000, 0.0);
        let b = normals(2, 10_000, 5.0);
        let r = rhat(&[&a, &b]).unwrap().value;
        assert!(r > 1.5);
        // W ~ 1, B = n * var(means) = n * 12.5, so R ~ sqrt(1 + 12.5)
        assert_abs_diff_eq!(r, 13.5f64.sqrt(), epsilon = 0.1);
    }

    #[test]
    fn rhat_constant_chains_degenerate() {
        let a = [2.0; 20];
        let r = rhat(&[&a, &a]).unwrap();
        assert_eq!(
            r,
            Rhat {
                value: 1.0,
                degenerate: true
            }
        );
    }

    #[test]
    fn rhat_input_errors() {
        let a = [0.0; 20];
        assert_eq!(rhat(&[&a]), Err(DiagnosticsError::TooFewChains(1)));
        assert_eq!(
            rhat(&[&a[..5], &a[..5]]),
            Err(DiagnosticsError::TooFewDraws(5))
        );
        assert_eq!(rhat(&[&a[..15], &a]), Err(DiagnosticsError::UnequalChains));
    }

    #[test]
    fn split_rhat_detects_within_chain_drift() {
        let drift: Vec<f64> = (0..2000).map(|i| i as f64 / 100.0).collect();
        assert!(split_rhat(&[&drift, &drift]).unwrap().value > 1.5);
        assert!(rhat(&[&drift, &drift]).unwrap().value < 1.01);
    }

    proptest! {
        #[test]
        fn rhat_affine_invariant(seed in any::<u64>(), a in 0.1f64..10.0, c in -5.0f64..5.0) {
            let x = normals(seed, 200, 0.0);
            let y = normals(seed ^ 1, 200, 0.3);
            let tx: Vec<f64> = x.iter().map(|v| a * v + c).collect();
            let ty: Vec<f64> = y.iter().map(|v| a * v + c).collect();
            let r0 = rhat(&[&x, &y]).unwrap().value;
            let r1 = rhat(&[&tx, &ty]).unwrap().value;
            prop_assert!((r0 - r1).abs() < 1e-9);
        }

        #[test]
        fn deviance_nonnegative(r in 0u32..50, extra in 1u32..50, p in 0.001f64..0.999) {
            let d = residual_deviance(&[(r, r + extra)], &[p]).unwrap();
            prop_assert!(d >= 0.0);
        }
    }

    #[test]
    fn mc_error_iid() {
        let x = normals(3, 50_000, 0.0);
        let e = mc_error(&x, DEFAULT_BATCHES).unwrap();
        let expected = (1.0f64 / 50_000.0).sqrt();
        assert!((e / expected - 1.0).abs() < 0.3, "{e} vs {expected}");
    }

    #[test]
    fn mc_error_ar1_inflation() {
        let rho: f64 = 0.9;
        let eps = normals(4, 200_000, 0.0);
        let mut x = Vec::with_capacity(eps.len());
        let mut prev = 0.0;
        for e in eps {
            prev = rho * prev + (1.0 - rho * rho).sqrt() * e;
            x.push(prev);
        }
        let e = mc_error(&x, DEFAULT_BATCHES).unwrap();
        let iid = (1.0 / x.len() as f64).sqrt();
        let factor = ((1.0 + rho) / (1.0 - rho)).sqrt();
        assert!((e / iid / factor - 1.0).abs() < 0.5, "{}", e / iid);
    }

    #[test]
    fn mc_error_constant_and_errors() {
        assert_eq!(mc_error(&[1.5; 500], 50).unwrap(), 0.0);
        assert_eq!(
            mc_error(&[1.5; 500], 9),
            Err(DiagnosticsError::TooFewBatches(9))
        );
        assert!(matches!(
            mc_error(&[1.0; 20], 50),
            Err(DiagnosticsError::ShortSeries { .. })
        ));
    }

    #[test]
    fn deviance_examples() {
        assert_eq!(
            residual_deviance(&[(3, 10), (0, 5)], &[0.3, 0.2]).unwrap() > 0.0,
            true
        );
        assert_abs_diff_eq!(
            residual_deviance(&[(3, 10), (7, 7)], &[0.3, 0.999_999_999]).unwrap(),
            0.0,
            epsilon = 1e-6
        );
        let by_hand = 2.0 * (5.0 * 2f64.ln() + 5.0 * (5.0f64 / 7.5).ln());
        let d = residual_deviance(&[(5, 10)], &[0.25]).unwrap();
        assert_abs_diff_eq!(d, by_hand, epsilon = 1e-12);
        assert_abs_diff_eq!(d, 2.876, epsilon = 1e-3);
        assert!(matches!(
            residual_deviance(&[(5, 10)], &[1.0]),
            Err(DiagnosticsError::FittedOutOfRange { arm: 0, .. })
        ));
        assert_eq!(
            residual_deviance(&[(7, 7), (0, 4)], &[1.0, 0.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn fit_statistics_identity() {
        let f = FitStatistics::from_components(4183.0, 2838.0);
        assert_eq!(f.dic, 7021.0);
        assert_eq!(f.dic, f.d_res + f.p_d);
        let single = FitStatistics::from_deviances(&[12.5; 40], 12.5).unwrap();
        assert_eq!(single.p_d, 0.0);
        assert_eq!(single.dic, single.d_res);
        assert!(FitStatistics::from_components(10.0, -1.0).negative_p_d);
    }

    #[test]
    fn dic_difference_rule() {
        let a = FitStatistics::from_components(100.0, 10.0);
        let b = FitStatistics::from_components(103.0, 11.0);
        let c = compare_dic(&a, &b);
        assert_abs_diff_eq!(c.delta, 4.0);
        assert!(!c.meaningful);
        assert!(compare_dic(&a, &FitStatistics::from_components(90.0, 10.0)).meaningful);
    }
}
