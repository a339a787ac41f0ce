//! Brute-force grid posterior for tiny instances.
//!
//! All parameters except up to three free ones are held at a fixed state.
//! The joint density (natural-scale prior times likelihood) is evaluated on
//! a rectangular grid, marginalized with trapezoid weights and summarized
//! with the density treated as piecewise linear between grid points. A
//! second pass at doubled resolution must agree to within 0.5% of each
//! marginal SD.

use serde::{Deserialize, Serialize};

use crate::model::{Model, Param, ParameterState};
use crate::stats::{mean, quantile_sorted, sd};

pub const MAX_AXES: usize = 3;
pub const MAX_POINTS: usize = 10_000_000;
const SELF_CHECK_TOLERANCE: f64 = 0.005;
const EDGE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("at most {MAX_AXES} free parameters, got {0}")]
    TooManyAxes(usize),
    #[error("grid of {0} points exceeds {MAX_POINTS}")]
    TooManyPoints(usize),
    #[error("axis for {0}: need lo < hi and at least 3 points")]
    InvalidAxis(String),
    #[error("{0:?} is not a parameter of this model")]
    UnknownParam(Param),
    #[error("free bias {0} needs a positive phi in the fixed state")]
    ZeroPhi(String),
    #[error("density is not finite anywhere on the grid")]
    Degenerate,
    #[error("grid too coarse for {param}: doubling moved {statistic} by {change:.4} SD")]
    GridTooCoarse {
        param: String,
        statistic: &'static str,
        change: f64,
    },
    #[error("grid bounds for {0} cut off posterior mass")]
    BoundsTooNarrow(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    /// `Param::Bias(m, j)` refers to the natural-scale `b_jm`.
    pub param: Param,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub axes: Vec<GridAxis>,
    /// Values of every non-free parameter.
    pub fixed: ParameterState,
    pub self_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMarginal {
    pub param: Param,
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub fn oracle_posterior(
    model: &Model,
    oracle: &OracleConfig,
) -> Result<Vec<OracleMarginal>, OracleError> {
    let axes = &oracle.axes;
    if axes.len() > MAX_AXES {
        return Err(OracleError::TooManyAxes(axes.len()));
    }
    let base = evaluate(model, oracle, 1)?;
    if oracle.self_check {
        let fine = evaluate(model, oracle, 2)?;
        for (a, b) in base.iter().zip(&fine) {
            let scale = b.sd.max(f64::MIN_POSITIVE);
            for (statistic, x, y) in [
                ("mean", a.mean, b.mean),
                ("median", a.median, b.median),
                ("2.5% quantile", a.ci_lo, b.ci_lo),
                ("97.5% quantile", a.ci_hi, b.ci_hi),
                ("sd", a.sd, b.sd),
            ] {
                let change = (x - y).abs() / scale;
                if change > SELF_CHECK_TOLERANCE {
                    return Err(OracleError::GridTooCoarse {
                        param: a.name.clone(),
                        statistic,
                        change,
                    });
                }
            }
        }
        return Ok(fine);
    }
    Ok(base)
}

/// Grid evaluation with `refine - 1` extra points between neighbours.
fn evaluate(
    model: &Model,
    oracle: &OracleConfig,
    refine: usize,
) -> Result<Vec<OracleMarginal>, OracleError> {
    let layout = model.layout();
    let axes = &oracle.axes;
    let mut grids = Vec::with_capacity(axes.len());
    let mut coords = Vec::with_capacity(axes.len());
    for ax in axes {
        let name = axis_name(model, ax.param)?;
        if !(ax.lo < ax.hi) || ax.points < 3 {
            return Err(OracleError::InvalidAxis(name));
        }
        let n = (ax.points - 1) * refine + 1;
        let h = (ax.hi - ax.lo) / (n - 1) as f64;
        grids.push((0..n).map(|i| ax.lo + h * i as f64).collect::<Vec<f64>>());
        coords.push(
            layout
                .index_of(ax.param)
                .ok_or(OracleError::UnknownParam(ax.param))?,
        );
    }
    let total = grids.iter().map(Vec::len).product::<usize>();
    if total > MAX_POINTS {
        return Err(OracleError::TooManyPoints(total));
    }

    // bias axes are set after everything else, since eta depends on b0 and phi
    let mut order: Vec<usize> = (0..axes.len()).collect();
    order.sort_by_key(|&a| matches!(axes[a].param, Param::Bias(..)));

    let mut state = oracle.fixed.clone();
    let mut log_density = Vec::with_capacity(total);
    let mut index = vec![0usize; axes.len()];
    for _ in 0..total {
        let mut jacobian = 0.0;
        for &a in &order {
            let x = grids[a][index[a]];
            let k = coords[a];
            match axes[a].param {
                Param::Bias(_, j) => {
                    let phi = model.phi(&state, j);
                    if !(phi > 0.0) {
                        return Err(OracleError::ZeroPhi(axis_name(model, axes[a].param)?));
                    }
                    state.values[k] = (x - model.b0(&state, j)) / phi;
                    jacobian -= phi.ln();
                }
                p => state.values[k] = layout.transform(p).to_unconstrained(x),
            }
        }
        let lp = match model.log_prior(&state) {
            Ok(v) => v + model.log_likelihood(&state) + jacobian,
            Err(_) => f64::NEG_INFINITY,
        };
        log_density.push(if lp.is_nan() { f64::NEG_INFINITY } else { lp });
        // row-major increment, last axis fastest
        for a in (0..axes.len()).rev() {
            index[a] += 1;
            if index[a] < grids[a].len() {
                break;
            }
            index[a] = 0;
        }
    }
    let max = log_density
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(OracleError::Degenerate);
    }

    let weights: Vec<Vec<f64>> = grids.iter().map(|g| trapezoid_weights(g)).collect();
    let mut marginals: Vec<Vec<f64>> = grids.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut index = vec![0usize; axes.len()];
    for &ld in &log_density {
        let f = (ld - max).exp();
        if f > 0.0 {
            for a in 0..axes.len() {
                let w: f64 = (0..axes.len())
                    .filter(|&b| b != a)
                    .map(|b| weights[b][index[b]])
                    .product();
                marginals[a][index[a]] += w * f;
            }
        }
        for a in (0..axes.len()).rev() {
            index[a] += 1;
            if index[a] < grids[a].len() {
                break;
            }
            index[a] = 0;
        }
    }

    axes.iter()
        .zip(grids.iter().zip(&marginals))
        .map(|(ax, (grid, dens))| {
            let name = axis_name(model, ax.param)?;
            let peak = dens.iter().copied().fold(0.0, f64::max);
            let at_support_edge =
                ax.lo == 0.0 && layout.transform(ax.param) != crate::model::Transform::Identity;
            if (!at_support_edge && dens[0] > EDGE_TOLERANCE * peak)
                || dens[dens.len() - 1] > EDGE_TOLERANCE * peak
            {
                return Err(OracleError::BoundsTooNarrow(name));
            }
            let s = summarize_density(grid, dens);
            Ok(OracleMarginal {
                param: ax.param,
                name,
                ..s
            })
        })
        .collect()
}

fn axis_name(model: &Model, param: Param) -> Result<String, OracleError> {
    let k = model
        .layout()
        .index_of(param)
        .ok_or(OracleError::UnknownParam(param))?;
    Ok(match param {
        Param::Bias(m, j) => format!(
            "b[{},{}]",
            model.dataset().meta_analyses[m].meta_id,
            model.characteristic_names()[j]
        ),
        _ => model.parameter_name(k),
    })
}

fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { grid[i] - grid[i - 1] } else { 0.0 };
            let right = if i + 1 < n {
                grid[i + 1] - grid[i]
            } else {
                0.0
            };
            0.5 * (left + right)
        })
        .collect()
}

/// Moments and quantiles of a density known at grid points and linear in
/// between.
pub fn summarize_density(grid: &[f64], density: &[f64]) -> OracleMarginal {
    let n = grid.len();
    let mut cumulative = vec![0.0; n];
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 1..n {
        let (x0, x1, f0, f1) = (grid[i - 1], grid[i], density[i - 1], density[i]);
        let h = x1 - x0;
        cumulative[i] = cumulative[i - 1] + 0.5 * h * (f0 + f1);
        // exact integrals of x^k times the linear interpolant
        m0 += 0.5 * h * (f0 + f1);
        m1 += h / 6.0 * (f0 * (2.0 * x0 + x1) + f1 * (x0 + 2.0 * x1));
        m2 += h / 12.0
            * (f0 * (3.0 * x0 * x0 + 2.0 * x0 * x1 + x1 * x1)
                + f1 * (x0 * x0 + 2.0 * x0 * x1 + 3.0 * x1 * x1));
    }
    let mean = m1 / m0;
    let var = (m2 / m0 - mean * mean).max(0.0);
    let quantile = |q: f64| {
        let target = q * m0;
        let i = cumulative.partition_point(|&c| c < target).clamp(1, n - 1);
        let (x0, f0, f1) = (grid[i - 1], density[i - 1], density[i]);
        let h = grid[i] - x0;
        let need = target - cumulative[i - 1];
        // solve h (f0 t + (f1 - f0) t^2 / 2) = need for t in [0, 1]
        let a = 0.5 * h * (f1 - f0);
        let b = h * f0;
        let t = if a.abs() < 1e-14 * b.abs().max(1e-300) {
            need / b
        } else {
            (-b + (b * b + 4.0 * a * need).max(0.0).sqrt()) / (2.0 * a)
        };
        x0 + h * t.clamp(0.0, 1.0)
    };
    OracleMarginal {
        param: Param::MixingWeight,
        name: String::new(),
        mean,
        sd: var.sqrt(),
        median: quantile(0.5),
        ci_lo: quantile(0.025),
        ci_hi: quantile(0.975),
    }
}

/// Coverage of one truth value across replicate fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub name: String,
    pub truth: f64,
    pub covered: usize,
    pub fits: usize,
    pub coverage: f64,
    pub median_of_medians: f64,
    pub medians: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub rows: Vec<CoverageRow>,
    pub replicates: usize,
    pub unconverged: usize,
    pub failures: Vec<String>,
}

impl RecoveryReport {
    pub fn row(&self, name: &str) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Repeats generate then fit; replicate `r` uses truth seed
/// `truth.seed + r` and MCMC seed `mcmc.seed + r`. Failed fits are
/// recorded rather than aborting the experiment.
pub fn recovery_experiment(
    truth: &crate::synthetic::TruthConfig,
    spec: &crate::model::ModelSpec,
    mcmc: &crate::mcmc::McmcConfig,
    replicates: usize,
) -> RecoveryReport {
    use crate::model::VarianceStructure;

    let targets: Vec<(String, f64)> = truth
        .characteristics
        .iter()
        .flat_map(|c| {
            let het = match spec.structure {
                VarianceStructure::Additive => format!("kappa[{}]", c.name),
                VarianceStructure::LabelInvariant => format!("lambda[{}]", c.name),
            };
            let mut v = vec![
                (format!("b0[{}]", c.name), c.b0),
                (format!("phi[{}]", c.name), c.phi),
            ];
            if spec.structure == truth.structure {
                v.push((het, c.heterogeneity));
            }
            v
        })
        .collect();
    let mut rows: Vec<CoverageRow> = targets
        .iter()
        .map(|(name, t)| CoverageRow {
            name: name.clone(),
            truth: *t,
            covered: 0,
            fits: 0,
            coverage: f64::NAN,
            median_of_medians: f64::NAN,
            medians: Vec::new(),
        })
        .collect();
    let mut failures = Vec::new();
    let mut unconverged = 0;
    for r in 0..replicates {
        let rep_truth = crate::synthetic::TruthConfig {
            seed: truth.seed.wrapping_add(r as u64),
            ..truth.clone()
        };
        let rep_mcmc = crate::mcmc::McmcConfig {
            seed: mcmc.seed.wrapping_add(r as u64),
            ..mcmc.clone()
        };
        let fit = crate::synthetic::generate(&rep_truth)
            .map_err(|e| e.to_string())
            .and_then(|(data, _)| Model::new(spec, &data).map_err(|e| e.to_string()))
            .and_then(|model| crate::mcmc::run(&model, &rep_mcmc).map_err(|e| e.to_string()));
        let draws = match fit {
            Ok(d) => d,
            Err(e) => {
                failures.push(format!("replicate {r}: {e}"));
                continue;
            }
        };
        let conv = crate::diagnostics::convergence_report(
            &draws,
            crate::diagnostics::DEFAULT_RHAT_THRESHOLD,
            false,
        );
        if !conv.converged {
            unconverged += 1;
        }
        for row in rows.iter_mut() {
            let Some(xs) = draws.pooled(&row.name) else {
                continue;
            };
            let Ok(s) = crate::summaries::summarize_param(&xs) else {
                continue;
            };
            row.fits += 1;
            row.medians.push(s.median);
            if s.ci_lo <= row.truth && row.truth <= s.ci_hi {
                row.covered += 1;
            }
        }
    }
    for row in rows.iter_mut() {
        if row.fits > 0 {
            row.coverage = row.covered as f64 / row.fits as f64;
            let mut m = row.medians.clone();
            m.sort_by(f64::total_cmp);
            row.median_of_medians = quantile_sorted(&m, 0.5);
        }
    }
    RecoveryReport {
        rows,
        replicates,
        unconverged,
        failures,
    }
}

/// Mean and SD of a sample, for comparing oracle and sampler output.
pub fn sample_moments(xs: &[f64]) -> (f64, f64) {
    (mean(xs), sd(xs))
}
