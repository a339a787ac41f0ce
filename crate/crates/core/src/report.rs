//! End-to-end fits and their reports: posterior summary tables laid out as
//! in published meta-epidemiological analyses, DIC comparisons and prior
//! sensitivity tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, DataError, Dataset, DatasetSummary};
use crate::diagnostics::{
    compare_dic, convergence_report, dic, ConvergenceReport, DiagnosticsError, DicComparison,
    FitStatistics, DEFAULT_RHAT_THRESHOLD,
};
use crate::mcmc::{run, McmcConfig, McmcError, MoveStats, PosteriorDraws};
use crate::model::{
    sensitivity_priors, Model, ModelError, ModelSpec, NamedPrior, PriorRole, VarianceStructure,
};
use crate::summaries::{
    combined_bias, predictive_tau, ror, summarize_param, PredictiveTau, Summary, SummaryError,
};

pub const SCHEMA_VERSION: &str = "metaepi.run-report/1";
pub const COMPARISON_SCHEMA_VERSION: &str = "metaepi.comparison/1";
pub const SENSITIVITY_SCHEMA_VERSION: &str = "metaepi.sensitivity/1";

/// Offset applied to the run seed for the predictive-heterogeneity draws so
/// they do not share a stream with chain 0.
const PREDICTIVE_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("mcmc: {0}")]
    Mcmc(#[from] McmcError),
    #[error("diagnostics: {0}")]
    Diagnostics(#[from] DiagnosticsError),
    #[error("summaries: {0}")]
    Summary(#[from] SummaryError),
    #[error("no informative meta-analyses remain for the requested characteristics")]
    NoInformativeData,
    #[error("monitored column '{0}' missing from the draws")]
    MissingColumn(String),
    #[error("sensitivity analysis needs a label-invariant model")]
    NotLabelInvariant,
    #[error("unknown prior '{0}'")]
    UnknownPrior(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Rows for one characteristic. SD-scale rows sit beside their variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicRows {
    pub name: String,
    pub b0: Summary,
    pub ror: Summary,
    pub lambda: Option<Summary>,
    pub kappa: Option<Summary>,
    pub kappa_sq: Option<Summary>,
    pub phi: Summary,
    pub phi_sq: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub spec: ModelSpec,
    pub mcmc: McmcConfig,
    /// The dataset as supplied.
    pub input: DatasetSummary,
    /// The informative subset actually fitted.
    pub fitted: DatasetSummary,
    pub characteristics: Vec<CharacteristicRows>,
    /// Per-draw sum of every `b0_j`, and its exponential.
    pub combined_bias: Summary,
    pub combined_ror: Summary,
    /// Present with the hierarchy on `ln tau^2`.
    pub predictive_tau: Option<PredictiveTau>,
    pub convergence: ConvergenceReport,
    pub fit: FitStatistics,
    /// Post-burn-in acceptance per chain.
    pub acceptance: Vec<Vec<MoveStats>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub draw_files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

pub struct Fit {
    pub model: Model,
    pub draws: PosteriorDraws,
    pub report: RunReport,
}

/// Subset, build, sample, diagnose and summarize.
pub fn fit(dataset: &Dataset, spec: &ModelSpec, mcmc: &McmcConfig) -> Result<Fit, ReportError> {
    spec.validate()?;
    let model = Model::new(spec, dataset)?;
    if model.dataset().meta_analyses.is_empty() {
        return Err(ReportError::NoInformativeData);
    }
    let draws = run(&model, mcmc)?;
    let report = build_report(dataset, spec, mcmc, &model, &draws)?;
    Ok(Fit {
        model,
        draws,
        report,
    })
}

fn pooled(draws: &PosteriorDraws, name: &str) -> Result<Vec<f64>, ReportError> {
    draws
        .pooled(name)
        .ok_or_else(|| ReportError::MissingColumn(name.into()))
}

fn squared(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| x * x).collect()
}

pub fn build_report(
    dataset: &Dataset,
    spec: &ModelSpec,
    mcmc: &McmcConfig,
    model: &Model,
    draws: &PosteriorDraws,
) -> Result<RunReport, ReportError> {
    let mut characteristics = Vec::new();
    let mut b0_series = Vec::new();
    for name in &spec.characteristics {
        let b0 = pooled(draws, &format!("b0[{name}]"))?;
        let phi = pooled(draws, &format!("phi[{name}]"))?;
        let (lambda, kappa, kappa_sq) = match spec.structure {
            VarianceStructure::LabelInvariant => (
                Some(summarize_param(&pooled(
                    draws,
                    &format!("lambda[{name}]"),
                )?)?),
                None,
                None,
            ),
            VarianceStructure::Additive => {
                let k = pooled(draws, &format!("kappa[{name}]"))?;
                (
                    None,
                    Some(summarize_param(&k)?),
                    Some(summarize_param(&squared(&k))?),
                )
            }
        };
        characteristics.push(CharacteristicRows {
            name: name.clone(),
            b0: summarize_param(&b0)?,
            ror: ror(&b0)?,
            lambda,
            kappa,
            kappa_sq,
            phi: summarize_param(&phi)?,
            phi_sq: summarize_param(&squared(&phi))?,
        });
        b0_series.push(b0);
    }
    let refs: Vec<&[f64]> = b0_series.iter().map(Vec::as_slice).collect();
    let combined = combined_bias(&refs)?;
    let sums: Vec<f64> = (0..refs[0].len())
        .map(|i| refs.iter().map(|s| s[i]).sum())
        .collect();
    let predictive = if spec.tau_hierarchy {
        let mu = pooled(draws, "mu")?;
        let sigma = pooled(draws, "sigma")?;
        Some(predictive_tau(
            &mu,
            &sigma,
            mcmc.seed ^ PREDICTIVE_SEED_OFFSET,
        )?)
    } else {
        None
    };
    Ok(RunReport {
        schema_version: SCHEMA_VERSION.into(),
        spec: spec.clone(),
        mcmc: mcmc.clone(),
        input: data::summarize(dataset),
        fitted: data::summarize(model.dataset()),
        characteristics,
        combined_bias: combined,
        combined_ror: ror(&sums)?,
        predictive_tau: predictive,
        convergence: convergence_report(draws, DEFAULT_RHAT_THRESHOLD, false),
        fit: dic(draws, model)?,
        acceptance: draws.chains.iter().map(|c| c.acceptance.clone()).collect(),
        draw_files: Vec::new(),
        timestamp: None,
    })
}

/// Writes one CSV per chain into `dir` and returns the paths.
pub fn dump_draws(draws: &PosteriorDraws, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for c in 0..draws.chains.len() {
        let path = dir.join(format!("chain{}.csv", c + 1));
        let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        draws.write_chain_csv(c, file)?;
        paths.push(path);
    }
    Ok(paths)
}

fn row(out: &mut String, label: &str, s: &Summary) {
    let _ = writeln!(
        out,
        "{label:<24}{:>8.2}{:>8.2}   ({:.2}, {:.2})",
        s.median, s.sd, s.ci_lo, s.ci_hi
    );
}

fn na_row(out: &mut String, label: &str) {
    let _ = writeln!(out, "{label:<24}{:>8}", "n/a");
}

/// Plain-text table; effect-scale rows are rounded to two decimals.
pub fn render_text(report: &RunReport) -> String {
    let mut out = String::new();
    let spec = &report.spec;
    let _ = writeln!(
        out,
        "Model: {} variance, characteristics {}, tau hierarchy {}",
        spec.structure,
        spec.characteristics.join(", "),
        if spec.tau_hierarchy { "on" } else { "off" }
    );
    let _ = writeln!(
        out,
        "Data: {} of {} meta-analyses ({} of {} trials) informative",
        report.fitted.meta_analyses,
        report.input.meta_analyses,
        report.fitted.trials,
        report.input.trials
    );
    let m = &report.mcmc;
    let _ = writeln!(
        out,
        "MCMC: {} chains, burn-in {}, {} iterations, thin {}, seed {}",
        m.n_chains, m.burn_in, m.iterations, m.thin, m.seed
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<24}{:>8}{:>8}   95% CrI", "", "Median", "SD");
    let multi = report.characteristics.len() > 1;
    for c in &report.characteristics {
        let tag = |p: &str| {
            if multi {
                format!("{p} [{}]", c.name)
            } else {
                p.to_string()
            }
        };
        row(&mut out, &tag("b0"), &c.b0);
        row(&mut out, &tag("ROR"), &c.ror);
        match &c.lambda {
            Some(s) => row(&mut out, &tag("lambda"), s),
            None => na_row(&mut out, &tag("lambda")),
        }
        match &c.kappa {
            Some(s) => row(&mut out, &tag("kappa"), s),
            None => na_row(&mut out, &tag("kappa")),
        }
        row(&mut out, &tag("phi"), &c.phi);
    }
    if multi {
        row(&mut out, "Implied average bias", &report.combined_bias);
        row(&mut out, "Implied average ROR", &report.combined_ror);
    }
    match &report.predictive_tau {
        Some(p) => {
            let _ = writeln!(
                out,
                "{:<24}Log-normal({:.2}, {:.2}^2)  median {:.2}, 95% range {:.3} to {:.2}",
                "Predictive tau^2_new", p.meanlog, p.sdlog, p.median, p.range_lo, p.range_hi
            );
        }
        None => na_row(&mut out, "Predictive tau^2_new"),
    }
    let f = &report.fit;
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "D_res {:.1}   p_D {:.1}   DIC {:.1}",
        f.d_res, f.p_d, f.dic
    );
    if f.negative_p_d {
        let _ = writeln!(out, "warning: negative p_D");
    }
    let c = &report.convergence;
    let _ = writeln!(
        out,
        "Convergence: max R-hat {} (threshold {}), {}",
        c.max_rhat.map_or("n/a".to_string(), |r| format!("{r:.3}")),
        c.threshold,
        if c.converged {
            "converged"
        } else {
            "NOT converged"
        }
    );
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: String,
    pub first: RunReport,
    pub second: RunReport,
    /// `DIC(second) - DIC(first)`.
    pub dic: DicComparison,
}

/// Fits two specs; the second run uses the next seed.
pub fn compare(
    dataset: &Dataset,
    first: &ModelSpec,
    second: &ModelSpec,
    mcmc: &McmcConfig,
) -> Result<ComparisonReport, ReportError> {
    let a = fit(dataset, first, mcmc)?.report;
    let next = McmcConfig {
        seed: mcmc.seed.wrapping_add(1),
        ..mcmc.clone()
    };
    let b = fit(dataset, second, &next)?.report;
    Ok(ComparisonReport {
        schema_version: COMPARISON_SCHEMA_VERSION.into(),
        dic: compare_dic(&a.fit, &b.fit),
        first: a,
        second: b,
    })
}

pub fn render_comparison(report: &ComparisonReport) -> String {
    let mut out = String::from("== First model ==\n");
    out += &render_text(&report.first);
    out += "\n== Second model ==\n";
    out += &render_text(&report.second);
    let _ = writeln!(
        out,
        "\nDIC difference (second - first): {:.1}, {}",
        report.dic.delta,
        report.dic.annotation()
    );
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub prior: String,
    pub characteristic: String,
    pub parameter: String,
    pub median: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityFit {
    pub prior: NamedPrior,
    /// `None` when this fit failed; see `error`.
    pub report: Option<RunReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub schema_version: String,
    pub fits: Vec<SensitivityFit>,
    /// Long-format table for forest plots.
    pub rows: Vec<SensitivityRow>,
}

/// Picks shipped priors by name; all five when `names` is empty.
pub fn select_priors(names: &[String]) -> Result<Vec<NamedPrior>, ReportError> {
    let all = sensitivity_priors();
    if names.is_empty() {
        return Ok(all);
    }
    names
        .iter()
        .map(|n| {
            all.iter()
                .find(|p| &p.name == n)
                .cloned()
                .ok_or_else(|| ReportError::UnknownPrior(n.clone()))
        })
        .collect()
}

/// One fit per variance-ratio prior. A failed fit is recorded and skipped.
pub fn sensitivity(
    dataset: &Dataset,
    base: &ModelSpec,
    priors: &[NamedPrior],
    mcmc: &McmcConfig,
) -> Result<SensitivityReport, ReportError> {
    if base.structure != VarianceStructure::LabelInvariant {
        return Err(ReportError::NotLabelInvariant);
    }
    let mut fits = Vec::new();
    let mut rows = Vec::new();
    for named in priors {
        let spec = base.clone().with_prior(PriorRole::Lambda, named.prior);
        match fit(dataset, &spec, mcmc) {
            Ok(f) => {
                for c in &f.report.characteristics {
                    let lambda = c.lambda.expect("label-invariant report has lambda");
                    for (parameter, s) in [("b0", c.b0), ("phi", c.phi), ("lambda", lambda)] {
                        rows.push(SensitivityRow {
                            prior: named.name.clone(),
                            characteristic: c.name.clone(),
                            parameter: parameter.into(),
                            median: s.median,
                            sd: s.sd,
                            ci_lo: s.ci_lo,
                            ci_hi: s.ci_hi,
                        });
                    }
                }
                fits.push(SensitivityFit {
                    prior: named.clone(),
                    report: Some(f.report),
                    error: None,
                });
            }
            Err(e) => fits.push(SensitivityFit {
                prior: named.clone(),
                report: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(SensitivityReport {
        schema_version: SENSITIVITY_SCHEMA_VERSION.into(),
        fits,
        rows,
    })
}

/// The long-format table as CSV.
pub fn sensitivity_csv(report: &SensitivityReport) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.rows {
        w.serialize(r).map_err(DataError::from)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_sensitivity(report: &SensitivityReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10}{:<14}{:<8}{:>8}{:>8}   95% CrI",
        "Prior", "Characteristic", "Param", "Median", "SD"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<10}{:<14}{:<8}{:>8.2}{:>8.2}   ({:.2}, {:.2})",
            r.prior, r.characteristic, r.parameter, r.median, r.sd, r.ci_lo, r.ci_hi
        );
    }
    for f in report.fits.iter().filter(|f| f.report.is_none()) {
        let _ = writeln!(
            out,
            "{:<10}failed: {}",
            f.prior.name,
            f.error.as_deref().unwrap_or("unknown error")
        );
    }
    out
}
