use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use metaepi::data::{self, parse_dataset, Dataset};
use metaepi::mcmc::McmcConfig;
use metaepi::model::{ModelSpec, VarianceStructure};
use metaepi::report::{self, ComparisonReport, RunReport, SensitivityReport};
use metaepi::synthetic::{generate, write_simulation, TruthConfig};

/// Exit status when a fit finishes without meeting the convergence threshold.
const UNCONVERGED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "metaepi",
    version,
    about = "Bayesian meta-epidemiology: bias and heterogeneity by trial characteristic"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and report posterior summaries.
    Fit(FitArgs),
    /// Fit two models to the same data and compare DIC.
    Compare(CompareArgs),
    /// Refit a label-invariant model under each candidate prior for lambda.
    Sensitivity(SensitivityArgs),
    /// Generate a synthetic dataset and its truth sidecar.
    Simulate(SimulateArgs),
    /// Render a saved structured report as text.
    Report(ReportArgs),
    /// Describe a dataset.
    Summarize(SummarizeArgs),
}

#[derive(Args, Clone)]
struct McmcArgs {
    #[arg(long, default_value_t = 3)]
    chains: usize,
    #[arg(long, default_value_t = 20_000)]
    iterations: usize,
    #[arg(long = "burn-in", default_value_t = 5_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl McmcArgs {
    fn config(&self) -> McmcConfig {
        McmcConfig {
            n_chains: self.chains,
            burn_in: self.burn_in,
            iterations: self.iterations,
            thin: self.thin,
            seed: self.seed,
            ..McmcConfig::default()
        }
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model spec TOML; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// additive | label-invariant
    #[arg(long)]
    structure: Option<VarianceStructure>,
    /// Comma-separated characteristic names; defaults to every dataset column.
    #[arg(long, value_delimiter = ',')]
    characteristics: Vec<String>,
    /// Log-normal hierarchy on the per-meta-analysis heterogeneity.
    #[arg(long = "tau-hierarchy")]
    tau_hierarchy: bool,
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Structured JSON report path.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Include a wall-clock timestamp in the structured report.
    #[arg(long)]
    timestamp: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    mcmc: McmcArgs,
    #[command(flatten)]
    out: OutputArgs,
    /// Directory for per-chain draw CSVs.
    #[arg(long = "dump-draws")]
    dump_draws: Option<PathBuf>,
    #[arg(long = "allow-unconverged")]
    allow_unconverged: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Model spec TOML for each side; give twice.
    #[arg(long, num_args = 1)]
    config: Vec<PathBuf>,
    /// Variance structure for each side when no config is given; give twice.
    #[arg(long, num_args = 1)]
    structure: Vec<VarianceStructure>,
    #[arg(long, value_delimiter = ',')]
    characteristics: Vec<String>,
    #[arg(long = "tau-hierarchy")]
    tau_hierarchy: bool,
    #[command(flatten)]
    mcmc: McmcArgs,
    #[command(flatten)]
    out: OutputArgs,
    #[arg(long = "allow-unconverged")]
    allow_unconverged: bool,
}

#[derive(Args)]
struct SensitivityArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated prior names (prior-1 .. prior-5); all when omitted.
    #[arg(long, value_delimiter = ',')]
    priors: Vec<String>,
    #[command(flatten)]
    mcmc: McmcArgs,
    #[command(flatten)]
    out: OutputArgs,
    /// Long-format CSV of medians and intervals per prior.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long = "allow-unconverged")]
    allow_unconverged: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Truth config TOML.
    #[arg(long)]
    config: PathBuf,
    /// Dataset CSV path; the truth sidecar is written beside it.
    #[arg(long)]
    output: PathBuf,
    /// Overrides the seed in the truth config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Structured report written by fit, compare or sensitivity.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sensitivity(a) => cmd_sensitivity(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
        Command::Summarize(a) => cmd_summarize(a),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_dataset(file).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_spec(path: &Path) -> Result<ModelSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("opening {}", path.display()))?;
    ModelSpec::from_toml(&text).with_context(|| format!("model config {}", path.display()))
}

fn build_spec(
    dataset: &Dataset,
    config: Option<&Path>,
    structure: Option<VarianceStructure>,
    characteristics: &[String],
    tau_hierarchy: bool,
) -> Result<ModelSpec> {
    let mut spec = match config {
        Some(path) => load_spec(path)?,
        None => ModelSpec::new(
            structure.unwrap_or(VarianceStructure::LabelInvariant),
            dataset.characteristic_names.clone(),
            tau_hierarchy,
        ),
    };
    let structure = structure.unwrap_or(spec.structure);
    let hierarchy = spec.tau_hierarchy || tau_hierarchy;
    if structure != spec.structure || hierarchy != spec.tau_hierarchy {
        spec = spec.reshaped(structure, hierarchy);
    }
    if !characteristics.is_empty() {
        spec.characteristics = characteristics.to_vec();
    }
    spec.validate().context("model spec")?;
    Ok(spec)
}

fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format!("unix:{secs}")
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn exit_for(converged: bool, allow: bool) -> ExitCode {
    if converged || allow {
        ExitCode::SUCCESS
    } else {
        eprintln!("convergence check failed; rerun longer or pass --allow-unconverged");
        ExitCode::from(UNCONVERGED)
    }
}

fn cmd_fit(a: FitArgs) -> Result<ExitCode> {
    let dataset = load_dataset(&a.dataset)?;
    let m = &a.model;
    let spec = build_spec(
        &dataset,
        m.config.as_deref(),
        m.structure,
        &m.characteristics,
        m.tau_hierarchy,
    )?;
    let fit = report::fit(&dataset, &spec, &a.mcmc.config()).context("fit")?;
    let mut rep = fit.report;
    if let Some(dir) = &a.dump_draws {
        let paths = report::dump_draws(&fit.draws, dir).context("dumping draws")?;
        rep.draw_files = paths.iter().map(|p| p.display().to_string()).collect();
    }
    if a.out.timestamp {
        rep.timestamp = Some(timestamp());
    }
    print!("{}", report::render_text(&rep));
    if let Some(path) = &a.out.output {
        write_json(path, &rep)?;
    }
    Ok(exit_for(rep.convergence.converged, a.allow_unconverged))
}

fn cmd_compare(a: CompareArgs) -> Result<ExitCode> {
    let dataset = load_dataset(&a.dataset)?;
    let sides = a.config.len().max(a.structure.len());
    if sides != 2 || (!a.config.is_empty() && a.config.len() != 2) {
        bail!("compare needs two models: give --config twice or --structure twice");
    }
    let spec = |i: usize| {
        build_spec(
            &dataset,
            a.config.get(i).map(PathBuf::as_path),
            a.structure.get(i).copied(),
            &a.characteristics,
            a.tau_hierarchy,
        )
    };
    let (first, second) = (spec(0)?, spec(1)?);
    let mut rep =
        report::compare(&dataset, &first, &second, &a.mcmc.config()).context("compare")?;
    if a.out.timestamp {
        let t = timestamp();
        rep.first.timestamp = Some(t.clone());
        rep.second.timestamp = Some(t);
    }
    print!("{}", report::render_comparison(&rep));
    if let Some(path) = &a.out.output {
        write_json(path, &rep)?;
    }
    let converged = rep.first.convergence.converged && rep.second.convergence.converged;
    Ok(exit_for(converged, a.allow_unconverged))
}

fn cmd_sensitivity(a: SensitivityArgs) -> Result<ExitCode> {
    let dataset = load_dataset(&a.dataset)?;
    let m = &a.model;
    let spec = build_spec(
        &dataset,
        m.config.as_deref(),
        m.structure,
        &m.characteristics,
        m.tau_hierarchy,
    )?;
    let priors = report::select_priors(&a.priors)?;
    let mut rep =
        report::sensitivity(&dataset, &spec, &priors, &a.mcmc.config()).context("sensitivity")?;
    if a.out.timestamp {
        let t = timestamp();
        for f in rep.fits.iter_mut().filter_map(|f| f.report.as_mut()) {
            f.timestamp = Some(t.clone());
        }
    }
    print!("{}", report::render_sensitivity(&rep));
    if let Some(path) = &a.out.output {
        write_json(path, &rep)?;
    }
    if let Some(path) = &a.table {
        fs::write(path, report::sensitivity_csv(&rep)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let converged = rep
        .fits
        .iter()
        .all(|f| f.report.as_ref().is_some_and(|r| r.convergence.converged));
    Ok(exit_for(converged, a.allow_unconverged))
}

fn cmd_simulate(a: SimulateArgs) -> Result<ExitCode> {
    let text =
        fs::read_to_string(&a.config).with_context(|| format!("opening {}", a.config.display()))?;
    let mut truth = TruthConfig::from_toml(&text)
        .with_context(|| format!("truth config {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        truth.seed = seed;
    }
    let (dataset, record) = generate(&truth).context("simulate")?;
    let sidecar = write_simulation(&a.output, &dataset, &record).context("writing simulation")?;
    println!(
        "wrote {} ({} meta-analyses, {} trials) and {}",
        a.output.display(),
        dataset.meta_analyses.len(),
        dataset.n_trials(),
        sidecar.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(a: ReportArgs) -> Result<ExitCode> {
    let text =
        fs::read_to_string(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).context("parsing report")?;
    let schema = value
        .get("schema_version")
        .and_then(|v| v.as_str())
        .unwrap_or_default();
    let rendered = match schema {
        s if s == report::SCHEMA_VERSION => {
            report::render_text(&serde_json::from_value::<RunReport>(value)?)
        }
        s if s == report::COMPARISON_SCHEMA_VERSION => {
            report::render_comparison(&serde_json::from_value::<ComparisonReport>(value)?)
        }
        s if s == report::SENSITIVITY_SCHEMA_VERSION => {
            report::render_sensitivity(&serde_json::from_value::<SensitivityReport>(value)?)
        }
        other => bail!("unrecognised report schema '{other}'"),
    };
    print!("{rendered}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_summarize(a: SummarizeArgs) -> Result<ExitCode> {
    let dataset = load_dataset(&a.dataset)?;
    let s = data::summarize(&dataset);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
        return Ok(ExitCode::SUCCESS);
    }
    println!("{} meta-analyses, {} trials", s.meta_analyses, s.trials);
    if let Some(q) = &s.trials_per_meta {
        println!(
            "trials per meta-analysis: min {} q1 {} median {} q3 {} max {}",
            q.min, q.q1, q.median, q.q3, q.max
        );
    }
    for c in &s.characteristics {
        println!(
            "{}: {} flagged trials, {} informative and {} cut-eligible meta-analyses",
            c.name, c.flagged_trials, c.informative_meta_analyses, c.cut_eligible_meta_analyses
        );
    }
    Ok(ExitCode::SUCCESS)
}
