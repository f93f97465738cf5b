//! Command-line definitions and dispatch.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use learnfx::inference::{power_comparison, PowerWinner};
use learnfx::panel::{Alignment, Imputation};
use learnfx::simulate::{run_replications, ReplicationSummary, SimulationConfig};
use learnfx::{quick_detect, LearningMethod};
use serde::Serialize;

use crate::export::{learning_svg, write_series_csv, Precision};
use crate::format::to_json;
use crate::report::{analyze, load_panel, render_periods, AnalyzeConfig};

/// Exit code of a successful run.
pub const EXIT_OK: u8 = 0;
/// Exit code of any error.
pub const EXIT_ERROR: u8 = 1;
/// Exit code when `--strict-srm` trips on a sample ratio mismatch.
pub const EXIT_SRM: u8 = 2;
/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "LEARNFX_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "learnfx",
    version,
    about = "User-learning (novelty and primacy) analysis for A/B tests"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate effects and user-learning from a metric panel.
    Analyze(AnalyzeArgs),
    /// Quick split-half test for user-learning on a two-cohort panel.
    Detect(DetectArgs),
    /// Run the replication study on synthetic experiments.
    Simulate(SimulateArgs),
    /// Compare closed-form variances of the two learning estimators.
    Power(PowerArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Calendar,
    Exposure,
}

impl From<ModeArg> for Alignment {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Calendar => Alignment::Calendar,
            ModeArg::Exposure => Alignment::Exposure,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ImputeArg {
    Zero,
    Observed,
}

impl From<ImputeArg> for Imputation {
    fn from(m: ImputeArg) -> Self {
        match m {
            ImputeArg::Zero => Imputation::Zero,
            ImputeArg::Observed => Imputation::ObservedOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Did,
    Ladder,
    Cross,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    Readable,
    Full,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Metric CSV (unit_id, cohort, window or timestamp, value).
    #[arg(long)]
    pub input: PathBuf,
    /// Schedule JSON.
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long, value_enum, default_value = "calendar")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "zero")]
    pub impute: ImputeArg,
    #[arg(long, default_value_t = learnfx::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "all")]
    pub method: MethodArg,
    /// Fit the exponential learning curve and extrapolate the long-term effect.
    #[arg(long)]
    pub fit: bool,
    /// Bootstrap replicates for the fit's standard errors (implies --fit).
    #[arg(long, value_name = "B")]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
    /// Float precision of CSV output.
    #[arg(long, value_enum, default_value = "readable")]
    pub csv_precision: PrecisionArg,
    /// Exit with code 2 when the sample ratio check fails.
    #[arg(long)]
    pub strict_srm: bool,
    /// Also write a chart of the learning series.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Window length for timestamped input, e.g. `1d`, `12h`, `3600s`.
    #[arg(long, default_value = "1d", value_parser = parse_window_length)]
    pub window_length: u64,
    /// Design ratios per cohort for the sample ratio check, e.g. `0.5,0.5`.
    #[arg(long, value_delimiter = ',')]
    pub expected_ratios: Option<Vec<f64>>,
    /// Print the periods summary to stderr.
    #[arg(long)]
    pub summary: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "zero")]
    pub impute: ImputeArg,
    #[arg(long, default_value_t = learnfx::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value = "1d", value_parser = parse_window_length)]
    pub window_length: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config JSON; inline flags override its fields.
    #[arg(long, conflicts_with = "paper_preset")]
    pub config: Option<PathBuf>,
    /// Start from the desk-scale reference configuration.
    #[arg(long)]
    pub paper_preset: bool,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_units: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub effect_a: Option<f64>,
    #[arg(long)]
    pub effect_b: Option<f64>,
    #[arg(long)]
    pub effect_sd: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Skip curve fitting; only the per-window summaries are produced.
    #[arg(long)]
    pub no_fit: bool,
    /// Summary JSON path; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-replication CSV of fitted parameters.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Total units split across arms or cohorts.
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    /// Ladder cohorts (windows + 1).
    #[arg(long)]
    pub k: usize,
    /// Per-window metric variance.
    #[arg(long, default_value_t = 4.0)]
    pub sigma_sq: f64,
    /// Within-unit correlation across windows.
    #[arg(long)]
    pub rho: f64,
}

/// Parses `<n>[s|m|h|d]` into seconds; a bare number is seconds.
pub fn parse_window_length(s: &str) -> std::result::Result<u64, String> {
    let s = s.trim();
    let (digits, unit) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => (&s[..i], c),
        _ => (s, 's'),
    };
    let n: u64 = digits.parse().map_err(|_| format!("invalid window length `{s}`"))?;
    let scale = match unit {
        's' => 1,
        'm' => 60,
        'h' => 3_600,
        'd' => 86_400,
        _ => return Err(format!("unknown unit in window length `{s}`")),
    };
    match n.checked_mul(scale) {
        Some(0) | None => Err(format!("window length `{s}` out of range")),
        Some(v) => Ok(v),
    }
}

/// Caps the global worker pool from [`THREADS_ENV`] if set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Runs a parsed command and returns its exit code.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Detect(args) => cmd_detect(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Power(args) => cmd_power(&args),
    }
}

pub fn analyze_config(args: &AnalyzeArgs) -> AnalyzeConfig {
    let methods = match args.method {
        MethodArg::All => None,
        MethodArg::Did => Some(vec![LearningMethod::Did]),
        MethodArg::Ladder => Some(vec![LearningMethod::Ladder]),
        MethodArg::Cross => Some(vec![LearningMethod::CrossSectional]),
    };
    AnalyzeConfig {
        mode: args.mode.into(),
        imputation: args.impute.into(),
        alpha: args.alpha,
        methods,
        fit: args.fit || args.bootstrap.is_some(),
        bootstrap: args.bootstrap,
        seed: args.seed,
        window_length_secs: args.window_length,
        expected_ratios: args.expected_ratios.clone(),
    }
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<u8> {
    let input = read(&args.input)?;
    let schedule = read(&args.schedule)?;
    let report = analyze(&input, &schedule, &analyze_config(args))?;
    let text = match args.format {
        FormatArg::Json => to_json(&report)?,
        FormatArg::Csv => {
            let precision = match args.csv_precision {
                PrecisionArg::Readable => Precision::Readable,
                PrecisionArg::Full => Precision::Full,
            };
            let mut buf = Vec::new();
            write_series_csv(&report, precision, &mut buf)?;
            String::from_utf8(buf).expect("CSV of UTF-8 fields")
        }
    };
    emit(&text, args.output.as_deref())?;
    if let Some(path) = &args.svg {
        fs::write(path, learning_svg(&report)).with_context(|| format!("writing {}", path.display()))?;
    }
    for w in &report.warnings {
        eprintln!("warning [{}]: {}", w.code, w.message);
    }
    if args.summary {
        eprint!("{}", render_periods(&report));
    }
    if args.strict_srm && report.srm.flagged {
        eprintln!("error: sample ratio mismatch with --strict-srm");
        return Ok(EXIT_SRM);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct DetectOutput {
    delta2: f64,
    se: f64,
    p_value: f64,
    n_units: usize,
    n_units_excluded: usize,
    ci_low: f64,
    ci_high: f64,
    significant: bool,
}

fn cmd_detect(args: &DetectArgs) -> Result<u8> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        bail!("alpha must lie in (0, 1), got {}", args.alpha);
    }
    let input = read(&args.input)?;
    let panel = load_panel(&input, Alignment::Exposure, args.impute.into(), args.window_length)?;
    let r = quick_detect(&panel, 1.0 - args.alpha)?;
    let out = DetectOutput {
        delta2: r.delta2_hat,
        se: r.std_error,
        p_value: r.p_value,
        n_units: r.n_units_used,
        n_units_excluded: r.n_units_excluded,
        ci_low: r.interval.ci_low,
        ci_high: r.interval.ci_high,
        significant: r.interval.is_significant(),
    };
    emit(&to_json(&out)?, None)?;
    Ok(EXIT_OK)
}

/// Builds the simulation config from a file or preset plus inline overrides.
pub fn simulation_config(args: &SimulateArgs) -> Result<SimulationConfig> {
    let mut config = match &args.config {
        Some(path) => serde_json::from_slice(&read(path)?).with_context(|| format!("parsing {}", path.display()))?,
        None => SimulationConfig::paper_preset(),
    };
    if let Some(v) = args.replications {
        config.replications = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.n_units {
        config.n_units = v;
    }
    if let Some(v) = args.k {
        config.k = v;
        if config.window_effects.len() != config.windows() {
            config.window_effects.clear();
        }
    }
    if let Some(v) = args.sigma {
        config.sigma = v;
    }
    if let Some(v) = args.effect_a {
        config.effect_a = v;
    }
    if let Some(v) = args.effect_b {
        config.effect_b = v;
    }
    if args.effect_sd.is_some() {
        config.effect_sd = args.effect_sd;
    }
    if let Some(v) = args.rho {
        config.rho = v;
    }
    if args.no_fit {
        config.fit_curves = false;
    }
    config.validate()?;
    Ok(config)
}

pub fn records_csv(summary: &ReplicationSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["replication", "approach", "a", "b", "converged"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:?}"));
    for r in &summary.records {
        w.write_record([
            r.replication.to_string(),
            r.approach.name().to_string(),
            opt(r.a),
            opt(r.b),
            r.converged.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().context("flushing CSV")?).expect("UTF-8"))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let config = simulation_config(args)?;
    let summary = run_replications(&config)?;
    emit(&to_json(&summary)?, args.output.as_deref())?;
    if let Some(path) = &args.csv {
        fs::write(path, records_csv(&summary)?).with_context(|| format!("writing {}", path.display()))?;
    }
    if summary.observational.non_converged + summary.experimental.non_converged > 0 {
        eprintln!(
            "warning: {} observational and {} experimental fits did not converge",
            summary.observational.non_converged, summary.experimental.non_converged
        );
    }
    Ok(EXIT_OK)
}

fn cmd_power(args: &PowerArgs) -> Result<u8> {
    let p = power_comparison(args.n, args.k, args.sigma_sq, args.rho)?;
    emit(&to_json(&p)?, None)?;
    let verdict = match p.winner {
        PowerWinner::Observational => "observational (DID) has the smaller variance",
        PowerWinner::Experimental => "experimental (ladder) has the smaller variance",
        PowerWinner::Tie => "tie: rho is at the crossover",
    };
    eprintln!("{verdict}");
    Ok(EXIT_OK)
}
