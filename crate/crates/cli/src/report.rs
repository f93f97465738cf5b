//! The `analyze` pipeline and its report.

use std::time::Duration;

use anyhow::{bail, Context, Result};
use learnfx::estimators::{learning_series, quick_detect, treatment_effect_series, EffectSeries, LearningSeries};
use learnfx::extrapolate::{bootstrap_fit, fit_exponential, long_term_effect, BootstrapOptions, BootstrapSummary};
use learnfx::extrapolate::{ExponentialFit, LongTermEstimate};
use learnfx::inference::{annotate_effects, annotate_learning, IntervalEstimate};
use learnfx::panel::{
    bucket_windows, cell_means, impute, ingest, restrict_windows, srm_check, Alignment, CohortSchedule, DesignKind,
    ExperimentPanel, Imputation, ScheduleFile, SrmDiagnostic,
};
use learnfx::{Error, LearningMethod};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;
/// Length of the leading period of the periods summary, in windows.
pub const FIRST_PERIOD: usize = 3;
/// Length of the following periods, in windows.
pub const PERIOD_LENGTH: usize = 7;

/// Settings of one `analyze` run; recorded verbatim in the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeConfig {
    pub mode: Alignment,
    pub imputation: Imputation,
    pub alpha: f64,
    /// Requested methods; `None` means every method the design supports.
    pub methods: Option<Vec<LearningMethod>>,
    pub fit: bool,
    pub bootstrap: Option<usize>,
    pub seed: u64,
    /// Window length for timestamped input, in seconds.
    pub window_length_secs: u64,
    /// Design ratios for the SRM check; equal split when `None`.
    pub expected_ratios: Option<Vec<f64>>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            mode: Alignment::Calendar,
            imputation: Imputation::Zero,
            alpha: learnfx::DEFAULT_ALPHA,
            methods: None,
            fit: false,
            bootstrap: None,
            seed: 0,
            window_length_secs: 86_400,
            expected_ratios: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub input_sha256: String,
    pub schedule_sha256: String,
    pub config: AnalyzeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelSummary {
    pub design: DesignKind,
    pub units: usize,
    pub cohorts: usize,
    pub windows: usize,
    pub cohort_sizes: Vec<usize>,
}

/// One window of an estimate table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub window: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub significant: bool,
}

impl SeriesRow {
    fn new(window: usize, interval: &IntervalEstimate<f64>) -> Self {
        Self {
            window,
            estimate: interval.point,
            std_error: interval.std_error,
            ci_low: interval.ci_low,
            ci_high: interval.ci_high,
            p_value: interval.p_value,
            significant: interval.is_significant(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningTable {
    pub method: LearningMethod,
    pub rows: Vec<SeriesRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectSummary {
    pub delta2: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub significant: bool,
    pub n_units: usize,
    pub n_units_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSection {
    pub method: LearningMethod,
    pub fit: ExponentialFit<f64>,
    pub bootstrap: Option<BootstrapSummary<f64>>,
    pub long_term: Option<LongTermEstimate<f64>>,
}

/// An estimate in the periods summary, with its size relative to the control mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodEstimate {
    pub estimate: f64,
    pub relative_pct: f64,
    pub p_value: f64,
    pub significant: bool,
    pub stars: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodRow {
    pub period: String,
    pub first_window: usize,
    pub last_window: usize,
    pub control_mean: f64,
    pub tau: PeriodEstimate,
    /// Absent when the period is a single window.
    pub delta2: Option<PeriodEstimate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub panel: PanelSummary,
    pub srm: SrmDiagnostic,
    pub effects: Vec<SeriesRow>,
    pub learning: Vec<LearningTable>,
    pub quick_detect: Option<DetectSummary>,
    pub fits: Vec<FitSection>,
    pub periods: Vec<PeriodRow>,
    pub warnings: Vec<Warning>,
    pub notes: Vec<String>,
}

impl AnalysisReport {
    pub fn has_warning(&self, code: &str) -> bool {
        self.warnings.iter().any(|w| w.code == code)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses, buckets and imputes a metric CSV.
pub fn load_panel(
    input: &[u8],
    mode: Alignment,
    imputation: Imputation,
    window_length_secs: u64,
) -> Result<ExperimentPanel<f64>> {
    let raw = ingest::<f64, _>(input).context("reading input")?;
    let raw = impute(&raw, imputation);
    let length = Duration::from_secs(window_length_secs);
    Ok(bucket_windows(&raw, mode, Some(length))?)
}

pub fn parse_schedule(schedule: &[u8]) -> Result<CohortSchedule> {
    let file: ScheduleFile = serde_json::from_slice(schedule).context("reading schedule")?;
    Ok(CohortSchedule::from_file(&file)?)
}

fn supported_methods(design: DesignKind) -> Vec<LearningMethod> {
    match design {
        DesignKind::TwoCohort => vec![LearningMethod::Did],
        DesignKind::Ladder => vec![
            LearningMethod::Did,
            LearningMethod::Ladder,
            LearningMethod::CrossSectional,
        ],
    }
}

fn stars(significant: bool) -> &'static str {
    if significant {
        "*"
    } else {
        ""
    }
}

/// Runs the full analysis on CSV and schedule bytes.
pub fn analyze(input: &[u8], schedule: &[u8], config: &AnalyzeConfig) -> Result<AnalysisReport> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        bail!("alpha must lie in (0, 1), got {}", config.alpha);
    }
    let level = 1.0 - config.alpha;
    let panel = load_panel(input, config.mode, config.imputation, config.window_length_secs)?;
    let schedule_def = parse_schedule(schedule)?;
    let design = schedule_def.design();

    let mut warnings = Vec::new();
    let mut notes =
        vec!["p-values are per window; no multiple-testing correction is applied across windows".to_string()];

    let ratios = match &config.expected_ratios {
        Some(r) => r.clone(),
        None => vec![1.0 / panel.cohorts() as f64; panel.cohorts()],
    };
    let srm = srm_check(&panel, &ratios)?;
    if srm.flagged {
        warnings.push(Warning {
            code: "srm",
            message: format!(
                "sample ratio mismatch: cohort sizes {:?} (chi-square {:.3}, p = {:.3e}); results may be untrustworthy",
                srm.counts, srm.statistic, srm.p_value
            ),
        });
    }
    if config.imputation == Imputation::ObservedOnly {
        warnings.push(Warning {
            code: "missingness",
            message:
                "observed-only analysis assumes missing values are distributed alike across cohorts; this is not tested"
                    .into(),
        });
    }

    let cells = cell_means(&panel, &schedule_def)?;
    let (effects, effects_unpaired) = annotate_effects(&treatment_effect_series(&cells)?, &panel, level)?;

    let supported = supported_methods(design);
    let methods = match &config.methods {
        Some(requested) => {
            for m in requested {
                if !supported.contains(m) {
                    bail!("method `{}` needs a ladder schedule", m.name());
                }
            }
            requested.clone()
        }
        None => supported,
    };
    let mut learning = Vec::new();
    let mut series_by_method: Vec<(LearningMethod, LearningSeries<f64>)> = Vec::new();
    let mut unpaired = effects_unpaired;
    for &method in &methods {
        let series = learning_series(method, &cells)?;
        let (annotated, fallback) = annotate_learning(&series, &panel, &cells, level)?;
        unpaired |= fallback;
        learning.push(LearningTable {
            method,
            rows: learning_rows(&annotated),
        });
        series_by_method.push((method, series));
    }
    if unpaired {
        warnings.push(Warning {
            code: "unpaired-variance",
            message: "some units are missing windows, so variances fall back to independent cell means; \
                      intervals ignore within-unit correlation"
                .into(),
        });
    }

    let quick = if panel.cohorts() == 2 {
        let r = quick_detect(&panel, level)?;
        Some(DetectSummary {
            delta2: r.delta2_hat,
            se: r.std_error,
            ci_low: r.interval.ci_low,
            ci_high: r.interval.ci_high,
            p_value: r.p_value,
            significant: r.interval.is_significant(),
            n_units: r.n_units_used,
            n_units_excluded: r.n_units_excluded,
        })
    } else {
        notes.push("quick detection needs a two-cohort panel and was skipped".into());
        None
    };

    let mut fits = Vec::new();
    if config.fit || config.bootstrap.is_some() {
        for (method, series) in &series_by_method {
            fits.push(fit_section(
                *method,
                series,
                &panel,
                &schedule_def,
                &effects,
                config,
                level,
                &mut warnings,
            )?);
        }
    }

    let periods = if panel.cohorts() == 2 {
        period_rows(&panel, &schedule_def, config.alpha, level)?
    } else {
        Vec::new()
    };
    if periods.is_empty() {
        notes.push("the periods summary needs a two-cohort panel".into());
    }

    Ok(AnalysisReport {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata {
            tool: "learnfx",
            version: env!("CARGO_PKG_VERSION"),
            input_sha256: sha256_hex(input),
            schedule_sha256: sha256_hex(schedule),
            config: config.clone(),
        },
        panel: PanelSummary {
            design,
            units: panel.n_units(),
            cohorts: panel.cohorts(),
            windows: panel.windows(),
            cohort_sizes: panel.cohort_sizes(),
        },
        srm,
        effects: effect_rows(&effects),
        learning,
        quick_detect: quick,
        fits,
        periods,
        warnings,
        notes,
    })
}

fn effect_rows(effects: &EffectSeries<f64>) -> Vec<SeriesRow> {
    effects
        .windows
        .iter()
        .map(|w| SeriesRow::new(w.window, w.interval.as_ref().expect("annotated")))
        .collect()
}

fn learning_rows(series: &LearningSeries<f64>) -> Vec<SeriesRow> {
    series
        .windows
        .iter()
        .map(|w| SeriesRow::new(w.window, w.interval.as_ref().expect("annotated")))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn fit_section(
    method: LearningMethod,
    series: &LearningSeries<f64>,
    panel: &ExperimentPanel<f64>,
    schedule: &CohortSchedule,
    effects: &EffectSeries<f64>,
    config: &AnalyzeConfig,
    level: f64,
    warnings: &mut Vec<Warning>,
) -> Result<FitSection> {
    let mut fit = fit_exponential(series)?;
    let mut bootstrap = None;
    if !fit.converged {
        warnings.push(Warning {
            code: "fit-not-converged",
            message: format!(
                "{} curve fit did not converge after {} iterations; no long-term estimate",
                method.name(),
                fit.iterations
            ),
        });
        return Ok(FitSection {
            method,
            fit,
            bootstrap,
            long_term: None,
        });
    }
    if let Some(replicates) = config.bootstrap {
        let options = BootstrapOptions {
            replicates,
            seed: config.seed,
            ..BootstrapOptions::default()
        };
        match bootstrap_fit(panel, schedule, method, &options) {
            Ok(summary) => {
                if summary.dropped > 0 {
                    warnings.push(Warning {
                        code: "bootstrap-dropped",
                        message: format!(
                            "{}: {} of {} bootstrap replicates failed to fit and were dropped",
                            method.name(),
                            summary.dropped,
                            summary.replicates
                        ),
                    });
                }
                fit = summary.apply(&fit);
                bootstrap = Some(summary);
            }
            Err(e @ Error::BootstrapFailures { .. }) => {
                warnings.push(Warning {
                    code: "bootstrap-dropped",
                    message: format!("{}: {e}; standard errors omitted", method.name()),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    let long_term = Some(long_term_effect(effects, &fit, level)?);
    Ok(FitSection {
        method,
        fit,
        bootstrap,
        long_term,
    })
}

/// Period boundaries: the first [`FIRST_PERIOD`] windows, then consecutive
/// blocks of [`PERIOD_LENGTH`] windows (the last block may be shorter).
pub fn periods(windows: usize) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    if windows >= FIRST_PERIOD {
        out.push((format!("First {FIRST_PERIOD} windows"), 1, FIRST_PERIOD));
    }
    let mut start = 1;
    let mut block = 1;
    while start <= windows {
        let end = (start + PERIOD_LENGTH - 1).min(windows);
        out.push((format!("Week {block}"), start, end));
        start = end + 1;
        block += 1;
    }
    out
}

fn period_rows(
    panel: &ExperimentPanel<f64>,
    schedule: &CohortSchedule,
    alpha: f64,
    level: f64,
) -> Result<Vec<PeriodRow>> {
    let mut rows = Vec::new();
    for (label, first, last) in periods(panel.windows()) {
        let sub = restrict_windows(panel, first, last)?;
        let sub_schedule = CohortSchedule::from_assignments(
            schedule.design(),
            (1..=schedule.cohorts())
                .map(|c| {
                    (first..=last)
                        .map(|w| schedule.arm(c, w).expect("inside schedule"))
                        .collect()
                })
                .collect(),
        )?;
        let cells = cell_means(&sub, &sub_schedule)?;
        let (effects, _) = annotate_effects(&treatment_effect_series(&cells)?, &sub, level)?;
        let tau = effects
            .windows
            .last()
            .expect("non-empty period")
            .interval
            .expect("annotated");
        let control_mean = (1..=sub.windows())
            .map(|w| cells.mean(1, w))
            .sum::<learnfx::Result<f64>>()?
            / sub.windows() as f64;
        let estimate = |point: f64, p_value: f64| {
            let significant = p_value < alpha;
            PeriodEstimate {
                estimate: point,
                relative_pct: 100.0 * point / control_mean,
                p_value,
                significant,
                stars: stars(significant),
            }
        };
        let delta2 = if last > first {
            let q = quick_detect(&sub, level)?;
            Some(estimate(q.delta2_hat, q.p_value))
        } else {
            None
        };
        rows.push(PeriodRow {
            period: label,
            first_window: first,
            last_window: last,
            control_mean,
            tau: estimate(tau.point, tau.p_value),
            delta2,
        });
    }
    Ok(rows)
}

/// Plain-text rendering of the periods summary.
pub fn render_periods(report: &AnalysisReport) -> String {
    if report.periods.is_empty() {
        return "no periods summary: it needs a two-cohort panel\n".into();
    }
    let pct = |e: &PeriodEstimate| format!("{:.2}% ({:.2e}){}", e.relative_pct, e.p_value, e.stars);
    let mut out = format!(
        "{:<18} {:<28} {:<28}\n",
        "period", "tau in % (p-value)", "delta2 in % (p-value)"
    );
    for row in &report.periods {
        let delta2 = row.delta2.as_ref().map_or_else(|| "-".to_string(), pct);
        out.push_str(&format!("{:<18} {:<28} {:<28}\n", row.period, pct(&row.tau), delta2));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn period_boundaries() {
        assert_eq!(
            periods(21).iter().map(|p| (p.1, p.2)).collect::<Vec<_>>(),
            vec![(1, 3), (1, 7), (8, 14), (15, 21)]
        );
        assert_eq!(
            periods(9).iter().map(|p| (p.1, p.2)).collect::<Vec<_>>(),
            vec![(1, 3), (1, 7), (8, 9)]
        );
        assert_eq!(periods(2).len(), 1);
    }

    #[test]
    fn identical_arms_give_zero_series() {
        let mut csv = String::from("unit_id,cohort,window,value\n");
        for u in 0..6 {
            for w in 1..=4 {
                let v = (u % 3 + w) as f64;
                csv.push_str(&format!("c{u},1,{w},{v}\nt{u},2,{w},{v}\n"));
            }
        }
        let schedule = br#"{"design":"two-cohort","cohorts":2,"windows":4}"#;
        let report = analyze(csv.as_bytes(), schedule, &AnalyzeConfig::default()).unwrap();
        assert!(report.effects.iter().all(|r| r.estimate == 0.0 && r.p_value == 1.0));
        assert!(report.learning[0]
            .rows
            .iter()
            .all(|r| r.estimate == 0.0 && r.p_value == 1.0));
        assert!(report.warnings.is_empty());
    }
}
