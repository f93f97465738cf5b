//! Synthetic experiments with injected exponential user-learning, and the
//! replication study comparing the observational (two-cohort DID) and
//! experimental (ladder) approaches on the same unit pool.
//!
//! Baseline outcome of unit `u` in window `j`:
//! `intercept + window_effects[j] + sigma * (sqrt(rho) z_u + sqrt(1 - rho) e_uj)`
//! with standard normal `z_u`, `e_uj`. A treated unit at exposure age `s`
//! additionally receives an independent `N(effect_a * exp(-effect_b * s), effect_sd^2)` draw.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{learning_series, LearningMethod};
use crate::extrapolate::{fit_exponential, replicate_rng, CurveForm, ExponentialFit};
use crate::panel::{cell_means, Alignment, CohortSchedule, DesignKind, ExperimentPanel, Imputation, Unit};
use crate::scalar::{self, Scalar};

/// Parameters of a synthetic experiment and of the replication study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_units: usize,
    /// Number of ladder cohorts; the experiment runs `k - 1` windows.
    pub k: usize,
    /// Per-window baseline noise SD.
    pub sigma: f64,
    /// Injected effect at exposure age `s` has mean `effect_a * exp(-effect_b * s)`.
    pub effect_a: f64,
    pub effect_b: f64,
    /// SD of the injected effect draw; defaults to `sigma`.
    #[serde(default)]
    pub effect_sd: Option<f64>,
    #[serde(default)]
    pub baseline_intercept: f64,
    /// Additive window effects, length `k - 1`; empty means all zero.
    #[serde(default)]
    pub window_effects: Vec<f64>,
    /// Within-unit correlation across windows, in `[0, 1)`.
    #[serde(default)]
    pub rho: f64,
    pub design: DesignKind,
    pub replications: usize,
    pub seed: u64,
    /// Fit exponential curves in `run_replications`; needs at least 3 windows.
    #[serde(default = "default_true")]
    pub fit_curves: bool,
}

fn default_true() -> bool {
    true
}

impl SimulationConfig {
    /// The desk-scale reference simulation: 20000 units,
    /// 14 windows, noise and effect SD 2, injected `e^{-t/3}`, 200 replications.
    pub fn paper_preset() -> Self {
        Self {
            n_units: 20_000,
            k: 15,
            sigma: 2.0,
            effect_a: 1.0,
            effect_b: 1.0 / 3.0,
            effect_sd: None,
            baseline_intercept: 10.0,
            window_effects: (1..=14)
                .map(|j| 0.5 * (2.0 * std::f64::consts::PI * j as f64 / 7.0).sin())
                .collect(),
            rho: 0.5,
            design: DesignKind::Ladder,
            replications: 200,
            seed: 7,
            fit_curves: true,
        }
    }

    pub fn windows(&self) -> usize {
        self.k.saturating_sub(1)
    }

    pub fn effect_sd(&self) -> f64 {
        self.effect_sd.unwrap_or(self.sigma)
    }

    pub fn window_effect(&self, window: usize) -> f64 {
        self.window_effects.get(window - 1).copied().unwrap_or(0.0)
    }

    /// True learning `A (e^{-Bt} - e^{-B})` at exposure window `t`.
    pub fn true_learning(&self, t: usize) -> f64 {
        CurveForm::Learning.value(t as f64, self.effect_a, self.effect_b)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k < 3 {
            return bad(format!("k must be at least 3, got {}", self.k));
        }
        if self.n_units < 2 * self.k {
            return bad(format!(
                "n_units ({}) must be at least 2k ({})",
                self.n_units,
                2 * self.k
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.effect_sd() >= 0.0 && self.effect_sd().is_finite()) {
            return bad(format!("effect_sd must be non-negative, got {}", self.effect_sd()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!(
                "rho must lie in [0, 1) for the shared-component model, got {}",
                self.rho
            ));
        }
        if !self.window_effects.is_empty() && self.window_effects.len() != self.windows() {
            return bad(format!(
                "window_effects has {} entries, expected {}",
                self.window_effects.len(),
                self.windows()
            ));
        }
        if ![self.effect_a, self.effect_b, self.baseline_intercept]
            .iter()
            .chain(&self.window_effects)
            .all(|v| v.is_finite())
        {
            return bad("effect and baseline parameters must be finite".into());
        }
        if self.replications < 1 {
            return bad("replications must be at least 1".into());
        }
        Ok(())
    }
}

/// Baseline outcomes of a unit pool, row-major `n_units x windows`.
struct BaselinePool {
    windows: usize,
    values: Vec<f64>,
}

impl BaselinePool {
    fn draw(config: &SimulationConfig, rng: &mut ChaCha8Rng) -> Self {
        let windows = config.windows();
        let (shared, own) = (config.rho.sqrt(), (1.0 - config.rho).sqrt());
        let mut values = Vec::with_capacity(config.n_units * windows);
        for _ in 0..config.n_units {
            let z: f64 = rng.sample(StandardNormal);
            for j in 1..=windows {
                let e: f64 = rng.sample(StandardNormal);
                values
                    .push(config.baseline_intercept + config.window_effect(j) + config.sigma * (shared * z + own * e));
            }
        }
        Self { windows, values }
    }

    fn row(&self, unit: usize) -> &[f64] {
        &self.values[unit * self.windows..(unit + 1) * self.windows]
    }
}

/// Randomly splits the pool into equal cohorts and injects the treatment effect.
fn assign<T: Scalar>(
    pool: &BaselinePool,
    config: &SimulationConfig,
    schedule: &CohortSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<ExperimentPanel<T>> {
    let n = config.n_units;
    let cohorts = schedule.cohorts();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let effect_sd = config.effect_sd();
    let mut units = Vec::with_capacity(n);
    for (slot, &unit) in order.iter().enumerate() {
        let cohort = slot * cohorts / n + 1;
        let values: Vec<T> = pool
            .row(unit)
            .iter()
            .enumerate()
            .map(|(j, &base)| {
                let age = schedule.exposure_age(cohort, j + 1);
                let y = if age == 0 {
                    base
                } else {
                    let noise: f64 = rng.sample(StandardNormal);
                    base + config.effect_a * (-config.effect_b * age as f64).exp() + effect_sd * noise
                };
                T::lit(y)
            })
            .collect();
        units.push(Unit::dense(format!("u{unit}"), cohort, &values)?);
    }
    ExperimentPanel::from_units(units, Imputation::Zero, Alignment::Calendar)
}

fn schedule_for(design: DesignKind, config: &SimulationConfig) -> Result<CohortSchedule> {
    match design {
        DesignKind::TwoCohort => CohortSchedule::two_cohort(config.windows()),
        DesignKind::Ladder => CohortSchedule::ladder(config.k),
    }
}

/// Generates one synthetic experiment under `config.design`.
pub fn generate_experiment<T: Scalar>(
    config: &SimulationConfig,
    seed: u64,
) -> Result<(ExperimentPanel<T>, CohortSchedule)> {
    config.validate()?;
    let mut rng = replicate_rng(seed, 0);
    let pool = BaselinePool::draw(config, &mut rng);
    let schedule = schedule_for(config.design, config)?;
    let panel = assign(&pool, config, &schedule, &mut rng)?;
    Ok((panel, schedule))
}

/// Panels of one replication: the same unit pool split two ways.
pub struct ReplicationPanels<T> {
    pub two_cohort: (ExperimentPanel<T>, CohortSchedule),
    pub ladder: (ExperimentPanel<T>, CohortSchedule),
}

/// Generates replication `index`: one baseline pool, split into two cohorts
/// and, independently, into `k` ladder cohorts.
pub fn replication_panels<T: Scalar>(config: &SimulationConfig, index: usize) -> Result<ReplicationPanels<T>> {
    config.validate()?;
    let mut rng = replicate_rng(config.seed, index);
    let pool = BaselinePool::draw(config, &mut rng);
    let two = schedule_for(DesignKind::TwoCohort, config)?;
    let ladder = schedule_for(DesignKind::Ladder, config)?;
    let two_panel = assign(&pool, config, &two, &mut rng)?;
    let ladder_panel = assign(&pool, config, &ladder, &mut rng)?;
    Ok(ReplicationPanels {
        two_cohort: (two_panel, two),
        ladder: (ladder_panel, ladder),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    /// DID on a two-cohort split.
    Observational,
    /// Ladder estimator on a `k`-cohort split.
    Experimental,
}

impl Approach {
    pub fn method(self) -> LearningMethod {
        match self {
            Approach::Observational => LearningMethod::Did,
            Approach::Experimental => LearningMethod::Ladder,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Approach::Observational => "observational",
            Approach::Experimental => "experimental",
        }
    }
}

/// Fitted parameters of one approach in one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub approach: Approach,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSummary {
    pub window: usize,
    pub truth: f64,
    pub mean_delta: f64,
    /// Empirical variance of the estimate across replications.
    pub var_delta: f64,
    /// Monte-Carlo standard error of `mean_delta`.
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproachSummary {
    pub approach: Approach,
    pub method: LearningMethod,
    /// Over converged fits; `None` without fits.
    pub mean_a: Option<f64>,
    pub sd_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub sd_b: Option<f64>,
    pub converged: usize,
    pub non_converged: usize,
    pub windows: Vec<WindowSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub config: SimulationConfig,
    pub replications: usize,
    pub observational: ApproachSummary,
    pub experimental: ApproachSummary,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

struct ReplicationOutcome {
    deltas: [Vec<f64>; 2],
    fits: [Option<ExponentialFit<f64>>; 2],
}

fn run_one(config: &SimulationConfig, index: usize) -> Result<ReplicationOutcome> {
    let panels = replication_panels::<f64>(config, index)?;
    let mut deltas: [Vec<f64>; 2] = Default::default();
    let mut fits: [Option<ExponentialFit<f64>>; 2] = Default::default();
    for (slot, (approach, (panel, schedule))) in [
        (Approach::Observational, &panels.two_cohort),
        (Approach::Experimental, &panels.ladder),
    ]
    .into_iter()
    .enumerate()
    {
        let cells = cell_means(panel, schedule)?;
        let series = learning_series(approach.method(), &cells)?;
        if config.fit_curves {
            fits[slot] = Some(fit_exponential(&series)?);
        }
        deltas[slot] = series.deltas();
    }
    Ok(ReplicationOutcome { deltas, fits })
}

/// Runs `config.replications` independent replications in parallel.
///
/// Replication `r` draws from stream `(config.seed, r)` and results are merged
/// in replication order, so the summary does not depend on thread count.
pub fn run_replications(config: &SimulationConfig) -> Result<ReplicationSummary> {
    config.validate()?;
    if config.replications < 2 {
        return Err(Error::InvalidArgument("run at least 2 replications".into()));
    }
    let outcomes: Vec<ReplicationOutcome> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            run_one(config, r).map_err(|e| Error::Replication {
                replication: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(2 * outcomes.len());
    for (r, o) in outcomes.iter().enumerate() {
        for (slot, approach) in [Approach::Observational, Approach::Experimental]
            .into_iter()
            .enumerate()
        {
            if let Some(fit) = &o.fits[slot] {
                records.push(ReplicationRecord {
                    replication: r,
                    approach,
                    a: Some(fit.a),
                    b: Some(fit.b),
                    converged: fit.converged,
                });
            }
        }
    }
    let summarize = |slot: usize, approach: Approach| {
        let fits: Vec<&ExponentialFit<f64>> = outcomes.iter().filter_map(|o| o.fits[slot].as_ref()).collect();
        let ok: Vec<&&ExponentialFit<f64>> = fits.iter().filter(|f| f.converged).collect();
        let a: Vec<f64> = ok.iter().map(|f| f.a).collect();
        let b: Vec<f64> = ok.iter().map(|f| f.b).collect();
        let windows = (1..=config.windows())
            .map(|t| {
                let xs: Vec<f64> = outcomes.iter().map(|o| o.deltas[slot][t - 1]).collect();
                let var = scalar::sample_variance(&xs).unwrap_or(0.0);
                WindowSummary {
                    window: t,
                    truth: config.true_learning(t),
                    mean_delta: scalar::mean(&xs).unwrap_or(0.0),
                    var_delta: var,
                    mc_se: (var / xs.len() as f64).sqrt(),
                }
            })
            .collect();
        ApproachSummary {
            approach,
            method: approach.method(),
            mean_a: scalar::mean(&a),
            sd_a: scalar::sample_variance(&a).map(f64::sqrt),
            mean_b: scalar::mean(&b),
            sd_b: scalar::sample_variance(&b).map(f64::sqrt),
            converged: ok.len(),
            non_converged: fits.len() - ok.len(),
            windows,
        }
    };
    Ok(ReplicationSummary {
        config: config.clone(),
        replications: config.replications,
        observational: summarize(0, Approach::Observational),
        experimental: summarize(1, Approach::Experimental),
        records,
    })
}
