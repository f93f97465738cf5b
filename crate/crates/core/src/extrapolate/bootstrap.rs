use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::fit::{fit_exponential_with, ExponentialFit, FitOptions};
use crate::error::{Error, Result};
use crate::estimators::{learning_series, LearningMethod};
use crate::panel::{aggregate_cells, CohortSchedule, ExperimentPanel};
use crate::scalar::{self, Scalar};

pub const DEFAULT_BOOTSTRAP_REPLICATES: usize = 200;
const MIN_REPLICATES: usize = 50;
const MAX_DROPPED_FRACTION: f64 = 0.2;

/// Independent random stream for replicate `index` under `seed`.
///
/// Streams depend only on `(seed, index)`, so replicates may run in any order.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions<T> {
    pub replicates: usize,
    pub seed: u64,
    pub fit: FitOptions<T>,
}

impl<T: Scalar> Default for BootstrapOptions<T> {
    fn default() -> Self {
        Self {
            replicates: DEFAULT_BOOTSTRAP_REPLICATES,
            seed: 0,
            fit: FitOptions::default(),
        }
    }
}

/// Standard deviations of refitted parameters across unit-resampled replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSummary<T> {
    pub replicates: usize,
    pub dropped: usize,
    pub se_a: T,
    pub se_b: T,
    pub se_delta_infinity: T,
}

impl<T: Scalar> BootstrapSummary<T> {
    /// Copies the standard errors onto `fit`.
    pub fn apply(&self, fit: &ExponentialFit<T>) -> ExponentialFit<T> {
        ExponentialFit {
            se_a: Some(self.se_a),
            se_b: Some(self.se_b),
            se_delta_infinity: Some(self.se_delta_infinity),
            ..fit.clone()
        }
    }
}

/// Bootstraps the exponential fit by resampling units with replacement within
/// each cohort, recomputing the `method` learning series and refitting.
///
/// Replicates whose estimation fails or whose fit does not converge are
/// dropped; more than 20% dropped is an error.
pub fn bootstrap_fit<T: Scalar>(
    panel: &ExperimentPanel<T>,
    schedule: &CohortSchedule,
    method: LearningMethod,
    options: &BootstrapOptions<T>,
) -> Result<BootstrapSummary<T>> {
    panel.require_bucketed()?;
    if options.replicates < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {}",
            options.replicates
        )));
    }
    let mut by_cohort: Vec<Vec<usize>> = vec![Vec::new(); panel.cohorts()];
    for (i, u) in panel.units().iter().enumerate() {
        by_cohort[u.cohort() - 1].push(i);
    }

    let outcomes: Vec<Option<[T; 3]>> = (0..options.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(options.seed, r);
            let mut members: Vec<usize> = Vec::with_capacity(panel.n_units());
            for cohort in &by_cohort {
                members.extend((0..cohort.len()).map(|_| cohort[rng.random_range(0..cohort.len())]));
            }
            members.sort_unstable();
            let cells = aggregate_cells(panel, schedule, members.iter().copied());
            let series = learning_series(method, &cells).ok()?;
            let fit = fit_exponential_with(&series, &options.fit).ok()?;
            fit.converged.then_some([fit.a, fit.b, fit.delta_infinity])
        })
        .collect();

    let kept: Vec<[T; 3]> = outcomes.into_iter().flatten().collect();
    let dropped = options.replicates - kept.len();
    if dropped as f64 > MAX_DROPPED_FRACTION * options.replicates as f64 || kept.len() < 2 {
        return Err(Error::BootstrapFailures {
            dropped,
            total: options.replicates,
        });
    }
    let sd = |k: usize| {
        let column: Vec<T> = kept.iter().map(|p| p[k]).collect();
        scalar::sample_variance(&column)
            .expect("at least two replicates")
            .sqrt()
    };
    Ok(BootstrapSummary {
        replicates: options.replicates,
        dropped,
        se_a: sd(0),
        se_b: sd(1),
        se_delta_infinity: sd(2),
    })
}
