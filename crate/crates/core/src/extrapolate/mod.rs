//! Exponential extrapolation of user-learning and the long-term effect.

mod bootstrap;
mod fit;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::EffectSeries;
use crate::inference::{self, IntervalEstimate};
use crate::scalar::Scalar;

pub use bootstrap::{bootstrap_fit, replicate_rng, BootstrapOptions, BootstrapSummary, DEFAULT_BOOTSTRAP_REPLICATES};
pub use fit::{fit_curve, fit_exponential, fit_exponential_with, CurveForm, ExponentialFit, FitOptions};

/// Observed effect plus the extrapolated limit of user-learning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongTermEstimate<T> {
    /// First-window effect; learning is measured relative to window 1.
    pub observed_effect: T,
    pub learning_limit: T,
    pub long_term_effect: T,
    /// Last cumulative effect of the series plus the learning limit.
    pub long_term_from_final: T,
    /// Interval for `long_term_effect`; the limit's variance is included only
    /// when the fit carries a bootstrap standard error.
    pub interval: IntervalEstimate<T>,
    pub limit_variance_included: bool,
}

/// Combines the first-window effect with the fitted learning limit.
///
/// The two variance components are treated as independent.
pub fn long_term_effect<T: Scalar>(
    effects: &EffectSeries<T>,
    fit: &ExponentialFit<T>,
    level: T,
) -> Result<LongTermEstimate<T>> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    let first = effects
        .windows
        .first()
        .ok_or(Error::TooFewWindows { needed: 1, found: 0 })?;
    let last = effects.windows.last().expect("non-empty");
    let observed_variance = first.interval.as_ref().map_or(T::zero(), |i| i.variance);
    let limit_variance = fit.se_delta_infinity.map(|se| se * se);
    let long_term = first.tau_hat + fit.delta_infinity;
    let interval = inference::gaussian_test(
        long_term,
        observed_variance + limit_variance.unwrap_or_else(T::zero),
        level,
    )?;
    Ok(LongTermEstimate {
        observed_effect: first.tau_hat,
        learning_limit: fit.delta_infinity,
        long_term_effect: long_term,
        long_term_from_final: last.tau_hat + fit.delta_infinity,
        interval,
        limit_variance_included: limit_variance.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{EffectWindow, LearningMethod, LearningSeries};

    fn effects(tau1: f64) -> EffectSeries<f64> {
        EffectSeries {
            windows: vec![EffectWindow {
                window: 1,
                window_diff: tau1,
                tau_hat: tau1,
                interval: Some(inference::gaussian_test(tau1, 0.01, 0.95).unwrap()),
            }],
        }
    }

    #[test]
    fn no_learning_keeps_observed_effect() {
        let fit = fit_exponential(&LearningSeries::from_points(LearningMethod::Did, vec![0.0; 4])).unwrap();
        let lt = long_term_effect(&effects(0.7), &fit, 0.95).unwrap();
        assert_eq!(lt.long_term_effect, 0.7);
        assert!(!lt.limit_variance_included);
    }

    #[test]
    fn novelty_limit_is_subtracted() {
        let deltas = (1..=14)
            .map(|t| CurveForm::Learning.value(t as f64, 1.0, 1.0 / 3.0))
            .collect();
        let mut fit = fit_exponential(&LearningSeries::from_points(LearningMethod::Did, deltas)).unwrap();
        fit.se_delta_infinity = Some(0.1);
        let lt = long_term_effect(&effects(1.0), &fit, 0.95).unwrap();
        assert!((lt.learning_limit + 0.716_531_310_573_789_2).abs() < 1e-6);
        assert!((lt.long_term_effect - 0.283_468_689_426_210_8).abs() < 1e-6);
        assert!((lt.interval.variance - 0.02).abs() < 1e-12);
        assert!(lt.limit_variance_included);
    }

    #[test]
    fn non_converged_fit_rejected() {
        let deltas = (1..=5).map(|t| CurveForm::Learning.value(t as f64, 1.0, 0.5)).collect();
        let mut fit = fit_exponential(&LearningSeries::from_points(LearningMethod::Did, deltas)).unwrap();
        fit.converged = false;
        assert!(matches!(
            long_term_effect(&effects(1.0), &fit, 0.95),
            Err(Error::NotConverged)
        ));
    }
}
