//! Variances, normal-theory intervals and the closed-form power comparison.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{EffectSeries, LearningMethod, LearningSeries, CONTROL, TREATMENT};
use crate::panel::{CellMeans, ExperimentPanel, Unit};
use crate::scalar::{self, Scalar};

/// Default significance level.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Point estimate with its variance, two-sided normal interval and p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalEstimate<T> {
    pub point: T,
    pub variance: T,
    pub std_error: T,
    pub ci_low: T,
    pub ci_high: T,
    pub p_value: T,
    /// Confidence level `1 - alpha`.
    pub level: T,
}

impl<T: Scalar> IntervalEstimate<T> {
    /// Zero lies outside the interval.
    pub fn is_significant(&self) -> bool {
        self.ci_low > T::zero() || self.ci_high < T::zero()
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// `Phi^{-1}(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// Two-sided p-value `2 * (1 - Phi(|z|))`.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * standard_normal().sf(z.abs())).min(1.0)
}

/// Two-sided z interval `point +/- Phi^{-1}(1 - alpha/2) * sqrt(variance)` at
/// confidence `level = 1 - alpha`.
///
/// A zero variance yields a degenerate interval with p-value 1 when the point
/// is zero and 0 otherwise.
pub fn gaussian_test<T: Scalar>(point: T, variance: T, level: T) -> Result<IntervalEstimate<T>> {
    if !(variance >= T::zero()) || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "variance must be finite and non-negative, got {variance}"
        )));
    }
    if !(level > T::zero() && level < T::one()) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let std_error = variance.sqrt();
    let alpha = 1.0 - level.as_f64();
    let half_width = T::lit(normal_quantile(1.0 - alpha / 2.0)) * std_error;
    let p_value = if std_error > T::zero() {
        T::lit(two_sided_p((point / std_error).as_f64()))
    } else if point == T::zero() {
        T::one()
    } else {
        T::zero()
    };
    Ok(IntervalEstimate {
        point,
        variance,
        std_error,
        ci_low: point - half_width,
        ci_high: point + half_width,
        p_value,
        level,
    })
}

/// How a variance was estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceRoute {
    /// From per-unit paired quantities; captures within-unit correlation.
    Paired,
    /// From independent cell-mean variances; conservative under positive correlation.
    Unpaired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimate<T> {
    pub variance: T,
    pub route: VarianceRoute,
}

fn arm_units<T: Scalar>(panel: &ExperimentPanel<T>) -> (Vec<&Unit<T>>, Vec<&Unit<T>>) {
    let treated = panel.units_in_cohort(TREATMENT).collect();
    let control = panel.units_in_cohort(CONTROL).collect();
    (treated, control)
}

fn two_sample_variance<T: Scalar>(treated: &[T], control: &[T]) -> Result<T> {
    match (scalar::sample_variance(treated), scalar::sample_variance(control)) {
        (Some(vt), Some(vc)) => Ok(vt / T::from_count(treated.len()) + vc / T::from_count(control.len())),
        _ => Err(Error::TooFewUnits {
            treatment: treated.len(),
            control: control.len(),
        }),
    }
}

fn mean_variance<T: Scalar>(cells: &CellMeans<T>, cohort: usize, window: usize) -> Result<T> {
    Ok(cells.require(cohort, window, 2)?.mean_variance().expect("count >= 2"))
}

/// Variance of the difference-in-differences estimate at window `t`.
///
/// When every unit of both arms has values in windows 1 and `t`, the variance
/// is `s_T^2/n_T + s_C^2/n_C` of the per-unit differences `y(t) - y(1)`.
/// Otherwise it falls back to the sum of the four cell-mean variances.
pub fn did_variance<T: Scalar>(panel: &ExperimentPanel<T>, t: usize) -> Result<VarianceEstimate<T>> {
    panel.require_bucketed()?;
    if t < 2 || t > panel.windows() {
        return Err(Error::InvalidArgument(format!(
            "window {t} outside 2..={}",
            panel.windows()
        )));
    }
    let (treated, control) = arm_units(panel);
    let diffs =
        |units: &[&Unit<T>]| -> Option<Vec<T>> { units.iter().map(|u| Some(u.value(t)? - u.value(1)?)).collect() };
    if let (Some(dt), Some(dc)) = (diffs(&treated), diffs(&control)) {
        let variance = two_sample_variance(&dt, &dc)?;
        return Ok(VarianceEstimate {
            variance,
            route: VarianceRoute::Paired,
        });
    }
    let column = |units: &[&Unit<T>], w: usize| -> Vec<T> { units.iter().filter_map(|u| u.value(w)).collect() };
    let mut variance = T::zero();
    for w in [1, t] {
        variance = variance + two_sample_variance(&column(&treated, w), &column(&control, w))?;
    }
    Ok(VarianceEstimate {
        variance,
        route: VarianceRoute::Unpaired,
    })
}

/// Variance of the ladder estimate `T_2^t - T_{t+1}^t`: the sum of the two cell-mean variances.
pub fn ladder_variance<T: Scalar>(cells: &CellMeans<T>, t: usize) -> Result<T> {
    Ok(mean_variance(cells, TREATMENT, t)? + mean_variance(cells, t + 1, t)?)
}

/// Variance of the cross-sectional estimate `T_{k-t+1}^{k-1} - T_k^{k-1}`.
pub fn cross_sectional_variance<T: Scalar>(cells: &CellMeans<T>, t: usize) -> Result<T> {
    let (last, k) = (cells.windows(), cells.cohorts());
    Ok(mean_variance(cells, k - t + 1, last)? + mean_variance(cells, k, last)?)
}

/// Variance of the cumulative effect `tau_t`.
///
/// Paired route: every unit of both arms is observed in windows `1..=t`, so
/// `tau_t` is the difference of arm means of per-unit running averages.
/// Unpaired route: per-window two-sample variances combined as independent,
/// `(1/t^2) * sum_j (s_Tj^2/n_Tj + s_Cj^2/n_Cj)`.
pub fn effect_variance<T: Scalar>(panel: &ExperimentPanel<T>, t: usize) -> Result<VarianceEstimate<T>> {
    panel.require_bucketed()?;
    let (treated, control) = arm_units(panel);
    let running = |units: &[&Unit<T>]| -> Option<Vec<T>> {
        units
            .iter()
            .map(|u| {
                let mut s = T::zero();
                for w in 1..=t {
                    s = s + u.value(w)?;
                }
                Some(s / T::from_count(t))
            })
            .collect()
    };
    if let (Some(rt), Some(rc)) = (running(&treated), running(&control)) {
        let variance = two_sample_variance(&rt, &rc)?;
        return Ok(VarianceEstimate {
            variance,
            route: VarianceRoute::Paired,
        });
    }
    let column = |units: &[&Unit<T>], w: usize| -> Vec<T> { units.iter().filter_map(|u| u.value(w)).collect() };
    let mut sum = T::zero();
    for w in 1..=t {
        sum = sum + two_sample_variance(&column(&treated, w), &column(&control, w))?;
    }
    let tt = T::from_count(t);
    Ok(VarianceEstimate {
        variance: sum / (tt * tt),
        route: VarianceRoute::Unpaired,
    })
}

/// Attaches intervals to every window of a treatment-effect series.
///
/// Returns the annotated series and whether any window used the unpaired route.
pub fn annotate_effects<T: Scalar>(
    series: &EffectSeries<T>,
    panel: &ExperimentPanel<T>,
    level: T,
) -> Result<(EffectSeries<T>, bool)> {
    let mut out = series.clone();
    let mut unpaired = false;
    for w in &mut out.windows {
        let v = effect_variance(panel, w.window)?;
        unpaired |= v.route == VarianceRoute::Unpaired;
        w.interval = Some(gaussian_test(w.tau_hat, v.variance, level)?);
    }
    Ok((out, unpaired))
}

/// Attaches intervals to every window of a learning series.
///
/// Window 1 is the fixed zero reference. Returns whether any DID window fell
/// back to the unpaired variance.
pub fn annotate_learning<T: Scalar>(
    series: &LearningSeries<T>,
    panel: &ExperimentPanel<T>,
    cells: &CellMeans<T>,
    level: T,
) -> Result<(LearningSeries<T>, bool)> {
    let mut out = series.clone();
    let mut unpaired = false;
    for w in &mut out.windows {
        let variance = if w.window == 1 {
            T::zero()
        } else {
            match series.method {
                LearningMethod::Did => {
                    let v = did_variance(panel, w.window)?;
                    unpaired |= v.route == VarianceRoute::Unpaired;
                    v.variance
                }
                LearningMethod::Ladder => ladder_variance(cells, w.window)?,
                LearningMethod::CrossSectional => cross_sectional_variance(cells, w.window)?,
            }
        };
        w.interval = Some(gaussian_test(w.delta_hat, variance, level)?);
    }
    Ok((out, unpaired))
}

/// Which approach has the smaller learning-estimate variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerWinner {
    Observational,
    Experimental,
    Tie,
}

/// Closed-form variances of the ladder and DID learning estimates under an
/// equal split of `n` units with per-window variance `sigma_sq` and
/// cross-window correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerComparison<T> {
    pub n: usize,
    pub k: usize,
    pub sigma_sq: T,
    pub rho: T,
    /// `2 k sigma^2 / n`.
    pub var_experimental: T,
    /// `8 (1 - rho) sigma^2 / n`.
    pub var_observational: T,
    /// `1 - k / 4`; the observational approach wins for `rho` above it.
    pub crossover_rho: T,
    pub observational_wins: bool,
    pub winner: PowerWinner,
}

pub fn power_comparison<T: Scalar>(n: usize, k: usize, sigma_sq: T, rho: T) -> Result<PowerComparison<T>> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("k must be at least 3, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!("n ({n}) must be at least k ({k})")));
    }
    if !(sigma_sq > T::zero()) || !sigma_sq.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma^2 must be positive, got {sigma_sq}"
        )));
    }
    if !(rho >= T::zero() && rho < T::one()) {
        return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {rho}")));
    }
    let nn = T::from_count(n);
    let kk = T::from_count(k);
    let var_experimental = T::lit(2.0) * kk * sigma_sq / nn;
    let var_observational = T::lit(8.0) * (T::one() - rho) * sigma_sq / nn;
    let winner = if var_observational < var_experimental {
        PowerWinner::Observational
    } else if var_observational > var_experimental {
        PowerWinner::Experimental
    } else {
        PowerWinner::Tie
    };
    Ok(PowerComparison {
        n,
        k,
        sigma_sq,
        rho,
        var_experimental,
        var_observational,
        crossover_rho: T::one() - kk / T::lit(4.0),
        observational_wins: winner == PowerWinner::Observational,
        winner,
    })
}

/// Pooled within-cohort variance and mean pairwise cross-window correlation,
/// from units observed in every window. Returns `(sigma_sq, rho)`.
pub fn estimate_variance_components<T: Scalar>(panel: &ExperimentPanel<T>) -> Result<(T, T)> {
    panel.require_bucketed()?;
    let windows = panel.windows();
    if windows < 2 {
        return Err(Error::TooFewWindows {
            needed: 2,
            found: windows,
        });
    }
    // Centre each unit's values on its cohort-window mean.
    let mut sums = vec![vec![T::zero(); windows]; panel.cohorts()];
    let mut counts = vec![0usize; panel.cohorts()];
    let complete: Vec<(&Unit<T>, Vec<T>)> = panel
        .units()
        .iter()
        .filter_map(|u| Some((u, (1..=windows).map(|w| u.value(w)).collect::<Option<Vec<T>>>()?)))
        .collect();
    for (u, ys) in &complete {
        counts[u.cohort() - 1] += 1;
        for (s, &y) in sums[u.cohort() - 1].iter_mut().zip(ys) {
            *s = *s + y;
        }
    }
    let n = complete.len();
    if n <= panel.cohorts() {
        return Err(Error::InvalidArgument(
            "too few fully observed units to estimate variance components".into(),
        ));
    }
    let mut cov = vec![vec![T::zero(); windows]; windows];
    for (u, ys) in &complete {
        let c = u.cohort() - 1;
        let centred: Vec<T> = ys
            .iter()
            .zip(&sums[c])
            .map(|(&y, &s)| y - s / T::from_count(counts[c]))
            .collect();
        for i in 0..windows {
            for j in i..windows {
                cov[i][j] = cov[i][j] + centred[i] * centred[j];
            }
        }
    }
    let dof = T::from_count(n - panel.cohorts());
    let var: Vec<T> = (0..windows).map(|i| cov[i][i] / dof).collect();
    let sigma_sq = var.iter().copied().sum::<T>() / T::from_count(windows);
    let mut corr_sum = T::zero();
    let mut pairs = 0;
    for i in 0..windows {
        for j in (i + 1)..windows {
            let denom = (var[i] * var[j]).sqrt();
            if denom > T::zero() {
                corr_sum = corr_sum + cov[i][j] / dof / denom;
                pairs += 1;
            }
        }
    }
    let rho = if pairs == 0 {
        T::zero()
    } else {
        corr_sum / T::from_count(pairs)
    };
    Ok((sigma_sq, rho))
}
