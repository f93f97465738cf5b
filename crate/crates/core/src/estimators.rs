//! Treatment-effect and user-learning point estimators.
//!
//! Throughout, cohort 1 is the control arm and cohort 2 the treatment arm;
//! ladder cohorts `i >= 3` start treatment at window `i - 1`. Estimators here
//! only produce point values. [`crate::inference`] attaches variances,
//! intervals and p-values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{self, IntervalEstimate};
use crate::panel::{CellMeans, DesignKind, ExperimentPanel, Unit};
use crate::scalar::{self, Scalar};

pub(crate) const CONTROL: usize = 1;
pub(crate) const TREATMENT: usize = 2;

/// Which user-learning estimator produced a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearningMethod {
    /// Within-arm changes since window 1, contrasted across arms.
    Did,
    /// Same-window contrast of the always-treated cohort with the newly switched one.
    Ladder,
    /// Final-window contrast across ladder cohorts of different exposure ages.
    CrossSectional,
}

impl LearningMethod {
    pub fn name(self) -> &'static str {
        match self {
            LearningMethod::Did => "did",
            LearningMethod::Ladder => "ladder",
            LearningMethod::CrossSectional => "cross-sectional",
        }
    }
}

/// One window of the cumulative treatment-effect series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectWindow<T> {
    pub window: usize,
    /// `T^t - C^t`.
    pub window_diff: T,
    /// Running mean of `window_diff` over windows `1..=t`.
    pub tau_hat: T,
    pub interval: Option<IntervalEstimate<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectSeries<T> {
    pub windows: Vec<EffectWindow<T>>,
}

impl<T: Scalar> EffectSeries<T> {
    pub fn tau_hats(&self) -> Vec<T> {
        self.windows.iter().map(|w| w.tau_hat).collect()
    }
}

/// One window of a user-learning series. Window 1 is identically zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningWindow<T> {
    pub window: usize,
    pub delta_hat: T,
    pub interval: Option<IntervalEstimate<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningSeries<T> {
    pub method: LearningMethod,
    pub windows: Vec<LearningWindow<T>>,
}

impl<T: Scalar> LearningSeries<T> {
    /// Builds a series from point values for windows `1..=n`; `deltas[0]` must be zero.
    pub fn from_points(method: LearningMethod, deltas: Vec<T>) -> Self {
        let windows = deltas
            .into_iter()
            .enumerate()
            .map(|(i, delta_hat)| LearningWindow {
                window: i + 1,
                delta_hat,
                interval: None,
            })
            .collect();
        Self { method, windows }
    }

    pub fn deltas(&self) -> Vec<T> {
        self.windows.iter().map(|w| w.delta_hat).collect()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Cumulative treatment effect `tau_t = (1/t) * sum_{j<=t} (T^j - C^j)`.
pub fn treatment_effect_series<T: Scalar>(cells: &CellMeans<T>) -> Result<EffectSeries<T>> {
    let mut sum = T::zero();
    let mut windows = Vec::with_capacity(cells.windows());
    for t in 1..=cells.windows() {
        let diff = cells.mean(TREATMENT, t)? - cells.mean(CONTROL, t)?;
        sum = sum + diff;
        windows.push(EffectWindow {
            window: t,
            window_diff: diff,
            tau_hat: sum / T::from_count(t),
            interval: None,
        });
    }
    Ok(EffectSeries { windows })
}

/// Difference-in-differences learning series `(T^t - T^1) - (C^t - C^1)`.
pub fn did_learning_series<T: Scalar>(cells: &CellMeans<T>) -> Result<LearningSeries<T>> {
    require_windows(cells.windows())?;
    let (t1, c1) = (cells.mean(TREATMENT, 1)?, cells.mean(CONTROL, 1)?);
    let mut deltas = vec![T::zero()];
    for t in 2..=cells.windows() {
        deltas.push((cells.mean(TREATMENT, t)? - t1) - (cells.mean(CONTROL, t)? - c1));
    }
    Ok(LearningSeries::from_points(LearningMethod::Did, deltas))
}

/// Ladder learning series `T_2^t - T_{t+1}^t`.
pub fn ladder_learning_series<T: Scalar>(cells: &CellMeans<T>) -> Result<LearningSeries<T>> {
    require_ladder(cells)?;
    let mut deltas = vec![T::zero()];
    for t in 2..=cells.windows() {
        deltas.push(cells.mean(TREATMENT, t)? - cells.mean(t + 1, t)?);
    }
    Ok(LearningSeries::from_points(LearningMethod::Ladder, deltas))
}

/// Cross-sectional ladder series `T_{k-t+1}^{k-1} - T_k^{k-1}` using only the final window.
pub fn cross_sectional_learning_series<T: Scalar>(cells: &CellMeans<T>) -> Result<LearningSeries<T>> {
    require_ladder(cells)?;
    let last = cells.windows();
    let k = cells.cohorts();
    let newest = cells.mean(k, last)?;
    let mut deltas = vec![T::zero()];
    for t in 2..=last {
        deltas.push(cells.mean(k - t + 1, last)? - newest);
    }
    Ok(LearningSeries::from_points(LearningMethod::CrossSectional, deltas))
}

/// Dispatches to the estimator for `method`.
pub fn learning_series<T: Scalar>(method: LearningMethod, cells: &CellMeans<T>) -> Result<LearningSeries<T>> {
    match method {
        LearningMethod::Did => did_learning_series(cells),
        LearningMethod::Ladder => ladder_learning_series(cells),
        LearningMethod::CrossSectional => cross_sectional_learning_series(cells),
    }
}

fn require_windows(windows: usize) -> Result<()> {
    if windows < 2 {
        return Err(Error::TooFewWindows {
            needed: 2,
            found: windows,
        });
    }
    Ok(())
}

fn require_ladder<T: Scalar>(cells: &CellMeans<T>) -> Result<()> {
    if cells.design() != DesignKind::Ladder {
        return Err(Error::InvalidSchedule("this estimator needs a ladder schedule".into()));
    }
    require_windows(cells.windows())
}

/// Result of the split-half quick detection test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuickDetectResult<T> {
    pub delta2_hat: T,
    pub std_error: T,
    pub p_value: T,
    pub n_units_used: usize,
    pub n_units_excluded: usize,
    pub interval: IntervalEstimate<T>,
}

/// Second-half minus first-half mean over a unit's own exposed windows.
///
/// The first half takes `ceil(m / 2)` of the unit's `m` values. `None` when
/// the unit has fewer than two values.
pub fn half_difference<T: Scalar>(unit: &Unit<T>) -> Option<T> {
    let values: Vec<T> = unit.values().map(|(_, v)| v).collect();
    if values.len() < 2 {
        return None;
    }
    let split = values.len().div_ceil(2);
    Some(scalar::mean(&values[split..])? - scalar::mean(&values[..split])?)
}

/// Quick detection of user-learning on a two-cohort panel.
///
/// Each unit's exposed windows are split into two halves; the estimate is the
/// treatment-minus-control difference in mean half-differences, with a
/// two-sample standard error. Units with a single exposed window are excluded.
pub fn quick_detect<T: Scalar>(panel: &ExperimentPanel<T>, level: T) -> Result<QuickDetectResult<T>> {
    panel.require_bucketed()?;
    if panel.cohorts() != 2 {
        return Err(Error::InvalidArgument(format!(
            "quick detection needs a two-cohort panel, found {} cohorts",
            panel.cohorts()
        )));
    }
    let mut treated = Vec::new();
    let mut control = Vec::new();
    let mut excluded = 0;
    for unit in panel.units() {
        match half_difference(unit) {
            Some(h) if unit.cohort() == TREATMENT => treated.push(h),
            Some(h) => control.push(h),
            None => excluded += 1,
        }
    }
    if treated.is_empty() && control.is_empty() {
        return Err(Error::NoQualifyingUnits);
    }
    let variance = match (scalar::sample_variance(&treated), scalar::sample_variance(&control)) {
        (Some(vt), Some(vc)) => vt / T::from_count(treated.len()) + vc / T::from_count(control.len()),
        _ => {
            return Err(Error::TooFewUnits {
                treatment: treated.len(),
                control: control.len(),
            })
        }
    };
    let point = scalar::mean(&treated).expect("non-empty") - scalar::mean(&control).expect("non-empty");
    let interval = inference::gaussian_test(point, variance, level)?;
    Ok(QuickDetectResult {
        delta2_hat: point,
        std_error: interval.std_error,
        p_value: interval.p_value,
        n_units_used: treated.len() + control.len(),
        n_units_excluded: excluded,
        interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{cell_means, Alignment, CohortSchedule, Imputation};

    fn two_cohort(treat: &[f64], ctrl: &[f64]) -> CellMeans<f64> {
        let units = vec![Unit::dense("c", 1, ctrl).unwrap(), Unit::dense("t", 2, treat).unwrap()];
        let panel = ExperimentPanel::from_units(units, Imputation::Zero, Alignment::Calendar).unwrap();
        cell_means(&panel, &CohortSchedule::two_cohort(treat.len()).unwrap()).unwrap()
    }

    #[test]
    fn identical_arms_have_no_effect() {
        let cells = two_cohort(&[1.0, 4.0, 2.0], &[1.0, 4.0, 2.0]);
        assert!(treatment_effect_series(&cells)
            .unwrap()
            .tau_hats()
            .iter()
            .all(|&t| t == 0.0));
        assert!(did_learning_series(&cells).unwrap().deltas().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn running_mean_of_window_diffs() {
        let cells = two_cohort(&[2.0, 4.0, 6.0], &[0.0, 0.0, 0.0]);
        assert_eq!(treatment_effect_series(&cells).unwrap().tau_hats(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn did_by_hand() {
        assert_eq!(
            did_learning_series(&two_cohort(&[5.0, 7.0], &[3.0, 5.0]))
                .unwrap()
                .deltas(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            did_learning_series(&two_cohort(&[5.0, 6.0], &[3.0, 5.0]))
                .unwrap()
                .deltas(),
            vec![0.0, -1.0]
        );
        assert!(matches!(
            did_learning_series(&two_cohort(&[5.0], &[3.0])),
            Err(Error::TooFewWindows { needed: 2, found: 1 })
        ));
    }

    fn ladder_cells(k: usize, value: impl Fn(usize, usize) -> f64) -> CellMeans<f64> {
        let units = (1..=k)
            .map(|c| {
                let values: Vec<f64> = (1..k).map(|w| value(c, w)).collect();
                Unit::dense(format!("u{c}"), c, &values).unwrap()
            })
            .collect();
        let panel = ExperimentPanel::from_units(units, Imputation::Zero, Alignment::Calendar).unwrap();
        cell_means(&panel, &CohortSchedule::ladder(k).unwrap()).unwrap()
    }

    #[test]
    fn ladder_by_hand() {
        let cells = ladder_cells(3, |c, w| match (c, w) {
            (2, 2) => 4.0,
            (3, 2) => 3.2,
            _ => 0.0,
        });
        let d = ladder_learning_series(&cells).unwrap().deltas();
        assert!((d[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cross_sectional_indices() {
        // Encode (cohort, window) in the value so the contrasts are identifiable.
        let cells = ladder_cells(4, |c, w| (10 * c + w) as f64);
        let d = cross_sectional_learning_series(&cells).unwrap().deltas();
        assert_eq!(d, vec![0.0, 33.0 - 43.0, 23.0 - 43.0]);
    }

    #[test]
    fn ladder_estimators_reject_two_cohort_schedule() {
        let cells = two_cohort(&[1.0, 2.0], &[1.0, 2.0]);
        assert!(matches!(ladder_learning_series(&cells), Err(Error::InvalidSchedule(_))));
        assert!(matches!(
            cross_sectional_learning_series(&cells),
            Err(Error::InvalidSchedule(_))
        ));
    }

    #[test]
    fn quick_detect_by_hand() {
        let units = vec![
            Unit::dense("t1", 2, &[4.0, 2.0]).unwrap(),
            Unit::dense("t2", 2, &[4.0, 2.0]).unwrap(),
            Unit::dense("c1", 1, &[3.0, 3.0]).unwrap(),
            Unit::dense("c2", 1, &[3.0, 3.0]).unwrap(),
            Unit::dense("single", 1, &[9.0]).unwrap(),
        ];
        let mut units = units;
        // Exposed only in the last window of two.
        units.push(Unit::new("late", 2, 2, 2, [(2, 1.0)].into_iter().collect()).unwrap());
        let panel = ExperimentPanel::from_units(units, Imputation::ObservedOnly, Alignment::Calendar).unwrap();
        let r = quick_detect(&panel, 0.95).unwrap();
        assert_eq!(r.delta2_hat, -2.0);
        assert_eq!(r.n_units_used, 4);
        assert_eq!(r.n_units_excluded, 2);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn half_split_gives_first_half_the_extra_window() {
        let u = Unit::dense("u", 1, &[1.0, 2.0, 4.0]).unwrap();
        // first half {1, 2}, second half {4}
        assert_eq!(half_difference(&u), Some(2.5));
    }

    #[test]
    fn quick_detect_without_units() {
        let units = vec![
            Unit::dense("a", 1, &[1.0]).unwrap(),
            Unit::dense("b", 2, &[1.0]).unwrap(),
        ];
        let panel = ExperimentPanel::from_units(units, Imputation::Zero, Alignment::Calendar).unwrap();
        assert!(matches!(quick_detect(&panel, 0.95), Err(Error::NoQualifyingUnits)));
    }
}
