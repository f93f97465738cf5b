use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::ExperimentPanel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// p-value below which a sample ratio mismatch is flagged.
pub const SRM_P_THRESHOLD: f64 = 0.001;

/// Chi-square goodness-of-fit of realized cohort sizes against the design ratios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrmDiagnostic {
    pub counts: Vec<usize>,
    pub expected: Vec<f64>,
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub flagged: bool,
}

/// Tests cohort unit counts against `expected_ratios` (one per cohort, summing to 1).
pub fn srm_check<T: Scalar>(panel: &ExperimentPanel<T>, expected_ratios: &[f64]) -> Result<SrmDiagnostic> {
    srm_from_counts(&panel.cohort_sizes(), expected_ratios)
}

pub(crate) fn srm_from_counts(counts: &[usize], expected_ratios: &[f64]) -> Result<SrmDiagnostic> {
    if counts.len() != expected_ratios.len() {
        return Err(Error::InvalidArgument(format!(
            "{} expected ratios for {} cohorts",
            expected_ratios.len(),
            counts.len()
        )));
    }
    if counts.len() < 2 {
        return Err(Error::InvalidArgument("SRM check needs at least two cohorts".into()));
    }
    if expected_ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument("expected ratios must be positive".into()));
    }
    let total_ratio: f64 = expected_ratios.iter().sum();
    if (total_ratio - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "expected ratios sum to {total_ratio}, not 1"
        )));
    }
    let n: usize = counts.iter().sum();
    let expected: Vec<f64> = expected_ratios.iter().map(|r| r * n as f64).collect();
    let statistic: f64 = counts
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum();
    let dof = counts.len() - 1;
    let chi2 = ChiSquared::new(dof as f64).expect("dof >= 1");
    let p_value = chi2.sf(statistic).clamp(0.0, 1.0);
    Ok(SrmDiagnostic {
        counts: counts.to_vec(),
        expected,
        statistic,
        degrees_of_freedom: dof,
        p_value,
        flagged: p_value < SRM_P_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_split_is_clean() {
        let d = srm_from_counts(&[500, 500], &[0.5, 0.5]).unwrap();
        assert_eq!(d.statistic, 0.0);
        assert_eq!(d.p_value, 1.0);
        assert!(!d.flagged);
    }

    #[test]
    fn lopsided_split_is_flagged() {
        let d = srm_from_counts(&[600, 400], &[0.5, 0.5]).unwrap();
        assert!((d.statistic - 40.0).abs() < 1e-12);
        assert!(d.p_value < 1e-9);
        assert!(d.flagged);
    }

    #[test]
    fn small_imbalance_passes() {
        let d = srm_from_counts(&[505, 495], &[0.5, 0.5]).unwrap();
        assert!((d.statistic - 0.1).abs() < 1e-12);
        // P(chi2_1 > 0.1) = 2 * (1 - Phi(sqrt(0.1)))
        assert!((d.p_value - 0.751_829_6).abs() < 1e-6);
        assert!(!d.flagged);
    }

    #[test]
    fn ratio_errors() {
        assert!(srm_from_counts(&[1, 2], &[1.0]).is_err());
        assert!(srm_from_counts(&[1, 2], &[0.6, 0.6]).is_err());
        assert!(srm_from_counts(&[1, 2], &[1.0, 0.0]).is_err());
    }
}
