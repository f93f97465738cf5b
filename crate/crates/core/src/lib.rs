//! Estimation of user-learning (novelty and primacy effects) in online
//! controlled experiments.
//!
//! The crate ingests unit-by-window metric panels, computes the cumulative
//! treatment effect and several user-learning series (difference-in-differences
//! on a plain two-cohort test, plus the ladder and cross-sectional estimators
//! of a staggered design), attaches normal-theory inference, fits an
//! exponential learning curve to extrapolate the long-term effect, and
//! simulates experiments to compare the approaches.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix it to `f64`.

pub mod error;
pub mod estimators;
pub mod extrapolate;
pub mod inference;
pub mod panel;
pub mod scalar;
pub mod simulate;

pub use error::{Error, Result};
pub use estimators::{
    cross_sectional_learning_series, did_learning_series, ladder_learning_series, learning_series, quick_detect,
    treatment_effect_series, LearningMethod,
};
pub use extrapolate::{bootstrap_fit, fit_exponential, long_term_effect, BootstrapOptions, CurveForm, FitOptions};
pub use inference::{gaussian_test, power_comparison, DEFAULT_ALPHA};
pub use panel::{
    bucket_windows, cell_means, impute, ingest, srm_check, Alignment, Arm, CohortSchedule, DesignKind, Imputation,
};
pub use scalar::Scalar;
pub use simulate::{generate_experiment, run_replications, SimulationConfig};

pub type Panel = panel::ExperimentPanel<f64>;
pub type Panel32 = panel::ExperimentPanel<f32>;
pub type Cells = panel::CellMeans<f64>;
pub type EffectSeries = estimators::EffectSeries<f64>;
pub type LearningSeries = estimators::LearningSeries<f64>;
pub type QuickDetectResult = estimators::QuickDetectResult<f64>;
pub type IntervalEstimate = inference::IntervalEstimate<f64>;
pub type PowerComparison = inference::PowerComparison<f64>;
pub type ExponentialFit = extrapolate::ExponentialFit<f64>;
pub type LongTermEstimate = extrapolate::LongTermEstimate<f64>;
pub type BootstrapSummary = extrapolate::BootstrapSummary<f64>;
