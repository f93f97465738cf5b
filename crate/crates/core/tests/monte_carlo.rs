//! Monte-Carlo checks of the estimators against the simulation model.

use std::collections::BTreeMap;

use learnfx::estimators::{did_learning_series, treatment_effect_series};
use learnfx::extrapolate::{bootstrap_fit, fit_exponential, long_term_effect, BootstrapOptions};
use learnfx::inference::{annotate_effects, did_variance, ladder_variance};
use learnfx::panel::{bucket_windows, cell_means, Alignment, DesignKind, ExperimentPanel, Imputation, Unit};
use learnfx::simulate::{generate_experiment, SimulationConfig};
use learnfx::LearningMethod;
use rayon::prelude::*;

fn config(n_units: usize, k: usize, rho: f64, design: DesignKind) -> SimulationConfig {
    SimulationConfig {
        n_units,
        k,
        sigma: 2.0,
        effect_a: 1.0,
        effect_b: 1.0 / 3.0,
        effect_sd: None,
        baseline_intercept: 5.0,
        window_effects: Vec::new(),
        rho,
        design,
        replications: 2,
        seed: 1,
        fit_curves: true,
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[test]
fn did_is_unbiased_for_injected_curve() {
    let cfg = config(400, 8, 0.3, DesignKind::TwoCohort);
    let reps: Vec<Vec<f64>> = (0..400u64)
        .into_par_iter()
        .map(|r| {
            let (panel, schedule) = generate_experiment::<f64>(&cfg, 1000 + r).unwrap();
            did_learning_series(&cell_means(&panel, &schedule).unwrap())
                .unwrap()
                .deltas()
        })
        .collect();
    for t in 2..=cfg.windows() {
        let column: Vec<f64> = reps.iter().map(|d| d[t - 1]).collect();
        let (m, sd) = mean_sd(&column);
        let mc_se = sd / (column.len() as f64).sqrt();
        assert!(
            (m - cfg.true_learning(t)).abs() < 3.0 * mc_se,
            "t={t}: {m} vs {}",
            cfg.true_learning(t)
        );
    }
}

#[test]
fn estimated_variances_track_closed_forms() {
    let (n, k, rho, sigma_sq) = (3000, 6, 0.5, 4.0);
    let mut two = config(n, k, rho, DesignKind::TwoCohort);
    two.effect_sd = Some(0.0);
    let mut ladder = two.clone();
    ladder.design = DesignKind::Ladder;
    let est: Vec<(f64, f64)> = (0..40u64)
        .into_par_iter()
        .map(|r| {
            let (p, _) = generate_experiment::<f64>(&two, r).unwrap();
            let (lp, ls) = generate_experiment::<f64>(&ladder, r).unwrap();
            let did = did_variance(&p, 3).unwrap().variance;
            let lad = ladder_variance(&cell_means(&lp, &ls).unwrap(), 3).unwrap();
            (did, lad)
        })
        .collect();
    let did_mean = est.iter().map(|e| e.0).sum::<f64>() / est.len() as f64;
    let lad_mean = est.iter().map(|e| e.1).sum::<f64>() / est.len() as f64;
    let did_closed = 8.0 * (1.0 - rho) * sigma_sq / n as f64;
    let lad_closed = 2.0 * k as f64 * sigma_sq / n as f64;
    assert!((did_mean / did_closed - 1.0).abs() < 0.05, "{did_mean} vs {did_closed}");
    assert!((lad_mean / lad_closed - 1.0).abs() < 0.05, "{lad_mean} vs {lad_closed}");
}

#[test]
fn bootstrap_standard_error_scales_with_root_n() {
    let scaled: Vec<f64> = [5_000usize, 20_000, 80_000]
        .iter()
        .map(|&n| {
            let cfg = config(n, 15, 0.5, DesignKind::TwoCohort);
            let (panel, schedule) = generate_experiment::<f64>(&cfg, 5).unwrap();
            let options = BootstrapOptions {
                replicates: 200,
                seed: 9,
                ..BootstrapOptions::default()
            };
            let s = bootstrap_fit(&panel, &schedule, LearningMethod::Did, &options).unwrap();
            s.se_a * (n as f64).sqrt()
        })
        .collect();
    let (lo, hi) = scaled
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
    assert!(hi / lo < 1.25, "{scaled:?}");
}

#[test]
fn simulated_cell_variances_match_noise_bookkeeping() {
    let cfg = SimulationConfig {
        rho: 0.0,
        ..config(20_000, 3, 0.0, DesignKind::TwoCohort)
    };
    let (panel, schedule) = generate_experiment::<f64>(&cfg, 3).unwrap();
    let cells = cell_means(&panel, &schedule).unwrap();
    for cell in cells.cells() {
        let v = cell.variance.unwrap();
        let want = if cell.cohort == 2 { 8.0 } else { 4.0 };
        assert!(
            (v / want - 1.0).abs() < 0.05,
            "cohort {} window {}: {v}",
            cell.cohort,
            cell.window
        );
    }
}

#[test]
fn staggered_entry_thins_later_exposure_windows() {
    let windows = 6;
    let units: Vec<Unit<f64>> = (0..60)
        .map(|i| {
            let start = 1 + i % windows;
            let values: BTreeMap<usize, f64> = (start..=windows).map(|w| (w, 1.0)).collect();
            Unit::new(format!("u{i}"), 1 + i % 2, start, windows, values).unwrap()
        })
        .collect();
    let panel = ExperimentPanel::from_units(units, Imputation::ObservedOnly, Alignment::Calendar).unwrap();
    let aligned = bucket_windows(&panel, Alignment::Exposure, None).unwrap();
    let counts: Vec<usize> = (1..=windows)
        .map(|w| aligned.units().iter().filter(|u| u.value(w).is_some()).count())
        .collect();
    assert_eq!(counts, vec![60, 50, 40, 30, 20, 10]);
}

#[test]
fn observed_only_cells_count_available_units() {
    let windows = 4;
    let mut units = Vec::new();
    let mut tally = BTreeMap::new();
    for i in 0..40usize {
        let cohort = 1 + i % 2;
        let values: BTreeMap<usize, f64> = (1..=windows)
            .filter(|w| (i * 7 + w * 3) % 5 != 0)
            .map(|w| (w, (i + w) as f64))
            .collect();
        for &w in values.keys() {
            *tally.entry((cohort, w)).or_insert(0usize) += 1;
        }
        units.push(Unit::new(format!("u{i}"), cohort, 1, windows, values).unwrap());
    }
    let panel = ExperimentPanel::from_units(units, Imputation::ObservedOnly, Alignment::Calendar).unwrap();
    let cells = cell_means(&panel, &learnfx::CohortSchedule::two_cohort(windows).unwrap()).unwrap();
    for cell in cells.cells() {
        assert_eq!(cell.count, tally[&(cell.cohort, cell.window)]);
    }
}

#[test]
fn long_term_effect_of_pure_novelty_is_zero_on_average() {
    // The first-window effect A e^{-B} is exactly offset by the learning limit.
    let cfg = config(20_000, 15, 0.5, DesignKind::TwoCohort);
    let estimates: Vec<f64> = (0..200u64)
        .into_par_iter()
        .filter_map(|r| {
            let (panel, schedule) = generate_experiment::<f64>(&cfg, 500 + r).unwrap();
            let cells = cell_means(&panel, &schedule).unwrap();
            let fit = fit_exponential(&did_learning_series(&cells).unwrap()).unwrap();
            let (effects, _) = annotate_effects(&treatment_effect_series(&cells).unwrap(), &panel, 0.05).unwrap();
            long_term_effect(&effects, &fit, 0.05)
                .ok()
                .map(|lt| lt.long_term_effect)
        })
        .collect();
    assert!(estimates.len() >= 190);
    let (m, sd) = mean_sd(&estimates);
    assert!(
        m.abs() < 3.0 * sd / (estimates.len() as f64).sqrt(),
        "mean {m}, sd {sd}"
    );
}
