use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::LearningSeries;
use crate::scalar::Scalar;

/// Functional form fitted to a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveForm {
    /// `A (e^{-Bt} - e^{-B})`: learning relative to window 1, zero at `t = 1`.
    #[default]
    Learning,
    /// `A e^{-Bt}`: the raw per-window effect curve.
    RawEffect,
}

impl CurveForm {
    fn basis<T: Scalar>(self, t: T, b: T) -> T {
        match self {
            CurveForm::Learning => (-b * t).exp() - (-b).exp(),
            CurveForm::RawEffect => (-b * t).exp(),
        }
    }

    fn basis_db<T: Scalar>(self, t: T, b: T) -> T {
        match self {
            CurveForm::Learning => -t * (-b * t).exp() + (-b).exp(),
            CurveForm::RawEffect => -t * (-b * t).exp(),
        }
    }

    /// Model value at `t`.
    pub fn value<T: Scalar>(self, t: T, a: T, b: T) -> T {
        a * self.basis(t, b)
    }

    /// Partial derivatives of the model with respect to `(A, ln B)`.
    pub fn gradient<T: Scalar>(self, t: T, a: T, log_b: T) -> [T; 2] {
        let b = log_b.exp();
        [self.basis(t, b), a * self.basis_db(t, b) * b]
    }

    /// Limit of the model as `t -> infinity`.
    pub fn limit<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            CurveForm::Learning => -a * (-b).exp(),
            CurveForm::RawEffect => T::zero(),
        }
    }
}

/// Damped Gauss-Newton settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions<T> {
    pub form: CurveForm,
    /// Convergence threshold on the gradient infinity-norm of `SSE / 2`.
    pub gradient_tol: T,
    pub max_iterations: usize,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            form: CurveForm::Learning,
            gradient_tol: T::lit(T::GRADIENT_TOL),
            max_iterations: 200,
        }
    }
}

/// Outcome of fitting an exponential curve to a learning series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentialFit<T> {
    pub form: CurveForm,
    /// Amplitude; negative for novelty, positive for primacy under the learning form.
    pub a: T,
    /// Decay rate per window.
    pub b: T,
    /// Bootstrap standard errors, when computed.
    pub se_a: Option<T>,
    pub se_b: Option<T>,
    pub se_delta_infinity: Option<T>,
    pub converged: bool,
    /// The series is identically zero; `b` is unidentified and reported as 0.
    pub no_learning: bool,
    pub iterations: usize,
    pub gradient_norm: T,
    pub residual_sse: T,
    /// Limit of the fitted curve as `t -> infinity`.
    pub delta_infinity: T,
}

// ln B is kept inside this band; leaving it means A and B are not identified.
const LOG_B_MIN: f64 = -12.0;
const LOG_B_MAX: f64 = 7.0;
const GRID_POINTS: usize = 200;
const GRID_MIN_B: f64 = 0.01;
const GRID_MAX_B: f64 = 5.0;

/// Fits the learning form to a learning series (window index as `t`).
pub fn fit_exponential<T: Scalar>(series: &LearningSeries<T>) -> Result<ExponentialFit<T>> {
    fit_exponential_with(series, &FitOptions::default())
}

pub fn fit_exponential_with<T: Scalar>(
    series: &LearningSeries<T>,
    options: &FitOptions<T>,
) -> Result<ExponentialFit<T>> {
    let ts: Vec<T> = series.windows.iter().map(|w| T::from_count(w.window)).collect();
    let ys = series.deltas();
    fit_curve(&ts, &ys, options)
}

/// Least-squares fit of `options.form` to points `(ts, ys)`.
///
/// Non-convergence is reported through `converged = false` with the best
/// parameters found, not as an error.
pub fn fit_curve<T: Scalar>(ts: &[T], ys: &[T], options: &FitOptions<T>) -> Result<ExponentialFit<T>> {
    if ts.len() != ys.len() {
        return Err(Error::InvalidArgument("times and values differ in length".into()));
    }
    if ts.len() < 3 {
        return Err(Error::TooFewWindows {
            needed: 3,
            found: ts.len(),
        });
    }
    if ys.iter().chain(ts).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("series contains non-finite values".into()));
    }
    let form = options.form;
    if ys.iter().all(|&y| y == T::zero()) {
        return Ok(ExponentialFit {
            form,
            a: T::zero(),
            b: T::zero(),
            se_a: None,
            se_b: None,
            se_delta_infinity: None,
            converged: true,
            no_learning: true,
            iterations: 0,
            gradient_norm: T::zero(),
            residual_sse: T::zero(),
            delta_infinity: T::zero(),
        });
    }

    let problem = Problem { ts, ys, form };
    let mut best = match problem.log_ratio_start() {
        Some(start) => problem.levenberg_marquardt(start, options),
        None => problem.levenberg_marquardt(problem.grid_start(), options),
    };
    if !best.converged {
        let retry = problem.levenberg_marquardt(problem.grid_start(), options);
        if retry.converged || retry.sse < best.sse {
            best = retry;
        }
    }
    let b = best.log_b.exp();
    Ok(ExponentialFit {
        form,
        a: best.a,
        b,
        se_a: None,
        se_b: None,
        se_delta_infinity: None,
        converged: best.converged,
        no_learning: false,
        iterations: best.iterations,
        gradient_norm: best.gradient_norm,
        residual_sse: best.sse,
        delta_infinity: form.limit(best.a, b),
    })
}

struct Problem<'a, T> {
    ts: &'a [T],
    ys: &'a [T],
    form: CurveForm,
}

struct Solution<T> {
    a: T,
    log_b: T,
    sse: T,
    gradient_norm: T,
    iterations: usize,
    converged: bool,
}

impl<T: Scalar> Problem<'_, T> {
    fn sse(&self, a: T, log_b: T) -> T {
        let b = log_b.exp();
        self.ts
            .iter()
            .zip(self.ys)
            .map(|(&t, &y)| {
                let r = self.form.value(t, a, b) - y;
                r * r
            })
            .sum()
    }

    /// Normal-equation pieces `J^T J` (symmetric, as `[jaa, jab, jbb]`) and `J^T r`.
    fn normal_equations(&self, a: T, log_b: T) -> ([T; 3], [T; 2]) {
        let b = log_b.exp();
        let mut jtj = [T::zero(); 3];
        let mut jtr = [T::zero(); 2];
        for (&t, &y) in self.ts.iter().zip(self.ys) {
            let r = self.form.value(t, a, b) - y;
            let [ga, gb] = self.form.gradient(t, a, log_b);
            jtj[0] = jtj[0] + ga * ga;
            jtj[1] = jtj[1] + ga * gb;
            jtj[2] = jtj[2] + gb * gb;
            jtr[0] = jtr[0] + ga * r;
            jtr[1] = jtr[1] + gb * r;
        }
        (jtj, jtr)
    }

    /// Least-squares amplitude for a fixed rate.
    fn best_amplitude(&self, b: T) -> Option<T> {
        let (mut gy, mut gg) = (T::zero(), T::zero());
        for (&t, &y) in self.ts.iter().zip(self.ys) {
            let g = self.form.basis(t, b);
            gy = gy + g * y;
            gg = gg + g * g;
        }
        (gg > T::zero()).then(|| gy / gg)
    }

    /// Rate from the median ratio of successive first differences, amplitude
    /// from the point of largest magnitude.
    fn log_ratio_start(&self) -> Option<(T, T)> {
        let diffs: Vec<T> = self.ys.windows(2).map(|w| w[1] - w[0]).collect();
        let mut ratios: Vec<T> = diffs
            .windows(2)
            .filter(|d| d[0] != T::zero())
            .map(|d| d[1] / d[0])
            .filter(|r| *r > T::zero() && *r < T::one())
            .collect();
        if ratios.is_empty() {
            return None;
        }
        ratios.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        let mid = ratios.len() / 2;
        let median = if ratios.len() % 2 == 1 {
            ratios[mid]
        } else {
            (ratios[mid - 1] + ratios[mid]) / T::lit(2.0)
        };
        let b = -median.ln();
        let (t_peak, y_peak) = self
            .ts
            .iter()
            .zip(self.ys)
            .max_by(|x, y| x.1.abs().partial_cmp(&y.1.abs()).expect("finite"))
            .map(|(&t, &y)| (t, y))?;
        let g = self.form.basis(t_peak, b);
        if !(b.is_finite() && g != T::zero()) {
            return None;
        }
        let a = y_peak / g;
        let log_b = b.ln();
        (a.is_finite() && log_b >= T::lit(LOG_B_MIN) && log_b <= T::lit(LOG_B_MAX)).then_some((a, log_b))
    }

    /// Best point of a log-spaced rate grid with closed-form amplitudes.
    fn grid_start(&self) -> (T, T) {
        let (lo, hi) = (GRID_MIN_B.ln(), GRID_MAX_B.ln());
        let mut best: Option<(T, T, T)> = None;
        for i in 0..GRID_POINTS {
            let log_b = T::lit(lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64);
            let Some(a) = self.best_amplitude(log_b.exp()) else {
                continue;
            };
            let sse = self.sse(a, log_b);
            if best.is_none_or(|(_, _, s)| sse < s) {
                best = Some((a, log_b, sse));
            }
        }
        best.map_or((T::zero(), T::lit(GRID_MIN_B.ln())), |(a, log_b, _)| (a, log_b))
    }

    fn levenberg_marquardt(&self, (mut a, mut log_b): (T, T), options: &FitOptions<T>) -> Solution<T> {
        let mut sse = self.sse(a, log_b);
        let mut lambda = T::lit(1e-3);
        let (up, down) = (T::lit(10.0), T::lit(0.1));
        let lambda_max = T::lit(1e16);
        let (lo, hi) = (T::lit(LOG_B_MIN), T::lit(LOG_B_MAX));
        let mut iterations = 0;
        loop {
            let (jtj, jtr) = self.normal_equations(a, log_b);
            let gradient_norm = jtr[0].abs().max(jtr[1].abs());
            if gradient_norm < options.gradient_tol {
                return Solution {
                    a,
                    log_b,
                    sse,
                    gradient_norm,
                    iterations,
                    converged: true,
                };
            }
            if iterations >= options.max_iterations || log_b < lo || log_b > hi {
                return Solution {
                    a,
                    log_b,
                    sse,
                    gradient_norm,
                    iterations,
                    converged: false,
                };
            }
            iterations += 1;
            // Marquardt scaling; the floor keeps the system solvable when a column vanishes.
            let floor = T::epsilon() * (jtj[0] + jtj[2] + T::one());
            let mut accepted = false;
            while lambda <= lambda_max {
                let d0 = jtj[0] + lambda * jtj[0].max(floor);
                let d1 = jtj[2] + lambda * jtj[2].max(floor);
                let det = d0 * d1 - jtj[1] * jtj[1];
                if det > T::zero() && det.is_finite() {
                    let step_a = -(d1 * jtr[0] - jtj[1] * jtr[1]) / det;
                    let step_b = -(d0 * jtr[1] - jtj[1] * jtr[0]) / det;
                    let (na, nb) = (a + step_a, log_b + step_b);
                    let trial = self.sse(na, nb);
                    if trial.is_finite() && trial <= sse {
                        let stalled = na == a && nb == log_b;
                        a = na;
                        log_b = nb;
                        sse = trial;
                        lambda = (lambda * down).max(T::lit(1e-12));
                        accepted = !stalled;
                        break;
                    }
                }
                lambda = lambda * up;
            }
            if !accepted {
                let (_, jtr) = self.normal_equations(a, log_b);
                let gradient_norm = jtr[0].abs().max(jtr[1].abs());
                let converged = gradient_norm < options.gradient_tol;
                return Solution {
                    a,
                    log_b,
                    sse,
                    gradient_norm,
                    iterations,
                    converged,
                };
            }
        }
    }
}
