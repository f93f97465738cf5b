//! Unit-by-window panels of metric observations.
//!
//! A panel is built by [`ingest`] (or [`ExperimentPanel::from_observations`]),
//! resolved into windows by [`bucket_windows`], filled in by [`impute`] and
//! aggregated into per-cohort cell statistics by [`cell_means`]. All of these
//! return new panels; a panel is never mutated after construction.

mod ingest;
mod schedule;
mod srm;

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use ingest::{ingest, ingest_with_schema, parse_timestamp, Schema};
pub use schedule::{Arm, CohortSchedule, DesignKind, ScheduleFile};
pub use srm::{srm_check, SrmDiagnostic, SRM_P_THRESHOLD};

/// How missing post-exposure windows are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Imputation {
    /// Missing windows count as a metric value of zero.
    #[default]
    Zero,
    /// Each window only uses the units observed in it.
    ObservedOnly,
}

/// Window indexing of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    /// Windows count from the start of the experiment.
    #[default]
    Calendar,
    /// Windows count from each unit's own first exposure.
    Exposure,
}

/// Time coordinate of a raw observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeKey {
    Window(usize),
    /// Seconds since the Unix epoch.
    Timestamp(i64),
}

/// One raw metric observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub unit_id: String,
    pub cohort: usize,
    pub time: TimeKey,
    pub value: T,
}

/// A unit's windowed values together with its exposure span.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit<T> {
    id: String,
    cohort: usize,
    exposure_start: usize,
    last_window: usize,
    values: BTreeMap<usize, T>,
}

impl<T: Scalar> Unit<T> {
    /// `values` must lie inside `exposure_start..=last_window`.
    pub fn new(
        id: impl Into<String>,
        cohort: usize,
        exposure_start: usize,
        last_window: usize,
        values: BTreeMap<usize, T>,
    ) -> Result<Self> {
        let id = id.into();
        if cohort == 0 || exposure_start == 0 || exposure_start > last_window {
            return Err(Error::InvalidArgument(format!(
                "unit `{id}`: cohort {cohort}, exposure span {exposure_start}..={last_window}"
            )));
        }
        if let Some((&w, _)) = values
            .iter()
            .find(|(&w, v)| w < exposure_start || w > last_window || !v.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "unit `{id}`: window {w} is outside its exposure span or not finite"
            )));
        }
        Ok(Self {
            id,
            cohort,
            exposure_start,
            last_window,
            values,
        })
    }

    /// A unit observed in every window `1..=windows`.
    pub fn dense(id: impl Into<String>, cohort: usize, values: &[T]) -> Result<Self> {
        let map = values.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect();
        Self::new(id, cohort, 1, values.len().max(1), map)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn cohort(&self) -> usize {
        self.cohort
    }

    pub fn exposure_start(&self) -> usize {
        self.exposure_start
    }

    pub fn last_window(&self) -> usize {
        self.last_window
    }

    pub fn value(&self, window: usize) -> Option<T> {
        self.values.get(&window).copied()
    }

    /// Observed (or imputed) values in window order.
    pub fn values(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.values.iter().map(|(&w, &v)| (w, v))
    }

    pub fn n_values(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TimedEvent<T> {
    unit: usize,
    timestamp: i64,
    value: T,
}

/// Unit-by-window panel of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPanel<T> {
    units: Vec<Unit<T>>,
    cohorts: usize,
    windows: usize,
    imputation: Imputation,
    alignment: Alignment,
    // Timestamped rows awaiting `bucket_windows`; non-empty means unbucketed.
    events: Vec<TimedEvent<T>>,
    // Declared exposure instants for timestamped units, indexed like `units`.
    exposure_times: Vec<Option<i64>>,
}

impl<T: Scalar> ExperimentPanel<T> {
    /// Assembles a panel from already-windowed units.
    pub fn from_units(units: Vec<Unit<T>>, imputation: Imputation, alignment: Alignment) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::EmptySource);
        }
        let mut seen = HashMap::with_capacity(units.len());
        for u in &units {
            if let Some(first) = seen.insert(u.id.as_str(), u.cohort) {
                return Err(Error::InconsistentCohort {
                    unit: u.id.clone(),
                    first,
                    second: u.cohort,
                });
            }
        }
        let cohorts = check_contiguous(units.iter().map(|u| u.cohort))?;
        let windows = units.iter().map(|u| u.last_window).max().unwrap_or(0);
        let n = units.len();
        let panel = Self {
            units,
            cohorts,
            windows,
            imputation: Imputation::ObservedOnly,
            alignment,
            events: Vec::new(),
            exposure_times: vec![None; n],
        };
        Ok(impute(&panel, imputation))
    }

    /// Builds a panel from raw observations.
    ///
    /// Window-keyed observations must be unique per (unit, window). Timestamped
    /// observations are kept raw until [`bucket_windows`] sums them per window.
    /// `exposure` optionally overrides a unit's exposure start.
    pub fn from_observations<I>(observations: I, exposure: &HashMap<String, TimeKey>) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, Observation<T>)>,
    {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut cohort_of: Vec<usize> = Vec::new();
        let mut windowed: Vec<BTreeMap<usize, T>> = Vec::new();
        let mut ids: Vec<String> = Vec::new();
        let mut events = Vec::new();
        let mut saw_window = false;
        let mut saw_timestamp = false;

        for (line, obs) in observations {
            if !obs.value.is_finite() {
                return Err(Error::MalformedRow {
                    line,
                    message: "value is not a finite number".into(),
                });
            }
            if obs.cohort == 0 {
                return Err(Error::MalformedRow {
                    line,
                    message: "cohort must be >= 1".into(),
                });
            }
            let slot = match index.get(&obs.unit_id) {
                Some(&i) => {
                    if cohort_of[i] != obs.cohort {
                        return Err(Error::InconsistentCohort {
                            unit: obs.unit_id,
                            first: cohort_of[i],
                            second: obs.cohort,
                        });
                    }
                    i
                }
                None => {
                    let i = ids.len();
                    index.insert(obs.unit_id.clone(), i);
                    ids.push(obs.unit_id.clone());
                    cohort_of.push(obs.cohort);
                    windowed.push(BTreeMap::new());
                    i
                }
            };
            match obs.time {
                TimeKey::Window(0) => {
                    return Err(Error::MalformedRow {
                        line,
                        message: "window must be >= 1".into(),
                    });
                }
                TimeKey::Window(w) => {
                    saw_window = true;
                    if windowed[slot].insert(w, obs.value).is_some() {
                        return Err(Error::DuplicateObservation {
                            line,
                            unit: obs.unit_id,
                            window: w,
                        });
                    }
                }
                TimeKey::Timestamp(ts) => {
                    saw_timestamp = true;
                    events.push(TimedEvent {
                        unit: slot,
                        timestamp: ts,
                        value: obs.value,
                    });
                }
            }
        }
        if ids.is_empty() {
            return Err(Error::EmptySource);
        }
        if saw_window && saw_timestamp {
            return Err(Error::InvalidArgument(
                "input mixes window indices and timestamps".into(),
            ));
        }
        let cohorts = check_contiguous(cohort_of.iter().copied())?;

        let mut exposure_times = vec![None; ids.len()];
        let units = if saw_timestamp {
            for (i, id) in ids.iter().enumerate() {
                match exposure.get(id) {
                    Some(TimeKey::Timestamp(ts)) => exposure_times[i] = Some(*ts),
                    Some(TimeKey::Window(_)) => {
                        return Err(Error::InvalidArgument(format!(
                            "unit `{id}`: exposure override must be a timestamp for timestamped input"
                        )))
                    }
                    None => {}
                }
            }
            // Placeholders until bucketing.
            ids.into_iter()
                .zip(cohort_of)
                .map(|(id, cohort)| Unit {
                    id,
                    cohort,
                    exposure_start: 1,
                    last_window: 1,
                    values: BTreeMap::new(),
                })
                .collect::<Vec<_>>()
        } else {
            let windows = windowed
                .iter()
                .filter_map(|m| m.keys().next_back())
                .copied()
                .max()
                .unwrap_or(1);
            let mut units = Vec::with_capacity(ids.len());
            for ((id, cohort), values) in ids.into_iter().zip(cohort_of).zip(windowed) {
                let first = values.keys().next().copied().unwrap_or(1);
                let start = match exposure.get(&id) {
                    Some(TimeKey::Window(w)) if *w >= 1 && *w <= first => *w,
                    Some(TimeKey::Window(w)) => {
                        return Err(Error::InvalidArgument(format!(
                            "unit `{id}`: declared exposure window {w} is after its first observation ({first})"
                        )))
                    }
                    Some(TimeKey::Timestamp(_)) => {
                        return Err(Error::InvalidArgument(format!(
                            "unit `{id}`: exposure override must be a window for window-indexed input"
                        )))
                    }
                    None => first,
                };
                units.push(Unit {
                    id,
                    cohort,
                    exposure_start: start,
                    last_window: windows,
                    values,
                });
            }
            units
        };
        let windows = if saw_timestamp {
            0
        } else {
            units.iter().map(|u| u.last_window).max().unwrap_or(0)
        };
        Ok(Self {
            units,
            cohorts,
            windows,
            imputation: Imputation::ObservedOnly,
            alignment: Alignment::Calendar,
            events,
            exposure_times,
        })
    }

    pub fn units(&self) -> &[Unit<T>] {
        &self.units
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    /// Number of cohorts `m` (labels `1..=m`).
    pub fn cohorts(&self) -> usize {
        self.cohorts
    }

    /// Number of windows (`k - 1`).
    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn imputation(&self) -> Imputation {
        self.imputation
    }

    pub fn alignment(&self) -> Alignment {
        self.alignment
    }

    pub fn is_bucketed(&self) -> bool {
        self.events.is_empty()
    }

    pub fn has_timestamps(&self) -> bool {
        !self.events.is_empty()
    }

    pub fn units_in_cohort(&self, cohort: usize) -> impl Iterator<Item = &Unit<T>> + '_ {
        self.units.iter().filter(move |u| u.cohort == cohort)
    }

    pub fn cohort_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.cohorts];
        for u in &self.units {
            sizes[u.cohort - 1] += 1;
        }
        sizes
    }

    /// Total number of stored (unit, window) values.
    pub fn n_cells(&self) -> usize {
        self.units.iter().map(|u| u.values.len()).sum()
    }

    pub(crate) fn require_bucketed(&self) -> Result<()> {
        if self.is_bucketed() {
            Ok(())
        } else {
            Err(Error::Unbucketed)
        }
    }

    /// Re-samples units by index, keeping everything else.
    pub fn resampled(&self, indices: &[usize]) -> Self {
        let units: Vec<Unit<T>> = indices.iter().map(|&i| self.units[i].clone()).collect();
        Self {
            exposure_times: vec![None; units.len()],
            units,
            events: Vec::new(),
            ..self.clone_shell()
        }
    }

    fn clone_shell(&self) -> Self {
        Self {
            units: Vec::new(),
            cohorts: self.cohorts,
            windows: self.windows,
            imputation: self.imputation,
            alignment: self.alignment,
            events: Vec::new(),
            exposure_times: Vec::new(),
        }
    }
}

fn check_contiguous(cohorts: impl Iterator<Item = usize>) -> Result<usize> {
    let mut labels: Vec<usize> = cohorts.collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.iter().enumerate().any(|(i, &c)| c != i + 1) {
        return Err(Error::NonContiguousCohorts(labels));
    }
    Ok(labels.len())
}

/// Resolves windows under the requested alignment.
///
/// Timestamped panels need `window_length`; their rows are summed within each
/// (unit, window). Calendar windows start at the first timestamp rounded down
/// to a multiple of the window length; exposure windows start at each unit's
/// first event (or declared exposure time). Window-indexed panels are
/// re-indexed only in exposure mode, shifting each unit so that its exposure
/// start becomes window 1. The panel's imputation policy is re-applied to the
/// result.
pub fn bucket_windows<T: Scalar>(
    panel: &ExperimentPanel<T>,
    mode: Alignment,
    window_length: Option<Duration>,
) -> Result<ExperimentPanel<T>> {
    let bucketed = if panel.has_timestamps() {
        bucket_timestamps(panel, mode, window_length.ok_or(Error::TimestampsRequired)?)?
    } else {
        match (panel.alignment, mode) {
            (Alignment::Calendar, Alignment::Exposure) => realign_to_exposure(panel),
            (a, b) if a == b => panel.clone(),
            _ => {
                return Err(Error::InvalidArgument(
                    "an exposure-aligned panel cannot be converted back to calendar windows".into(),
                ))
            }
        }
    };
    Ok(impute(&bucketed, panel.imputation))
}

fn realign_to_exposure<T: Scalar>(panel: &ExperimentPanel<T>) -> ExperimentPanel<T> {
    let units: Vec<Unit<T>> = panel
        .units
        .iter()
        .map(|u| {
            let shift = u.exposure_start - 1;
            Unit {
                id: u.id.clone(),
                cohort: u.cohort,
                exposure_start: 1,
                last_window: u.last_window - shift,
                values: u.values.iter().map(|(&w, &v)| (w - shift, v)).collect(),
            }
        })
        .collect();
    let windows = units.iter().map(|u| u.last_window).max().unwrap_or(0);
    ExperimentPanel {
        units,
        windows,
        alignment: Alignment::Exposure,
        events: Vec::new(),
        exposure_times: vec![None; panel.units.len()],
        ..panel.clone_shell()
    }
}

fn bucket_timestamps<T: Scalar>(
    panel: &ExperimentPanel<T>,
    mode: Alignment,
    window_length: Duration,
) -> Result<ExperimentPanel<T>> {
    let len = i64::try_from(window_length.as_secs()).unwrap_or(i64::MAX);
    if len == 0 {
        return Err(Error::InvalidArgument(
            "window length must be at least one second".into(),
        ));
    }
    // Calendar windows are aligned to multiples of the window length since the epoch
    // (UTC midnight for daily windows).
    let first = panel
        .events
        .iter()
        .map(|e| e.timestamp)
        .min()
        .ok_or(Error::EmptySource)?;
    let start = first.div_euclid(len) * len;
    let end = panel
        .events
        .iter()
        .map(|e| e.timestamp)
        .max()
        .ok_or(Error::EmptySource)?;

    let mut first_seen = vec![i64::MAX; panel.units.len()];
    for e in &panel.events {
        first_seen[e.unit] = first_seen[e.unit].min(e.timestamp);
    }
    let mut origins = Vec::with_capacity(panel.units.len());
    for (i, u) in panel.units.iter().enumerate() {
        let origin = match panel.exposure_times[i] {
            Some(t) if t > first_seen[i] => {
                return Err(Error::InvalidArgument(format!(
                    "unit `{}`: declared exposure time is after its first observation",
                    u.id
                )))
            }
            Some(t) => t,
            None => first_seen[i],
        };
        origins.push(origin);
    }
    let index = |from: i64, ts: i64| ((ts - from).div_euclid(len) + 1) as usize;

    let mut units: Vec<Unit<T>> = panel
        .units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let (exposure_start, last_window) = match mode {
                Alignment::Calendar => (index(start, origins[i].max(start)), index(start, end)),
                Alignment::Exposure => (1, index(origins[i], end)),
            };
            Unit {
                id: u.id.clone(),
                cohort: u.cohort,
                exposure_start,
                last_window,
                values: BTreeMap::new(),
            }
        })
        .collect();
    for e in &panel.events {
        let w = match mode {
            Alignment::Calendar => index(start, e.timestamp),
            Alignment::Exposure => index(origins[e.unit], e.timestamp),
        };
        *units[e.unit].values.entry(w).or_insert_with(T::zero) += e.value;
    }
    let windows = units.iter().map(|u| u.last_window).max().unwrap_or(0);
    Ok(ExperimentPanel {
        units,
        windows,
        alignment: mode,
        events: Vec::new(),
        exposure_times: vec![None; panel.units.len()],
        ..panel.clone_shell()
    })
}

/// Applies a missing-data policy.
///
/// `Zero` inserts a zero for every (unit, window) inside the unit's exposure
/// span that has no value; windows before exposure are never filled.
/// `ObservedOnly` leaves values untouched and only records the policy.
pub fn impute<T: Scalar>(panel: &ExperimentPanel<T>, policy: Imputation) -> ExperimentPanel<T> {
    let mut out = panel.clone();
    out.imputation = policy;
    if policy == Imputation::Zero && panel.is_bucketed() {
        for u in &mut out.units {
            for w in u.exposure_start..=u.last_window {
                u.values.entry(w).or_insert_with(T::zero);
            }
        }
    }
    out
}

/// Keeps windows `first..=last`, renumbered from 1.
///
/// Units whose exposure span misses the range are dropped; the cohort labels
/// of the remaining units must still be contiguous.
pub fn restrict_windows<T: Scalar>(
    panel: &ExperimentPanel<T>,
    first: usize,
    last: usize,
) -> Result<ExperimentPanel<T>> {
    panel.require_bucketed()?;
    if first == 0 || first > last || last > panel.windows {
        return Err(Error::InvalidArgument(format!(
            "window range {first}..={last} outside 1..={}",
            panel.windows
        )));
    }
    let shift = first - 1;
    let units: Vec<Unit<T>> = panel
        .units
        .iter()
        .filter(|u| u.exposure_start <= last && u.last_window >= first)
        .map(|u| Unit {
            id: u.id.clone(),
            cohort: u.cohort,
            exposure_start: u.exposure_start.max(first) - shift,
            last_window: u.last_window.min(last) - shift,
            values: u.values.range(first..=last).map(|(&w, &v)| (w - shift, v)).collect(),
        })
        .collect();
    if units.is_empty() {
        return Err(Error::EmptySource);
    }
    let cohorts = check_contiguous(units.iter().map(|u| u.cohort))?;
    Ok(ExperimentPanel {
        exposure_times: vec![None; units.len()],
        units,
        cohorts,
        windows: last - shift,
        events: Vec::new(),
        ..panel.clone_shell()
    })
}

/// Summary statistics of one (cohort, window) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell<T> {
    pub cohort: usize,
    pub window: usize,
    pub arm: Arm,
    pub count: usize,
    /// `NaN` when the cell is empty.
    pub mean: T,
    /// Sample variance (`count - 1` denominator); `None` when `count < 2`.
    pub variance: Option<T>,
}

impl<T: Scalar> Cell<T> {
    pub fn is_degenerate(&self) -> bool {
        self.variance.is_none()
    }

    /// Variance of the cell mean, `s^2 / count`.
    pub fn mean_variance(&self) -> Option<T> {
        self.variance.map(|v| v / T::from_count(self.count))
    }
}

/// Arm-labelled cell statistics for every (cohort, window) of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMeans<T> {
    design: DesignKind,
    cohorts: usize,
    windows: usize,
    cells: Vec<Cell<T>>,
}

impl<T: Scalar> CellMeans<T> {
    pub fn design(&self) -> DesignKind {
        self.design
    }

    pub fn cohorts(&self) -> usize {
        self.cohorts
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn cells(&self) -> &[Cell<T>] {
        &self.cells
    }

    /// Cell lookup without any count requirement.
    pub fn cell(&self, cohort: usize, window: usize) -> Option<&Cell<T>> {
        if cohort == 0 || window == 0 || cohort > self.cohorts || window > self.windows {
            return None;
        }
        self.cells.get((cohort - 1) * self.windows + window - 1)
    }

    /// Cell lookup requiring at least `needed` units.
    pub fn require(&self, cohort: usize, window: usize, needed: usize) -> Result<&Cell<T>> {
        let count = self.cell(cohort, window).map_or(0, |c| c.count);
        if count < needed.max(1) {
            return Err(Error::EmptyCell {
                cohort,
                window,
                count,
                needed: needed.max(1),
            });
        }
        Ok(self.cell(cohort, window).expect("checked above"))
    }

    /// Mean of a non-empty cell.
    pub fn mean(&self, cohort: usize, window: usize) -> Result<T> {
        self.require(cohort, window, 1).map(|c| c.mean)
    }
}

/// Aggregates a panel into per-(cohort, window) means, counts and variances.
pub fn cell_means<T: Scalar>(panel: &ExperimentPanel<T>, schedule: &CohortSchedule) -> Result<CellMeans<T>> {
    panel.require_bucketed()?;
    if panel.cohorts() > schedule.cohorts() {
        return Err(Error::ScheduleMismatch(format!(
            "panel has {} cohorts, schedule defines {}",
            panel.cohorts(),
            schedule.cohorts()
        )));
    }
    if panel.windows() > schedule.windows() {
        return Err(Error::ScheduleMismatch(format!(
            "panel spans {} windows, schedule defines {}",
            panel.windows(),
            schedule.windows()
        )));
    }
    Ok(aggregate_cells(panel, schedule, 0..panel.n_units()))
}

/// Cell statistics over the units listed by `members` (indices into
/// `panel.units()`, repeats allowed). Two passes: means, then squared deviations.
pub(crate) fn aggregate_cells<T, I>(panel: &ExperimentPanel<T>, schedule: &CohortSchedule, members: I) -> CellMeans<T>
where
    T: Scalar,
    I: Iterator<Item = usize> + Clone,
{
    let (cohorts, windows) = (schedule.cohorts(), schedule.windows());
    let slot = |cohort: usize, w: usize| (cohort - 1) * windows + w - 1;
    let mut sums = vec![T::zero(); cohorts * windows];
    let mut counts = vec![0usize; cohorts * windows];
    for i in members.clone() {
        let u = &panel.units[i];
        for (w, v) in u.values() {
            let s = slot(u.cohort, w);
            sums[s] = sums[s] + v;
            counts[s] += 1;
        }
    }
    let means: Vec<T> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { T::nan() } else { s / T::from_count(n) })
        .collect();
    let mut squares = vec![T::zero(); cohorts * windows];
    for i in members {
        let u = &panel.units[i];
        for (w, v) in u.values() {
            let s = slot(u.cohort, w);
            let d = v - means[s];
            squares[s] = squares[s] + d * d;
        }
    }
    let cells = (0..cohorts * windows)
        .map(|i| {
            let (cohort, window) = (i / windows + 1, i % windows + 1);
            Cell {
                cohort,
                window,
                arm: schedule.arm(cohort, window).expect("in range"),
                count: counts[i],
                mean: means[i],
                variance: (counts[i] >= 2).then(|| squares[i] / T::from_count(counts[i] - 1)),
            }
        })
        .collect();
    CellMeans {
        design: schedule.design(),
        cohorts,
        windows,
        cells,
    }
}
