use std::collections::HashMap;
use std::io::Read;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::{ExperimentPanel, Observation, TimeKey};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Column names of the long-format input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub unit_id: String,
    pub cohort: String,
    pub window: String,
    pub timestamp: String,
    pub value: String,
    /// Optional override of the inferred exposure start (window index or timestamp).
    pub exposure: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            unit_id: "unit_id".into(),
            cohort: "cohort".into(),
            window: "window".into(),
            timestamp: "timestamp".into(),
            value: "value".into(),
            exposure: "exposure_start".into(),
        }
    }
}

/// Reads a CSV stream with the default column names.
pub fn ingest<T: Scalar, R: Read>(source: R) -> Result<ExperimentPanel<T>> {
    ingest_with_schema(source, &Schema::default())
}

/// Reads a long-format CSV stream (one row per unit and window, or per
/// timestamped event) into a panel.
///
/// Exactly one of the window and timestamp columns must be present. A unit's
/// exposure start is its first observed window unless the exposure column
/// provides one.
pub fn ingest_with_schema<T: Scalar, R: Read>(source: R, schema: &Schema) -> Result<ExperimentPanel<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let unit_col = column(&schema.unit_id).ok_or_else(|| Error::MissingColumn(schema.unit_id.clone()))?;
    let cohort_col = column(&schema.cohort).ok_or_else(|| Error::MissingColumn(schema.cohort.clone()))?;
    let value_col = column(&schema.value).ok_or_else(|| Error::MissingColumn(schema.value.clone()))?;
    let exposure_col = column(&schema.exposure);
    let time_col = match (column(&schema.window), column(&schema.timestamp)) {
        (Some(w), None) => TimeColumn::Window(w),
        (None, Some(t)) => TimeColumn::Timestamp(t),
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument(format!(
                "input has both `{}` and `{}` columns; keep one",
                schema.window, schema.timestamp
            )))
        }
        (None, None) => {
            return Err(Error::MissingColumn(format!(
                "{} or {}",
                schema.window, schema.timestamp
            )))
        }
    };

    let mut observations = Vec::new();
    let mut exposure: HashMap<String, TimeKey> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let malformed = |message: String| Error::MalformedRow { line, message };

        let unit_id = field(unit_col);
        if unit_id.is_empty() {
            return Err(malformed("empty unit_id".into()));
        }
        let cohort: usize = field(cohort_col)
            .parse()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| malformed(format!("cohort `{}` is not an integer >= 1", field(cohort_col))))?;
        let raw_value = field(value_col);
        let value = raw_value
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| malformed(format!("value `{raw_value}` is not a finite number")))?;
        let time = match time_col {
            TimeColumn::Window(i) => TimeKey::Window(
                parse_window(field(i))
                    .ok_or_else(|| malformed(format!("window `{}` is not an integer >= 1", field(i))))?,
            ),
            TimeColumn::Timestamp(i) => TimeKey::Timestamp(
                parse_timestamp(field(i))
                    .ok_or_else(|| malformed(format!("timestamp `{}` is not ISO-8601", field(i))))?,
            ),
        };
        if let Some(i) = exposure_col.filter(|&i| !field(i).is_empty()) {
            let declared = match time_col {
                TimeColumn::Window(_) => TimeKey::Window(
                    parse_window(field(i))
                        .ok_or_else(|| malformed(format!("exposure `{}` is not a window index", field(i))))?,
                ),
                TimeColumn::Timestamp(_) => TimeKey::Timestamp(
                    parse_timestamp(field(i))
                        .ok_or_else(|| malformed(format!("exposure `{}` is not ISO-8601", field(i))))?,
                ),
            };
            if let Some(previous) = exposure.insert(unit_id.to_string(), declared) {
                if previous != declared {
                    return Err(malformed(format!("conflicting exposure values for unit `{unit_id}`")));
                }
            }
        }
        observations.push((
            line,
            Observation {
                unit_id: unit_id.to_string(),
                cohort,
                time,
                value: T::lit(value),
            },
        ));
    }
    ExperimentPanel::from_observations(observations, &exposure)
}

#[derive(Clone, Copy)]
enum TimeColumn {
    Window(usize),
    Timestamp(usize),
}

fn parse_window(s: &str) -> Option<usize> {
    s.parse::<usize>().ok().filter(|&w| w >= 1)
}

/// Parses RFC 3339, naive `YYYY-MM-DDTHH:MM:SS` (UTC) or a bare date; returns
/// seconds since the Unix epoch.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}
