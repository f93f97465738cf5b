//! Tidy CSV and SVG exports of the report's series tables.

use std::io::{Read, Write};

use anyhow::{Context, Result};
use serde::Deserialize;

use crate::format::{sig, CSV_DIGITS};
use crate::report::{AnalysisReport, SeriesRow};

/// Label of the cumulative treatment-effect series in tidy exports.
pub const EFFECT_SERIES: &str = "tau";

/// One row of a tidy series export.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TidyRow {
    pub series: String,
    pub window: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

/// Float precision of CSV exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// [`CSV_DIGITS`] significant digits.
    #[default]
    Readable,
    /// Shortest representation that parses back to the same `f64`.
    Full,
}

impl Precision {
    fn format(self, v: f64) -> String {
        match self {
            Precision::Readable => sig(v, CSV_DIGITS),
            Precision::Full => format!("{v:?}"),
        }
    }
}

/// Every series table of the report as `(label, rows)`.
pub fn series_tables(report: &AnalysisReport) -> Vec<(&str, &[SeriesRow])> {
    let mut out: Vec<(&str, &[SeriesRow])> = vec![(EFFECT_SERIES, &report.effects)];
    out.extend(report.learning.iter().map(|t| (t.method.name(), t.rows.as_slice())));
    out
}

pub fn write_series_csv<W: Write>(report: &AnalysisReport, precision: Precision, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["series", "window", "estimate", "ci_low", "ci_high", "p_value"])?;
    for (label, rows) in series_tables(report) {
        for r in rows {
            let f = |v: f64| precision.format(v);
            w.write_record([
                label.to_string(),
                r.window.to_string(),
                f(r.estimate),
                f(r.ci_low),
                f(r.ci_high),
                f(r.p_value),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv<R: Read>(source: R) -> Result<Vec<TidyRow>> {
    csv::Reader::from_reader(source)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .context("reading series CSV")
}

/// Minimal line chart of the learning series with dashed interval bounds.
pub fn learning_svg(report: &AnalysisReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 48.0;
    const COLOURS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

    let rows: Vec<&SeriesRow> = report.learning.iter().flat_map(|t| &t.rows).collect();
    let max_window = rows.iter().map(|r| r.window).max().unwrap_or(1).max(2) as f64;
    let (mut lo, mut hi) = rows
        .iter()
        .fold((0.0f64, 0.0f64), |(lo, hi), r| (lo.min(r.ci_low), hi.max(r.ci_high)));
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let x = |w: usize| PAD + (w as f64 - 1.0) / (max_window - 1.0) * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);
    let path = |pts: Vec<(f64, f64)>| {
        pts.iter()
            .enumerate()
            .map(|(i, (px, py))| format!("{}{px:.1},{py:.1}", if i == 0 { "M" } else { " L" }))
            .collect::<String>()
    };

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    svg.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{0:.1}\" x2=\"{1}\" y2=\"{0:.1}\" stroke=\"#999\"/>\n",
        y(0.0),
        W - PAD
    ));
    svg.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"#999\"/>\n",
        H - PAD
    ));
    svg.push_str(&format!(
        "<text x=\"{PAD}\" y=\"{:.1}\" font-size=\"11\">{}</text>\n<text x=\"{}\" y=\"{:.1}\" font-size=\"11\">window {}</text>\n",
        PAD - 8.0,
        sig(hi, 3),
        W - PAD - 60.0,
        H - PAD + 20.0,
        max_window
    ));
    for (i, table) in report.learning.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let line = |f: &dyn Fn(&SeriesRow) -> f64| path(table.rows.iter().map(|r| (x(r.window), y(f(r)))).collect());
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\"/>\n",
            line(&|r| r.estimate)
        ));
        for bound in [line(&|r| r.ci_low), line(&|r| r.ci_high)] {
            svg.push_str(&format!(
                "<path d=\"{bound}\" fill=\"none\" stroke=\"{colour}\" stroke-dasharray=\"4 3\"/>\n"
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{colour}\">{}</text>\n",
            W - PAD - 110.0,
            PAD + 16.0 * i as f64,
            table.method.name()
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
