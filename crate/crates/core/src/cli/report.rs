//! CSV plot data and plain-text summaries.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::Result;
use crate::montecarlo::{LevelSummary, RunReport, StudyReport};

pub const CSV_HEADER: [&str; 10] = [
    "n_samples",
    "estimator",
    "mean",
    "band_low",
    "band_high",
    "q_low",
    "q_high",
    "true_value",
    "reference_biased_value",
    "poisoned_count",
];

/// One CSV row: the part of a [`LevelSummary`] that is written out.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CsvRow {
    pub n_samples: u64,
    pub estimator: String,
    pub mean: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub q_low: f64,
    pub q_high: f64,
    pub true_value: Option<f64>,
    pub reference_biased_value: Option<f64>,
    pub poisoned_count: u64,
}

impl From<&LevelSummary> for CsvRow {
    fn from(row: &LevelSummary) -> Self {
        Self {
            n_samples: row.n_samples,
            estimator: row.estimator.clone(),
            mean: row.average,
            band_low: row.band_low,
            band_high: row.band_high,
            q_low: row.q_low,
            q_high: row.q_high,
            true_value: row.true_value,
            reference_biased_value: row.reference_biased_value,
            poisoned_count: row.poisoned_count,
        }
    }
}

pub fn csv_rows(report: &StudyReport) -> Vec<CsvRow> {
    report.rows.iter().map(CsvRow::from).collect()
}

/// 17 significant digits, which round-trips every `f64`.
fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn optional(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

pub fn write_csv<W: Write>(report: &StudyReport, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in csv_rows(report) {
        w.write_record([
            row.n_samples.to_string(),
            row.estimator,
            real(row.mean),
            real(row.band_low),
            real(row.band_high),
            real(row.q_low),
            real(row.q_high),
            optional(row.true_value),
            optional(row.reference_biased_value),
            row.poisoned_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(report: &StudyReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(report, std::io::BufWriter::new(file))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn load_csv(path: &Path) -> Result<Vec<CsvRow>> {
    read_csv(std::fs::File::open(path)?)
}

pub fn format_run(report: &RunReport, true_value: Option<f64>) -> String {
    let mut s = String::new();
    let pct = 100.0 * report.confidence_level;
    let _ = writeln!(s, "estimator      {}", report.estimator);
    let _ = writeln!(
        s,
        "samples        {} ({} used)",
        report.n_samples, report.n_effective
    );
    let _ = writeln!(s, "mean           {:.8}", report.mean);
    let _ = writeln!(s, "std error      {:.3e}", report.std_error);
    let _ = writeln!(
        s,
        "{pct:.0}% CI         [{:.8}, {:.8}]",
        report.ci_low, report.ci_high
    );
    if let Some(v) = true_value {
        let _ = writeln!(s, "exact          {v:.8} (error {:+.3e})", report.mean - v);
    }
    if report.poisoned_count > 0 {
        let reasons: Vec<String> = report
            .poison_reasons
            .iter()
            .map(|(r, n)| format!("{r}: {n}"))
            .collect();
        let _ = writeln!(
            s,
            "poisoned       {} ({})",
            report.poisoned_count,
            reasons.join(", ")
        );
    }
    if report.exploding_variance() {
        let _ = writeln!(
            s,
            "warning        variance looks unbounded (largest sample carries {:.1}% of the second moment)",
            100.0 * report.max_share()
        );
    }
    let _ = writeln!(s, "wall time      {:.3?}", report.wall_time);
    s
}

pub fn format_study(report: &StudyReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>10}  {:<20} {:>14} {:>14} {:>14} {:>12} {:>8}",
        "samples", "estimator", "average", "low", "high", "pooled se", "flag"
    );
    for row in &report.rows {
        let flag = if row.exploding_variance() {
            "unstable"
        } else {
            ""
        };
        let _ = writeln!(
            s,
            "{:>10}  {:<20} {:>14.8} {:>14.8} {:>14.8} {:>12.3e} {:>8}",
            row.n_samples,
            row.estimator,
            row.average,
            row.band_low,
            row.band_high,
            row.pooled_std_error,
            flag
        );
    }
    if let Some(row) = report.rows.first() {
        if let Some(v) = row.true_value {
            let _ = writeln!(s, "exact value {v:.8}");
        }
        if let Some(v) = row.reference_biased_value {
            let _ = writeln!(s, "perturbed closed form {v:.8}");
        }
    }
    s
}
