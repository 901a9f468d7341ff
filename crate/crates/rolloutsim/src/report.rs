//! Artifact rendering: CSV tables, the structured run report, the optional
//! event trace, and re-parsing of stored artifacts for the reporting
//! subcommand.
//!
//! Float columns use Rust's shortest round-trip formatting, so identical
//! runs produce byte-identical files.

use crate::metrics::{curriculum_profile, curriculum_ratio, length_skew};
use crate::sim::RunReport;
use crate::workload::LengthModel;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Removes every listed artifact; used to clean up partial outputs when a
/// run fails midway.
pub fn remove_artifacts(paths: &[PathBuf]) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}

/// Summary row re-parsed from stored artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSummary {
    pub bubble_ratio: f64,
    pub throughput: f64,
}

/// Derived statistics included in the structured report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedStats {
    pub curriculum_ratio: f64,
    pub skew_statistic: Option<f64>,
    pub skew_critical: Option<f64>,
    pub staleness_max: u32,
}

pub fn derived_stats(report: &RunReport, model: &LengthModel) -> DerivedStats {
    let profile =
        curriculum_profile(&report.updates.iter().map(|u| (u.group_epoch, u.mean_len)).collect::<Vec<_>>());
    let skew = length_skew(&report.harvested_lengths, model).ok();
    DerivedStats {
        curriculum_ratio: curriculum_ratio(&profile),
        skew_statistic: skew.map(|s| s.statistic),
        skew_critical: skew.map(|s| s.critical_5pct),
        staleness_max: report.updates.iter().map(|u| u.staleness_max).max().unwrap_or(0),
    }
}

/// Writes all artifacts of one run into `dir` and returns the paths
/// created. On any failure the caller removes the returned paths.
pub fn write_run_artifacts(
    dir: &Path,
    report: &RunReport,
    model: &LengthModel,
    trace: bool,
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut created = Vec::new();
    let result = (|| {
        created.push(write_per_update_csv(dir, report)?);
        created.push(write_per_iteration_csv(dir, report)?);
        created.push(write_summary_csv(dir, report)?);
        created.push(write_report_txt(dir, report, model)?);
        if trace {
            created.push(write_events_jsonl(dir, report)?);
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(created),
        Err(e) => {
            remove_artifacts(&created);
            Err(e)
        }
    }
}

fn write_file(path: PathBuf, contents: &str) -> Result<PathBuf, ReportError> {
    fs::write(&path, contents).map_err(io_err(&path))?;
    Ok(path)
}

fn write_per_update_csv(dir: &Path, report: &RunReport) -> Result<PathBuf, ReportError> {
    let mut out = String::from("step,version,mean_len,staleness_p50,staleness_max,objective\n");
    for u in &report.updates {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            u.step, u.version, u.mean_len, u.staleness_p50, u.staleness_max, u.objective
        ));
    }
    write_file(dir.join("per_update.csv"), &out)
}

fn write_per_iteration_csv(dir: &Path, report: &RunReport) -> Result<PathBuf, ReportError> {
    let mut out = String::from("iteration,harvested,scavenged,clock\n");
    for i in &report.iterations {
        out.push_str(&format!("{},{},{},{}\n", i.iteration, i.harvested, i.scavenged, i.clock));
    }
    write_file(dir.join("per_iteration.csv"), &out)
}

fn write_summary_csv(dir: &Path, report: &RunReport) -> Result<PathBuf, ReportError> {
    let out = format!("bubble_ratio,throughput\n{},{}\n", report.bubble_ratio, report.throughput);
    write_file(dir.join("summary.csv"), &out)
}

fn write_report_txt(
    dir: &Path,
    report: &RunReport,
    model: &LengthModel,
) -> Result<PathBuf, ReportError> {
    let stats = derived_stats(report, model);
    let mut out = String::new();
    out.push_str(&format!("mode: {}\n", report.mode.as_str()));
    out.push_str(&format!("bubble_ratio: {}\n", report.bubble_ratio));
    out.push_str(&format!("throughput: {}\n", report.throughput));
    out.push_str(&format!("updates: {}\n", report.updates.len()));
    out.push_str(&format!("iterations: {}\n", report.iterations.len()));
    out.push_str(&format!("final_version: {}\n", report.final_version));
    out.push_str(&format!("groups_loaded: {}\n", report.groups_loaded));
    out.push_str(&format!("tokens_emitted: {}\n", report.tokens.emitted));
    out.push_str(&format!("tokens_harvested: {}\n", report.tokens.harvested));
    out.push_str(&format!("tokens_buffered: {}\n", report.tokens.buffered));
    out.push_str(&format!("tokens_discarded: {}\n", report.tokens.discarded));
    out.push_str(&format!("truncated: {}\n", report.truncated));
    out.push_str(&format!("leftover_ready: {}\n", report.leftover_ready));
    out.push_str(&format!("curriculum_ratio: {}\n", stats.curriculum_ratio));
    out.push_str(&format!("staleness_max: {}\n", stats.staleness_max));
    match (stats.skew_statistic, stats.skew_critical) {
        (Some(s), Some(c)) => {
            out.push_str(&format!("length_skew_statistic: {s}\n"));
            out.push_str(&format!("length_skew_critical_5pct: {c}\n"));
        }
        _ => out.push_str("length_skew_statistic: n/a\n"),
    }
    write_file(dir.join("report.txt"), &out)
}

fn write_events_jsonl(dir: &Path, report: &RunReport) -> Result<PathBuf, ReportError> {
    let path = dir.join("events.jsonl");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = std::io::BufWriter::new(file);
    for event in &report.events {
        let line = serde_json::to_string(event).expect("event serialization is infallible");
        writeln!(w, "{line}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Re-parses a stored summary.csv (round-trip for the report subcommand).
pub fn read_summary_csv(path: &Path) -> Result<StoredSummary, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse = |message: String| ReportError::Parse { path: path.to_path_buf(), message };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse("empty file".to_string()))?;
    if header != "bubble_ratio,throughput" {
        return Err(parse(format!("unexpected header '{header}'")));
    }
    let row = lines.next().ok_or_else(|| parse("missing data row".to_string()))?;
    let mut fields = row.split(',');
    let mut next_f64 = |name: &str| -> Result<f64, ReportError> {
        fields
            .next()
            .ok_or_else(|| ReportError::Parse {
                path: path.to_path_buf(),
                message: format!("missing column {name}"),
            })?
            .parse::<f64>()
            .map_err(|e| ReportError::Parse {
                path: path.to_path_buf(),
                message: format!("column {name}: {e}"),
            })
    };
    Ok(StoredSummary { bubble_ratio: next_f64("bubble_ratio")?, throughput: next_f64("throughput")? })
}

/// Re-parses a stored report.txt into key-value pairs.
pub fn read_report_txt(path: &Path) -> Result<Vec<(String, String)>, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let (k, v) = line.split_once(": ").ok_or_else(|| ReportError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: expected 'key: value'", idx + 1),
        })?;
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Renders an aligned comparison table from (label, summary) rows.
pub fn comparison_table(rows: &[(String, StoredSummary)]) -> String {
    let mut out = String::from(format!(
        "{:<24} {:>14} {:>14}\n",
        "run", "bubble_ratio", "throughput"
    ));
    for (label, s) in rows {
        out.push_str(&format!(
            "{:<24} {:>14.6} {:>14.6}\n",
            label, s.bubble_ratio, s.throughput
        ));
    }
    out
}
