//! Batch experiment runner: single runs over one or more scheduling modes,
//! parameter sweeps with derived per-point seeds, and re-rendering of
//! stored artifacts.
//!
//! Run layout: `<out>/<mode>/{per_update.csv, per_iteration.csv,
//! summary.csv, report.txt[, events.jsonl]}` plus `<out>/comparison.csv`.
//! Sweep layout nests one run per point under `<out>/<axis>=<value>/`.

use crate::config::{sweep_seed, SimConfig, SWEEP_AXES};
use crate::report::{
    comparison_table, derived_stats, remove_artifacts, write_run_artifacts, StoredSummary,
};
use crate::scheduler::Mode;
use crate::sim::{run_simulation, RunReport};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Report(#[from] crate::report::ReportError),
    #[error("{0}")]
    Invalid(String),
}

fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| {
        CliError::Invalid(format!("cannot write {}: {e}", path.display()))
    })
}

fn run_modes(config: &SimConfig, trace: bool) -> Result<Vec<(Mode, RunReport)>, CliError> {
    config
        .modes
        .iter()
        .map(|&mode| Ok((mode, run_simulation(&config.params_for(mode, trace))?)))
        .collect()
}

/// Writes per-mode artifacts plus a cross-mode comparison.csv; removes
/// everything already written if any write fails.
fn write_all(
    out_dir: &Path,
    config: &SimConfig,
    results: &[(Mode, RunReport)],
    trace: bool,
) -> Result<Vec<(String, StoredSummary)>, CliError> {
    let mut created = Vec::new();
    let outcome = (|| {
        let mut rows = Vec::new();
        for (mode, report) in results {
            let dir = out_dir.join(mode.as_str());
            created.extend(write_run_artifacts(&dir, report, &config.model, trace)?);
            rows.push((
                mode.as_str().to_string(),
                StoredSummary { bubble_ratio: report.bubble_ratio, throughput: report.throughput },
            ));
        }
        let mut comp = String::from("mode,bubble_ratio,throughput\n");
        for (label, s) in &rows {
            comp.push_str(&format!("{},{},{}\n", label, s.bubble_ratio, s.throughput));
        }
        let comp_path = out_dir.join("comparison.csv");
        write_text(&comp_path, &comp)?;
        created.push(comp_path);
        Ok(rows)
    })();
    if outcome.is_err() {
        remove_artifacts(&created);
    }
    outcome
}

/// `run` subcommand: execute every configured mode, write artifacts,
/// return the rendered comparison table.
pub fn cmd_run(config_path: &Path, out_dir: &Path, trace: bool) -> Result<String, CliError> {
    let config = SimConfig::from_path(config_path)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Invalid(format!("cannot create {}: {e}", out_dir.display())))?;
    let results = run_modes(&config, trace)?;
    let rows = write_all(out_dir, &config, &results, trace)?;
    Ok(comparison_table(&rows))
}

struct SweepRow {
    value: String,
    mode: &'static str,
    seed: u64,
    bubble_ratio: f64,
    throughput: f64,
    curriculum_ratio: f64,
    skew_statistic: Option<f64>,
    skew_critical: Option<f64>,
    staleness_max: u32,
}

/// `sweep` subcommand: one run per axis value with derived seeds, a nested
/// artifact tree, and a combined CSV keyed by value.
pub fn cmd_sweep(
    config_path: &Path,
    axis: &str,
    values: &[String],
    out_dir: &Path,
    trace: bool,
    threads: usize,
) -> Result<String, CliError> {
    if values.is_empty() {
        return Err(CliError::Invalid("sweep needs at least one value".to_string()));
    }
    if !SWEEP_AXES.contains(&axis) {
        return Err(CliError::Invalid(format!(
            "unknown sweep axis '{axis}'; valid axes: {}",
            SWEEP_AXES.join(", ")
        )));
    }
    let base = SimConfig::from_path(config_path)?;
    let mut points = Vec::with_capacity(values.len());
    for value in values {
        let mut config = base.with_axis(axis, value)?;
        if axis != "seed" {
            config.seed = sweep_seed(base.seed, axis, value);
        }
        points.push((value.clone(), config));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Invalid(format!("cannot create {}: {e}", out_dir.display())))?;

    // Points are isolated single-threaded simulations; execute them in
    // chunks of `threads`, preserving output order.
    let threads = threads.max(1);
    let mut results: Vec<Vec<(Mode, RunReport)>> = Vec::with_capacity(points.len());
    for chunk in points.chunks(threads) {
        let chunk_results = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(_, config)| scope.spawn(move || run_modes(config, trace)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect::<Vec<_>>()
        });
        for r in chunk_results {
            results.push(r?);
        }
    }

    let mut created = Vec::new();
    let mut rows = Vec::new();
    let outcome = (|| {
        for ((value, config), mode_results) in points.iter().zip(&results) {
            let point_dir = out_dir.join(format!("{axis}={value}"));
            for (mode, report) in mode_results {
                let dir = point_dir.join(mode.as_str());
                created.extend(write_run_artifacts(&dir, report, &config.model, trace)?);
                let stats = derived_stats(report, &config.model);
                rows.push(SweepRow {
                    value: value.clone(),
                    mode: mode.as_str(),
                    seed: config.seed,
                    bubble_ratio: report.bubble_ratio,
                    throughput: report.throughput,
                    curriculum_ratio: stats.curriculum_ratio,
                    skew_statistic: stats.skew_statistic,
                    skew_critical: stats.skew_critical,
                    staleness_max: stats.staleness_max,
                });
            }
        }
        let mut combined = String::from(
            "axis,value,mode,seed,bubble_ratio,throughput,curriculum_ratio,\
             skew_statistic,skew_critical,staleness_max\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &rows {
            combined.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                axis,
                r.value,
                r.mode,
                r.seed,
                r.bubble_ratio,
                r.throughput,
                r.curriculum_ratio,
                opt(r.skew_statistic),
                opt(r.skew_critical),
                r.staleness_max
            ));
        }
        let combined_path = out_dir.join("combined.csv");
        write_text(&combined_path, &combined)?;
        created.push(combined_path);
        Ok(())
    })();
    if let Err(e) = outcome {
        remove_artifacts(&created);
        return Err(e);
    }
    let table_rows: Vec<(String, StoredSummary)> = rows
        .iter()
        .map(|r| {
            (
                format!("{}={} {}", axis, r.value, r.mode),
                StoredSummary { bubble_ratio: r.bubble_ratio, throughput: r.throughput },
            )
        })
        .collect();
    Ok(comparison_table(&table_rows))
}

/// `report` subcommand: re-render a comparison table from stored
/// artifacts. Each directory may be a single run (contains summary.csv) or
/// a parent whose immediate subdirectories are runs.
pub fn cmd_report(dirs: &[PathBuf]) -> Result<String, CliError> {
    let mut rows = Vec::new();
    for dir in dirs {
        collect_summaries(dir, &mut rows, 0)?;
    }
    if rows.is_empty() {
        return Err(CliError::Invalid(format!(
            "no summary.csv found under: {}",
            dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(comparison_table(&rows))
}

fn collect_summaries(
    dir: &Path,
    rows: &mut Vec<(String, StoredSummary)>,
    depth: usize,
) -> Result<(), CliError> {
    let summary = dir.join("summary.csv");
    if summary.is_file() {
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| dir.display().to_string());
        rows.push((label, crate::report::read_summary_csv(&summary)?));
        return Ok(());
    }
    if depth >= 2 || !dir.is_dir() {
        return Ok(());
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        collect_summaries(&sub, rows, depth + 1)?;
    }
    Ok(())
}
