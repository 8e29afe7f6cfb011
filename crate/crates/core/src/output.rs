//! Files written by runs and sweeps.
//!
//! A run directory holds `summary.json`, `summary.csv`, `cycles.csv`,
//! `tasks.csv`, `diagnostics.txt` and, when tracing, `trace.jsonl`. A sweep
//! directory holds `runs.csv`, `medians.csv` and `failures.csv`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::engine::{write_trace, Audit, CycleMetrics, Metrics, RunResult, Summary};
use crate::error::{Error, Result};
use crate::sweep::SweepReport;

/// Environment variable that overrides the default output directory.
pub const OUT_DIR_ENV: &str = "ROADSENSE_OUT_DIR";

/// The output directory: an explicit choice wins, then the environment,
/// then `fallback`.
pub fn resolve_out_dir(explicit: Option<&Path>, fallback: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(fallback),
    }
}

/// One flat row of `cycles.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRow {
    pub cycle: u32,
    pub events_reported: u32,
    pub concluded: u32,
    pub tasks_created: u32,
    pub tp: u32,
    pub fp: u32,
    pub tn: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
    pub verified: u32,
    pub unresolved: u32,
    pub deadline_hits: u32,
    pub deadline_misses: u32,
    pub drops: u32,
    pub reassigned: u32,
    pub scouts: u32,
    pub allocations: u32,
    pub uncertified: u32,
    pub churn_triggers: u32,
    pub damaged_cells: u32,
    pub damage_detected: u32,
    pub known_damaged: u32,
    pub sigma: f64,
    pub kappa: f64,
    pub rejected_reports: u32,
}

impl From<&CycleMetrics> for CycleRow {
    fn from(c: &CycleMetrics) -> Self {
        CycleRow {
            cycle: c.cycle,
            events_reported: c.events_reported,
            concluded: c.concluded,
            tasks_created: c.tasks_created,
            tp: c.confusion.tp,
            fp: c.confusion.fp,
            tn: c.confusion.tn,
            fn_: c.confusion.fn_,
            verified: c.verified,
            unresolved: c.unresolved,
            deadline_hits: c.deadlines.hits,
            deadline_misses: c.deadlines.misses,
            drops: c.deadlines.drops,
            reassigned: c.reassigned,
            scouts: c.scouts,
            allocations: c.allocations,
            uncertified: c.uncertified,
            churn_triggers: c.churn_triggers,
            damaged_cells: c.damaged_cells,
            damage_detected: c.damage_detected,
            known_damaged: c.known_damaged,
            sigma: c.sigma,
            kappa: c.kappa,
            rejected_reports: c.rejected_reports,
        }
    }
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    summary: &'a Summary,
    metrics: &'a Metrics,
    audit: &'a Audit,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(&path, e))
}

fn finish(mut w: BufWriter<File>, dir: &Path, name: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(dir.join(name), e))
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(dir.join(name), e))
}

/// Serialized `summary.json` text for a run.
pub fn summary_json(result: &RunResult) -> String {
    let doc = SummaryDoc {
        summary: &result.summary,
        metrics: &result.metrics,
        audit: &result.audit,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("summary serializes");
    text.push('\n');
    text
}

/// Write every file of a run into `dir`, creating it if needed.
pub fn write_run(dir: &Path, result: &RunResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = create(dir, "summary.json")?;
    w.write_all(summary_json(result).as_bytes())
        .map_err(|e| Error::io(dir.join("summary.json"), e))?;
    finish(w, dir, "summary.json")?;
    write_csv(dir, "summary.csv", [&result.summary])?;
    write_csv(dir, "cycles.csv", result.cycles.iter().map(CycleRow::from))?;
    write_csv(dir, "tasks.csv", &result.tasks)?;
    let mut w = create(dir, "diagnostics.txt")?;
    for d in &result.diagnostics {
        writeln!(w, "{d}").map_err(|e| Error::io(dir.join("diagnostics.txt"), e))?;
    }
    finish(w, dir, "diagnostics.txt")?;
    if !result.trace.is_empty() {
        let w = create(dir, "trace.jsonl")?;
        write_trace(w, &result.trace)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PointTag<'a> {
    point: &'a str,
}

#[derive(Serialize)]
struct Failure<'a> {
    point: &'a str,
    scheme: &'a str,
    seed: u64,
    error: &'a str,
}

/// Write a sweep's tables into `dir`.
pub fn write_sweep(dir: &Path, report: &SweepReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ok = report.rows.iter().filter_map(|r| {
        r.outcome
            .as_ref()
            .ok()
            .map(|s| (PointTag { point: &r.point }, s))
    });
    write_csv(dir, "runs.csv", ok)?;
    write_csv(dir, "medians.csv", &report.medians)?;
    let failed = report.rows.iter().filter_map(|r| {
        r.outcome.as_ref().err().map(|e| Failure {
            point: &r.point,
            scheme: r.scheme.name(),
            seed: r.seed,
            error: e,
        })
    });
    write_csv(dir, "failures.csv", failed)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_dir_wins() {
        let p = resolve_out_dir(Some(Path::new("/tmp/x")), "out");
        assert_eq!(p, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn cycle_row_flattens_counts() {
        let mut c = CycleMetrics {
            cycle: 3,
            ..Default::default()
        };
        c.confusion.fn_ = 2;
        c.deadlines.drops = 4;
        let row = CycleRow::from(&c);
        assert_eq!((row.cycle, row.fn_, row.drops), (3, 2, 4));
    }
}
