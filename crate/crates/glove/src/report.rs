//! Report persistence: summary table, event log, and adaptation curves,
//! all written atomically (temp file + rename) and byte-deterministic for
//! identical inputs.

use std::io::Write;
use std::path::Path;

use crate::harness::{Aggregate, HarnessError, RunReport};

/// Write bytes via a temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

pub fn summary_csv(agg: &Aggregate) -> String {
    let mut out = String::from("method,phase,success_rate,mean_score,mean_probes\n");
    for row in &agg.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.method,
            row.phase,
            fmt(row.success_rate),
            fmt(row.mean_score),
            fmt(row.mean_probes)
        ));
    }
    out
}

pub fn curves_csv(agg: &Aggregate) -> String {
    let mut out = String::from("method,episode,success_ma,conflicts,probes,drift\n");
    for p in &agg.curves {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.method,
            p.episode,
            fmt(p.success_ma),
            fmt(p.conflicts),
            fmt(p.probes),
            p.drift
        ));
    }
    out
}

pub fn events_jsonl(reports: &[RunReport]) -> Result<String, HarnessError> {
    let mut out = String::new();
    for report in reports {
        for sr in report.seed_reports() {
            for event in &sr.events {
                out.push_str(
                    &serde_json::to_string(event)
                        .map_err(|e| HarnessError::Aggregate(e.to_string()))?,
                );
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Persist summary.csv, curves.csv, and events.jsonl under `out_dir`.
pub fn write_reports(
    out_dir: &Path,
    reports: &[RunReport],
    agg: &Aggregate,
) -> Result<(), HarnessError> {
    atomic_write(&out_dir.join("summary.csv"), summary_csv(agg).as_bytes())?;
    atomic_write(&out_dir.join("curves.csv"), curves_csv(agg).as_bytes())?;
    atomic_write(&out_dir.join("events.jsonl"), events_jsonl(reports)?.as_bytes())?;
    Ok(())
}
