use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SampleTuple;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// From a file extension; anything but `.csv` is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub object_name: String,
    pub pose_id: String,
    pub seen: bool,
    pub odsc: f64,
    pub sample_count: usize,
    /// Samples whose Ω held no hand pixel in either mask (scored 1.0).
    pub empty_overlap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub rows: Vec<ReportRow>,
    pub aggregate: f64,
    pub fingerprint: String,
}

impl EvalReport {
    pub(crate) fn from_scores(scored: &[(&SampleTuple, f64, bool)], fingerprint: String) -> Self {
        let mut groups: BTreeMap<(String, String), (bool, f64, usize, usize)> = BTreeMap::new();
        for (s, score, empty) in scored {
            let e = groups
                .entry((s.meta.object_name.clone(), s.meta.pose_id.clone()))
                .or_insert((s.meta.seen, 0.0, 0, 0));
            e.0 &= s.meta.seen;
            e.1 += score;
            e.2 += 1;
            e.3 += *empty as usize;
        }
        let total: f64 = scored.iter().map(|(_, v, _)| v).sum();
        let rows = groups
            .into_iter()
            .map(|((object_name, pose_id), (seen, sum, n, empty))| ReportRow {
                object_name,
                pose_id,
                seen,
                odsc: sum / n as f64,
                sample_count: n,
                empty_overlap: empty,
            })
            .collect();
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            rows,
            aggregate: total / scored.len() as f64,
            fingerprint,
        }
    }

    pub fn sample_count(&self) -> usize {
        self.rows.iter().map(|r| r.sample_count).sum()
    }

    /// Sample-weighted mean per object name, in row order.
    pub fn by_object(&self) -> Vec<(String, bool, f64)> {
        let mut out: Vec<(String, bool, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|o| o.0 == r.object_name) {
                Some(o) => {
                    o.1 &= r.seen;
                    o.2 += r.odsc * r.sample_count as f64;
                    o.3 += r.sample_count;
                }
                None => out.push((r.object_name.clone(), r.seen, r.odsc * r.sample_count as f64, r.sample_count)),
            }
        }
        out.into_iter().map(|(n, s, sum, c)| (n, s, sum / c as f64)).collect()
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// JSON carries the whole report. CSV has one row per report row; the aggregate and
/// fingerprint stay in the JSON form only.
pub fn export_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    match format {
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(report).expect("report serializes");
            std::fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
            for r in &report.rows {
                w.serialize(r).map_err(|e| io_err(path, e))?;
            }
            w.flush().map_err(|e| io_err(path, e))
        }
    }
}

pub fn import_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let found = value.get("schema_version").and_then(|v| v.as_u64());
    if found != Some(REPORT_SCHEMA_VERSION as u64) {
        return Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            expected: REPORT_SCHEMA_VERSION.to_string(),
            found: found.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> EvalReport {
        let row = |o: &str, p: &str, seen, odsc, n| ReportRow {
            object_name: o.into(),
            pose_id: p.into(),
            seen,
            odsc,
            sample_count: n,
            empty_overlap: 0,
        };
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            rows: vec![row("bar", "overhand", true, 0.9, 3), row("bar", "underhand", true, 0.6, 1), row("knob", "twist", false, 0.5, 2)],
            aggregate: (0.9 * 3.0 + 0.6 + 1.0) / 6.0,
            fingerprint: "ab".into(),
        }
    }

    #[test]
    fn json_round_trip_and_csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_report();
        let json = dir.path().join("r.json");
        export_report(&r, &json, ReportFormat::Json).unwrap();
        assert_eq!(import_report(&json).unwrap(), r);
        let csv_path = dir.path().join("r.csv");
        export_report(&r, &csv_path, ReportFormat::from_path(&csv_path)).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), r.rows.len() + 1);
    }

    #[test]
    fn by_object_weights_by_samples() {
        let objs = sample_report().by_object();
        assert_eq!(objs.len(), 2);
        assert!((objs[0].2 - 3.3 / 4.0).abs() < 1e-12);
        assert!(!objs[1].1);
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        std::fs::write(&p, r#"{"schema_version": 7, "rows": [], "aggregate": 1, "fingerprint": ""}"#).unwrap();
        assert!(matches!(import_report(&p), Err(Error::SchemaVersion { .. })));
    }
}
