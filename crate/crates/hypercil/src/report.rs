//! Results emission: per-session CSV, summary JSON, sweep CSV. All files
//! are written atomically (temp file + rename) with LF endings and
//! dot-decimal formatting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::protocol::SessionReport;

/// Write bytes to `path` via a temp file in the same directory, then rename
/// over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn opt2(v: Option<f64>) -> String {
    v.map(fmt2).unwrap_or_default()
}

/// Render the per-session CSV: `session,overall_acc,novel_acc,known_acc,
/// unknown_acc`, blanks for undefined cells, 2-decimal rounding.
pub fn sessions_csv(report: &SessionReport) -> String {
    let mut out = String::from("session,overall_acc,novel_acc,known_acc,unknown_acc\n");
    for (i, acc) in report.session_acc.iter().enumerate() {
        let session = i + 1;
        let novel = opt2(report.novel_acc.get(i).copied().flatten());
        let (known, unknown) = if i == 0 {
            (opt2(report.known_acc), opt2(report.unknown_acc))
        } else {
            (String::new(), String::new())
        };
        writeln!(out, "{session},{},{novel},{known},{unknown}", fmt2(*acc)).expect("string write");
    }
    out
}

#[derive(Serialize)]
struct Summary<'a> {
    pd: f64,
    average_acc: f64,
    session_acc: &'a [f64],
    known_acc: Option<f64>,
    unknown_acc: Option<f64>,
    base_close_set_acc: f64,
    novel_acc: &'a [Option<f64>],
    seed: u64,
    config: &'a ExperimentConfig,
}

/// Emit `sessions.csv` and `summary.json` into `out_dir`; returns the two
/// paths. CSV values are rounded to 2 decimals, JSON keeps full precision.
pub fn emit_results(
    report: &SessionReport,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", out_dir.display()))))?;

    let csv_path = out_dir.join("sessions.csv");
    write_atomic(&csv_path, sessions_csv(report).as_bytes())?;

    let summary = Summary {
        pd: report.pd,
        average_acc: report.average_acc,
        session_acc: &report.session_acc,
        known_acc: report.known_acc,
        unknown_acc: report.unknown_acc,
        base_close_set_acc: report.base_close_set_acc,
        novel_acc: &report.novel_acc,
        seed: config.seed,
        config,
    };
    let json_path = out_dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&summary).expect("serializable summary");
    json.push('\n');
    write_atomic(&json_path, json.as_bytes())?;
    Ok((csv_path, json_path))
}

/// One sweep row: the parameter value and the run's headline metrics.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub value: f64,
    pub final_acc: f64,
    pub pd: f64,
    pub average_acc: f64,
}

/// Render the sweep CSV with 2-decimal metric rounding.
pub fn sweep_csv(param: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{param},final_acc,pd,average_acc\n");
    for row in rows {
        writeln!(
            out,
            "{},{},{},{}",
            row.value,
            fmt2(row.final_acc),
            fmt2(row.pd),
            fmt2(row.average_acc)
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_report() -> SessionReport {
        let session_acc = vec![63.55, 62.88, 61.05, 58.13, 55.68, 54.59, 52.93, 50.39, 49.48];
        let pd = session_acc[0] - session_acc[8];
        let average_acc = session_acc.iter().sum::<f64>() / 9.0;
        SessionReport {
            novel_acc: std::iter::once(None)
                .chain(session_acc.iter().skip(1).map(|_| Some(33.3)))
                .collect(),
            known_acc: Some(63.55),
            base_close_set_acc: 65.0,
            unknown_acc: Some(70.25),
            session_acc,
            pd,
            average_acc,
        }
    }

    #[test]
    fn summary_json_carries_headline_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let (_csv, json_path) = emit_results(&table_report(), &cfg, dir.path()).unwrap();
        let text = std::fs::read_to_string(json_path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!((v["pd"].as_f64().unwrap() - 14.07).abs() < 1e-9);
        assert!((v["average_acc"].as_f64().unwrap() - 56.52).abs() < 5e-3);
        assert_eq!(v["config"]["beta"].as_f64().unwrap(), 0.7);
    }

    #[test]
    fn config_echo_reparses_equal() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { beta: 0.3, seed: 77, ..Default::default() };
        let (_csv, json_path) = emit_results(&table_report(), &cfg, dir.path()).unwrap();
        let text = std::fs::read_to_string(json_path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let echoed: ExperimentConfig = serde_json::from_value(v["config"].clone()).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn csv_shape_and_blanks() {
        let csv = sessions_csv(&table_report());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "session,overall_acc,novel_acc,known_acc,unknown_acc");
        assert_eq!(lines.len(), 10);
        // session 1: blank novel, filled known/unknown
        assert_eq!(lines[1], "1,63.55,,63.55,70.25");
        // session 2: novel filled, known/unknown blank
        assert_eq!(lines[2], "2,62.88,33.30,,");
        assert!(csv.ends_with('\n'));
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn single_session_csv_has_one_data_row() {
        let report = SessionReport {
            session_acc: vec![91.0],
            known_acc: None,
            unknown_acc: None,
            base_close_set_acc: 91.0,
            novel_acc: vec![None],
            pd: 0.0,
            average_acc: 91.0,
        };
        let csv = sessions_csv(&report);
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn overwrite_is_atomic_rename() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_atomic(&path, b"one\n").unwrap();
        write_atomic(&path, b"two\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two\n");
        // no temp file left behind
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
