use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::runner::{BenchReport, Strategy};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report has no strategies")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    /// Mean best-so-far value per iteration over trials.
    pub mean: Vec<f64>,
    /// Population standard deviation per iteration over trials.
    pub std: Vec<f64>,
    /// Lowest mean best-so-far value over all iterations.
    pub minimal_average_best_y: f64,
    pub successes: usize,
    pub iterations_to_threshold: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub iterations: usize,
    pub trials: usize,
    pub relative_threshold: f64,
    pub strategies: Vec<StrategySummary>,
}

impl Summary {
    pub fn from_report(report: &BenchReport) -> Result<Self, ReportError> {
        if report.strategies.is_empty() {
            return Err(ReportError::Empty);
        }
        let strategies = report
            .strategies
            .iter()
            .map(|&s| {
                let curves: Vec<_> = report.curves_for(s).collect();
                let n = curves.len() as f64;
                let mut mean = Vec::with_capacity(report.iterations);
                let mut std = Vec::with_capacity(report.iterations);
                for k in 0..report.iterations {
                    let m = curves.iter().map(|c| c.best_y[k]).sum::<f64>() / n;
                    let v = curves.iter().map(|c| (c.best_y[k] - m).powi(2)).sum::<f64>() / n;
                    mean.push(m);
                    std.push(v.sqrt());
                }
                StrategySummary {
                    strategy: s,
                    minimal_average_best_y: mean.iter().copied().fold(f64::INFINITY, f64::min),
                    mean,
                    std,
                    successes: report.successes(s),
                    iterations_to_threshold: curves
                        .iter()
                        .map(|c| c.iterations_to_threshold)
                        .collect(),
                }
            })
            .collect();
        Ok(Summary {
            iterations: report.iterations,
            trials: report.trials,
            relative_threshold: report.relative_threshold,
            strategies,
        })
    }
}

/// Long format `strategy,trial,iteration,best_y`; iterations count from 1.
pub fn write_curves_csv(report: &BenchReport, writer: impl Write) -> Result<(), ReportError> {
    if report.strategies.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["strategy", "trial", "iteration", "best_y"])?;
    for c in &report.curves {
        for (k, y) in c.best_y.iter().enumerate() {
            w.write_record([
                c.strategy.name().to_string(),
                c.trial.to_string(),
                (k + 1).to_string(),
                y.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|source| ReportError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

/// Writes `curves.csv` and `summary.json` into `dir`, creating it if needed.
pub fn emit_report(report: &BenchReport, dir: &Path) -> Result<(PathBuf, PathBuf), ReportError> {
    let summary = Summary::from_report(report)?;
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;

    let csv_path = dir.join("curves.csv");
    let mut buf = Vec::new();
    write_curves_csv(report, &mut buf)?;
    std::fs::write(&csv_path, buf).map_err(io(&csv_path))?;

    let json_path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(io(&json_path))?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::super::runner::Curve;
    use super::*;

    fn report() -> BenchReport {
        let curve = |strategy, trial, best_y: Vec<f64>| Curve {
            strategy,
            trial,
            best_y,
            iterations_to_threshold: None,
            outside_box: 0,
        };
        BenchReport {
            strategies: vec![Strategy::Random, Strategy::Ours],
            iterations: 3,
            trials: 2,
            relative_threshold: 0.05,
            optima: Vec::new(),
            curves: vec![
                curve(Strategy::Random, 0, vec![3.0, 2.0, 2.0]),
                curve(Strategy::Random, 1, vec![5.0, 4.0, 1.0]),
                curve(Strategy::Ours, 0, vec![1.0, 1.0, 0.5]),
                curve(Strategy::Ours, 1, vec![0.25, 0.25, 0.25]),
            ],
        }
    }

    #[test]
    fn csv_cardinality() {
        let mut buf = Vec::new();
        write_curves_csv(&report(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 13);
        assert_eq!(lines[0], "strategy,trial,iteration,best_y");
        assert_eq!(lines[1], "random,0,1,3");
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::from_report(&report()).unwrap();
        assert_eq!(s.strategies[0].mean, vec![4.0, 3.0, 1.5]);
        assert_eq!(s.strategies[0].std, vec![1.0, 1.0, 0.5]);
        assert_eq!(s.strategies[0].minimal_average_best_y, 1.5);
        assert_eq!(s.strategies[1].mean[0], 0.625);
    }

    #[test]
    fn empty_report_rejected() {
        let mut r = report();
        r.strategies.clear();
        r.curves.clear();
        assert!(matches!(Summary::from_report(&r), Err(ReportError::Empty)));
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&r, dir.path()).is_err());
    }

    #[test]
    fn unwritable_path() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, "").unwrap();
        assert!(matches!(
            emit_report(&report(), &file.join("sub")),
            Err(ReportError::Io { .. })
        ));
    }
}
