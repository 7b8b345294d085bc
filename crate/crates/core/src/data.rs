//! Task file formats.
//!
//! CSV: header `x1,...,xn,y`, one observation per row; the task id is the
//! file stem. JSON: `{ "task_id": str, "inputs": [[..]], "outputs": [..] }`.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::transform::{TaskDataset, TransformError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad header: expected `x1,...,xn,y`, found `{0}`")]
    Header(String),
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported task file extension: {0}")]
    Extension(String),
    #[error(transparent)]
    Invalid(#[from] TransformError),
}

/// Reads a `.csv` or `.json` task file.
pub fn read_task(path: &Path) -> Result<TaskDataset, DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io_err)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("task")
                .to_string();
            parse_csv(id, text.as_bytes())
        }
        Some("json") => parse_json(&text),
        other => Err(DataError::Extension(other.unwrap_or("").to_string())),
    }
}

pub fn parse_json(text: &str) -> Result<TaskDataset, DataError> {
    Ok(serde_json::from_str(text)?)
}

pub fn parse_csv(task_id: impl Into<String>, reader: impl Read) -> Result<TaskDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let n = header.len().saturating_sub(1);
    let ok = n >= 1
        && header.get(n) == Some("y")
        && (0..n).all(|j| header.get(j) == Some(format!("x{}", j + 1).as_str()));
    if !ok {
        return Err(DataError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }

    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != n + 1 {
            return Err(DataError::Row {
                line,
                msg: format!("expected {} fields, found {}", n + 1, rec.len()),
            });
        }
        let vals = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| DataError::Row {
                    line,
                    msg: format!("not a number: `{f}`"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        outputs.push(vals[n]);
        inputs.push(vals[..n].to_vec());
    }
    Ok(TaskDataset::new(task_id, inputs, outputs)?)
}

pub fn write_csv(d: &TaskDataset, writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=d.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (x, y) in d.inputs().iter().zip(d.outputs()) {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(y.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_csv() {
        let d = parse_csv("a", "x1,x2,y\n1,2,3\n4.5,5,-6e1\n".as_bytes()).unwrap();
        assert_eq!(d.task_id, "a");
        assert_eq!(d.dim(), 2);
        assert_eq!(d.outputs(), &[3.0, -60.0]);
    }

    #[test]
    fn rejects_bad_header() {
        assert!(matches!(
            parse_csv("a", "feed,y\n1,2\n".as_bytes()),
            Err(DataError::Header(_))
        ));
        assert!(matches!(
            parse_csv("a", "x1,x2\n1,2\n".as_bytes()),
            Err(DataError::Header(_))
        ));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(parse_csv("a", "x1,y\n1,abc\n".as_bytes()).is_err());
        assert!(parse_csv("a", "x1,y\n1,2,3\n".as_bytes()).is_err());
        assert!(parse_csv("a", "x1,y\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip_and_json() {
        let d = TaskDataset::new("t", vec![vec![0.1, 2.0], vec![3.0, 4.25]], vec![7.0, 8.5]).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        assert_eq!(parse_csv("t", buf.as_slice()).unwrap(), d);
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(parse_json(&json).unwrap(), d);
    }

    #[test]
    fn reads_files_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("task_7.csv");
        std::fs::write(&p, "x1,y\n2,5\n4,1\n").unwrap();
        assert_eq!(read_task(&p).unwrap().task_id, "task_7");
        let q = dir.path().join("t.txt");
        std::fs::write(&q, "").unwrap();
        assert!(matches!(read_task(&q), Err(DataError::Extension(_))));
    }
}
