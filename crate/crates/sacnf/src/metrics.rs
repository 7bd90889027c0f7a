//! `metrics.csv`: one row per finished training episode and per evaluation.
//!
//! Floats are written with 17 significant digits so that every value survives a
//! parse/format cycle bit for bit; missing values are empty fields.

use std::io::{Read, Write};
use std::path::Path;

use sacnf_core::sac::{LogRow, TrainingLog};

use crate::error::Error;

pub const HEADER: [&str; 9] = [
    "env_step",
    "episode",
    "train_return",
    "eval_return_mean",
    "eval_return_std",
    "loss_q",
    "loss_v",
    "loss_pi",
    "policy_entropy_mc",
];

fn float_field(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

fn row_fields(row: &LogRow) -> [String; 9] {
    [
        row.env_step.to_string(),
        row.episode.to_string(),
        float_field(row.train_return),
        float_field(row.eval_return_mean),
        float_field(row.eval_return_std),
        float_field(row.loss_q),
        float_field(row.loss_v),
        float_field(row.loss_pi),
        float_field(row.policy_entropy_mc),
    ]
}

pub fn write_csv<W: Write>(rows: &[LogRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(HEADER)?;
    for row in rows {
        w.write_record(row_fields(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_string(log: &TrainingLog) -> String {
    let mut buf = Vec::new();
    write_csv(&log.rows, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is ASCII")
}

/// Incremental writer: rows are flushed as they arrive so a crashed run keeps
/// its history.
pub struct MetricsWriter {
    inner: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, Error> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        inner.write_record(HEADER).and_then(|_| inner.flush().map_err(Into::into)).map_err(|e| csv_err(path, e))?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, row: &LogRow) -> std::io::Result<()> {
        self.inner.write_record(row_fields(row)).map_err(std::io::Error::other)?;
        self.inner.flush()
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Metrics { path: path.to_path_buf(), reason: e.to_string() }
}

pub fn parse<R: Read>(input: R, path: &Path) -> Result<TrainingLog, Error> {
    let bad = |reason: String| Error::Metrics { path: path.to_path_buf(), reason };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(HEADER) {
        return Err(bad(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let int = |i: usize| -> Result<usize, Error> {
            record[i].parse().map_err(|_| bad(format!("row {}: `{}` is not a count", line + 1, HEADER[i])))
        };
        let float = |i: usize| -> Result<Option<f64>, Error> {
            if record[i].is_empty() {
                return Ok(None);
            }
            record[i].parse().map(Some).map_err(|_| bad(format!("row {}: `{}` is not a number", line + 1, HEADER[i])))
        };
        rows.push(LogRow {
            env_step: int(0)?,
            episode: int(1)?,
            train_return: float(2)?,
            eval_return_mean: float(3)?,
            eval_return_std: float(4)?,
            loss_q: float(5)?,
            loss_v: float(6)?,
            loss_pi: float(7)?,
            policy_entropy_mc: float(8)?,
        });
    }
    Ok(TrainingLog { rows })
}

pub fn read(path: &Path) -> Result<TrainingLog, Error> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse(file, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrainingLog {
        TrainingLog {
            rows: vec![
                LogRow {
                    env_step: 50,
                    episode: 1,
                    train_return: Some(-0.1),
                    loss_q: Some(1.0 / 3.0),
                    loss_v: Some(-2.5e-300),
                    loss_pi: Some(f64::MAX),
                    policy_entropy_mc: Some(5e-324),
                    ..Default::default()
                },
                LogRow {
                    env_step: 100,
                    episode: 2,
                    eval_return_mean: Some(100.5),
                    eval_return_std: Some(0.0),
                    ..Default::default()
                },
            ],
        }
    }

    #[test]
    fn empty_log_is_header_only() {
        assert_eq!(to_string(&TrainingLog::default()), format!("{}\n", HEADER.join(",")));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let text = to_string(&sample());
        let parsed = parse(text.as_bytes(), Path::new("m.csv")).unwrap();
        assert_eq!(parsed, sample());
        assert_eq!(to_string(&parsed), text);
        assert!(text.contains("3.3333333333333331e-1"));
        assert!(text.lines().nth(2).unwrap().starts_with("100,2,,1.0050000000000000e2,0.0000000000000000e0,,"));
    }

    #[test]
    fn incremental_writer_matches_batch_output() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        for row in &sample().rows {
            w.append(row).unwrap();
        }
        drop(w);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), to_string(&sample()));
        assert_eq!(read(&path).unwrap(), sample());
    }

    #[test]
    fn bad_header_and_values_are_rejected() {
        let p = Path::new("m.csv");
        assert!(matches!(parse("a,b\n".as_bytes(), p), Err(Error::Metrics { .. })));
        let text = format!("{}\n1,x,,,,,,,\n", HEADER.join(","));
        assert!(matches!(parse(text.as_bytes(), p), Err(Error::Metrics { .. })));
    }
}
