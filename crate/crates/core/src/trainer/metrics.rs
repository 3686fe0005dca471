//! Append-only CSV logs for training and evaluation metrics.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// One training iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub env_steps_total: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub wallclock_s: f64,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 9] = [
        "iteration",
        "env_steps_total",
        "mean_return",
        "success_rate",
        "policy_loss",
        "value_loss",
        "entropy",
        "approx_kl",
        "wallclock_s",
    ];
}

/// One round of dedicated evaluation episodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub mean_length: f64,
}

impl EvalRow {
    pub const HEADER: [&'static str; 5] = ["iteration", "episodes", "mean_return", "success_rate", "mean_length"];
}

/// CSV writer that appends to an existing file and writes the header only
/// when the file starts empty. Each row is flushed immediately.
pub struct CsvLog {
    inner: csv::Writer<File>,
}

impl CsvLog {
    pub fn open(path: &Path, header: &[&str]) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let empty = file.metadata()?.len() == 0;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if empty {
            inner.write_record(header).map_err(io::Error::other)?;
            inner.flush()?;
        }
        Ok(Self { inner })
    }

    pub fn append<T: Serialize>(&mut self, row: &T) -> io::Result<()> {
        self.inner.serialize(row).map_err(io::Error::other)?;
        self.inner.flush()
    }
}

/// Reads rows strictly: the header must match, every row needs exactly
/// the header's column count and parseable cells.
pub fn read_csv<T: DeserializeOwned>(path: &Path, header: &[&str]) -> io::Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(io::Error::other)?;
    let found: Vec<String> = reader
        .headers()
        .map_err(io::Error::other)?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected header {found:?}"),
        ));
    }
    reader.deserialize().map(|r| r.map_err(io::Error::other)).collect()
}

/// Writes the training header and rows to any writer.
pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> io::Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(MetricsRow::HEADER).map_err(io::Error::other)?;
    for r in rows {
        out.serialize(r).map_err(io::Error::other)?;
    }
    out.flush()
}

/// Counts data lines in a CSV file (excluding the header).
pub fn count_rows(path: &Path) -> io::Result<usize> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader.lines().count().saturating_sub(1))
}
