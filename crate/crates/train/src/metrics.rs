//! Run telemetry: one row per logged step, written as CSV and mirrored as
//! JSONL. Resuming truncates both files back to the resume step, so the
//! files of a resumed run end up byte-identical to an uninterrupted one.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::TrainError;

pub const CSV_HEADER: &str = "step,lr,train_loss,train_acc,test_acc,ci95";

/// Test columns are present only on rows written at an evaluation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub ci95: Option<f64>,
}

impl MetricsRow {
    fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.lr,
            self.train_loss,
            self.train_acc,
            opt(self.test_acc),
            opt(self.ci95)
        )
    }
}

pub struct MetricsWriter {
    csv: BufWriter<File>,
    jsonl: BufWriter<File>,
    csv_path: PathBuf,
    last_step: Option<usize>,
}

impl MetricsWriter {
    pub fn csv_path(dir: &Path) -> PathBuf {
        dir.join("metrics.csv")
    }

    pub fn jsonl_path(dir: &Path) -> PathBuf {
        dir.join("metrics.jsonl")
    }

    /// Fresh files holding just the CSV header.
    pub fn create(dir: &Path) -> Result<MetricsWriter, TrainError> {
        let csv_path = Self::csv_path(dir);
        let jsonl_path = Self::jsonl_path(dir);
        std::fs::write(&csv_path, format!("{}\n", CSV_HEADER))
            .map_err(|e| TrainError::io(csv_path.display(), e))?;
        std::fs::write(&jsonl_path, "").map_err(|e| TrainError::io(jsonl_path.display(), e))?;
        Self::open_append(csv_path, jsonl_path, None)
    }

    /// Keeps rows with step <= `resume_step`, drops everything later, and
    /// appends from there. Missing files behave like [`MetricsWriter::create`].
    pub fn resume(dir: &Path, resume_step: usize) -> Result<MetricsWriter, TrainError> {
        let csv_path = Self::csv_path(dir);
        let jsonl_path = Self::jsonl_path(dir);
        if !csv_path.exists() {
            return Self::create(dir);
        }
        let text = std::fs::read_to_string(&csv_path)
            .map_err(|e| TrainError::io(csv_path.display(), e))?;
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(TrainError::config(format!(
                "{} does not start with the metrics header {:?}",
                csv_path.display(),
                CSV_HEADER
            )));
        }
        let mut kept = format!("{}\n", CSV_HEADER);
        let mut last = None;
        for line in lines.filter(|l| !l.is_empty()) {
            let step: usize = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    TrainError::config(format!(
                        "{}: unparseable metrics row {:?}",
                        csv_path.display(),
                        line
                    ))
                })?;
            if step <= resume_step {
                kept.push_str(line);
                kept.push('\n');
                last = Some(step);
            }
        }
        std::fs::write(&csv_path, kept).map_err(|e| TrainError::io(csv_path.display(), e))?;

        let jtext = std::fs::read_to_string(&jsonl_path).unwrap_or_default();
        let mut jkept = String::new();
        for line in jtext.lines().filter(|l| !l.is_empty()) {
            let row: MetricsRow = serde_json::from_str(line).map_err(|e| {
                TrainError::config(format!(
                    "{}: unparseable metrics row: {}",
                    jsonl_path.display(),
                    e
                ))
            })?;
            if row.step <= resume_step {
                jkept.push_str(line);
                jkept.push('\n');
            }
        }
        std::fs::write(&jsonl_path, jkept)
            .map_err(|e| TrainError::io(jsonl_path.display(), e))?;
        Self::open_append(csv_path, jsonl_path, last)
    }

    fn open_append(
        csv_path: PathBuf,
        jsonl_path: PathBuf,
        last_step: Option<usize>,
    ) -> Result<MetricsWriter, TrainError> {
        let csv = OpenOptions::new()
            .append(true)
            .open(&csv_path)
            .map_err(|e| TrainError::io(csv_path.display(), e))?;
        let jsonl = OpenOptions::new()
            .append(true)
            .open(&jsonl_path)
            .map_err(|e| TrainError::io(jsonl_path.display(), e))?;
        Ok(MetricsWriter {
            csv: BufWriter::new(csv),
            jsonl: BufWriter::new(jsonl),
            csv_path,
            last_step,
        })
    }

    /// Writes the row to both files and flushes. Steps must be strictly
    /// increasing across the life of the files.
    pub fn append(&mut self, row: &MetricsRow) -> Result<(), TrainError> {
        if let Some(prev) = self.last_step {
            if row.step <= prev {
                return Err(TrainError::config(format!(
                    "metrics step {} does not advance past {}",
                    row.step, prev
                )));
            }
        }
        let path = self.csv_path.display().to_string();
        let io = |e| TrainError::io(&path, e);
        writeln!(self.csv, "{}", row.csv_line()).map_err(io)?;
        let json = serde_json::to_string(row)
            .map_err(|e| TrainError::config(format!("metrics row serialization: {}", e)))?;
        writeln!(self.jsonl, "{}", json).map_err(io)?;
        self.csv.flush().map_err(io)?;
        self.jsonl.flush().map_err(io)?;
        self.last_step = Some(row.step);
        Ok(())
    }
}
