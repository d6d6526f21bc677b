use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LearnError;

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub env_steps: usize,
    /// Mean return of episodes that finished during the iteration (NaN if
    /// none did).
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub orth_loss: f64,
    pub wall_ms: u64,
}

/// One row of `eval.csv`: deterministic (mean-action) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iter: usize,
    pub env_steps: usize,
    pub eval_return: f64,
    pub random_return: f64,
}

/// A CSV file written row by row and flushed after each row.
pub struct CsvLog {
    writer: csv::Writer<File>,
}

impl CsvLog {
    pub fn create(path: &Path) -> Result<Self, LearnError> {
        Ok(Self {
            writer: csv::Writer::from_path(path)?,
        })
    }

    pub fn write<R: Serialize>(&mut self, row: &R) -> Result<(), LearnError> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), LearnError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>, LearnError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
