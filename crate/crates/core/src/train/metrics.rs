use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One CSV row. Columns a run does not produce stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    pub adv_d: Option<f64>,
    pub adv_student: Option<f64>,
    pub data_loss: Option<f64>,
    pub regul: Option<f64>,
    /// Discriminator accuracy on held-out teacher and student features.
    pub d_accuracy: Option<f64>,
    pub train_err: f64,
    pub test_err: Option<f64>,
}

/// Evaluation rows of one run plus its final errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub steps: usize,
    pub final_train_err: f64,
    pub final_test_err: Option<f64>,
}

impl RunMetrics {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record(["step", "lr", "adv_d", "adv_student", "data_loss", "regul", "d_accuracy", "train_err", "test_err"])?;
        }
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Into::into)).collect()
    }

    /// Row logged at exactly `step`.
    pub fn row_at(&self, step: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.step == step)
    }

    pub fn final_d_accuracy(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.d_accuracy)
    }
}

/// Running mean of loss terms between evaluation rows.
#[derive(Debug, Clone, Default)]
pub(crate) struct Window {
    sums: [f64; 4],
    count: usize,
}

impl Window {
    pub fn push(&mut self, values: [f64; 4]) {
        for (s, v) in self.sums.iter_mut().zip(values) {
            *s += v;
        }
        self.count += 1;
    }

    pub fn take(&mut self) -> Option<[f64; 4]> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        let out = self.sums.map(|s| s / n);
        *self = Self::default();
        Some(out)
    }
}
