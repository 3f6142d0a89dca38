use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_COLUMNS: [&str; 6] = ["step", "lr", "lambda", "positive_loss", "negative_loss", "combined_loss"];

pub const ESTIMATOR: &str = "per-batch means: positive_loss over positive tokens in the batch, \
negative_loss over forget-set tokens in the batch, combined_loss = positive_loss - lambda * negative_loss";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub lambda: f64,
    pub positive_loss: f64,
    pub negative_loss: f64,
    pub combined_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub total_steps: usize,
    pub updates: usize,
    /// Steps whose batch held no positive or forget-set tokens.
    pub skipped_steps: usize,
    pub positive_tokens: usize,
    pub negative_tokens: usize,
    pub discarded_tokens: usize,
    pub final_combined_loss: Option<f64>,
    pub estimator: String,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<StepRecord>,
    pub summary: TrainSummary,
}

impl TrainReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.lr.to_string(),
                r.lambda.to_string(),
                r.positive_loss.to_string(),
                r.negative_loss.to_string(),
                r.combined_loss.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::format(format!("report flush: {e}")))
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, summary_path: impl AsRef<Path>) -> Result<()> {
        let (csv_path, summary_path) = (csv_path.as_ref(), summary_path.as_ref());
        let file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(file)?;
        let json = serde_json::to_string_pretty(&self.summary)?;
        std::fs::write(summary_path, json).map_err(|e| Error::io(summary_path, e))
    }
}

pub fn read_report_csv<R: std::io::Read>(input: R) -> Result<Vec<StepRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| Error::format(format!("report header: {e}")))?;
    if header.iter().ne(REPORT_COLUMNS) {
        return Err(Error::format(format!("report header {header:?}")));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::format(format!("report row: {e}"))))
        .collect()
}
