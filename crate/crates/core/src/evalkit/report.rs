use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{distinct_n, exact_match_of, greedy_responses, perplexity};
use crate::data::Corpus;
use crate::engine::Scalar;
use crate::error::{Error, Result};
use crate::model::Parameters;
use crate::scoring::PartitionMetrics;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    /// `None` when no generation is long enough.
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clean_heldout_perplexity: f64,
    pub noisy_heldout_perplexity: Option<f64>,
    pub exact_match_rate: f64,
    pub partition: Option<PartitionMetrics>,
    /// Over greedy generations for the clean held-out prompts.
    pub diversity: Diversity,
    pub config_fingerprint: String,
}

/// Hex SHA-256 of the canonical (key-sorted, compact) JSON form of `config`.
pub fn config_fingerprint<T: Serialize>(config: &T) -> Result<String> {
    let canonical = serde_json::to_vec(&serde_json::to_value(config)?)?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

/// Scores `params` on clean (and optionally noisy) held-out data.
pub fn evaluate<F: Scalar>(
    params: &Parameters<F>,
    clean_heldout: &Corpus,
    noisy_heldout: Option<&Corpus>,
    partition: Option<PartitionMetrics>,
    config_fingerprint: &str,
) -> Result<EvalReport> {
    let clean = perplexity(params, clean_heldout)?;
    let noisy = noisy_heldout.map(|c| perplexity(params, c)).transpose()?;
    let responses = greedy_responses(params, clean_heldout)?;
    Ok(EvalReport {
        clean_heldout_perplexity: clean,
        noisy_heldout_perplexity: noisy,
        exact_match_rate: exact_match_of(&responses, clean_heldout)?,
        partition,
        diversity: Diversity {
            distinct_1: distinct_n(&responses, 1).ok(),
            distinct_2: distinct_n(&responses, 2).ok(),
        },
        config_fingerprint: config_fingerprint.to_string(),
    })
}

pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(path, e))
}

pub fn read_eval_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// One grid point of an ablation sweep, flattened for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: String,
    pub rho: f64,
    pub forget_rate: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub clean_heldout_perplexity: f64,
    pub noisy_heldout_perplexity: Option<f64>,
    pub exact_match_rate: f64,
    pub auc: Option<f64>,
    pub precision_at_rho: Option<f64>,
    pub recall_at_rho: Option<f64>,
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
    pub config_fingerprint: String,
}

impl SweepRow {
    pub fn new(mode: &str, rho: f64, forget_rate: f64, t_min: f64, t_max: f64, report: &EvalReport) -> Self {
        SweepRow {
            mode: mode.to_string(),
            rho,
            forget_rate,
            t_min,
            t_max,
            clean_heldout_perplexity: report.clean_heldout_perplexity,
            noisy_heldout_perplexity: report.noisy_heldout_perplexity,
            exact_match_rate: report.exact_match_rate,
            auc: report.partition.map(|p| p.auc),
            precision_at_rho: report.partition.map(|p| p.precision_at_rho),
            recall_at_rho: report.partition.map(|p| p.recall_at_rho),
            distinct_1: report.diversity.distinct_1,
            distinct_2: report.diversity.distinct_2,
            config_fingerprint: report.config_fingerprint.clone(),
        }
    }
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::format(format!("sweep flush: {e}")))
}

pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
