use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, TokenizedCorpus};
use crate::engine::Scalar;
use crate::error::{Error, Result};
use crate::model::{per_token_loss, Parameters};
use crate::parallel::{map_ordered, threads};

pub const SCORE_COLUMNS: [&str; 8] = [
    "seq_id",
    "position",
    "token_id",
    "loss_base",
    "loss_ref",
    "influence",
    "quality",
    "ground_truth_noise",
];

/// Global identity of a response token: sample id and 0-based response position.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenKey {
    pub seq_id: String,
    pub position: u32,
}

impl TokenKey {
    pub fn new(seq_id: impl Into<String>, position: u32) -> Self {
        TokenKey {
            seq_id: seq_id.into(),
            position,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenScore {
    pub seq_id: String,
    pub position: u32,
    pub token_id: u32,
    pub loss_base: f64,
    pub loss_ref: f64,
    /// `loss_ref − loss_base`: negative when reference training made the token easier.
    pub influence: f64,
    /// `−influence`.
    pub quality: f64,
    pub ground_truth_noise: Option<bool>,
}

impl TokenScore {
    /// Builds a row with influence and quality derived from the two losses.
    pub fn from_losses(seq_id: impl Into<String>, position: u32, token_id: u32, loss_base: f64, loss_ref: f64) -> Self {
        let influence = loss_ref - loss_base;
        TokenScore {
            seq_id: seq_id.into(),
            position,
            token_id,
            loss_base,
            loss_ref,
            influence,
            quality: -influence,
            ground_truth_noise: None,
        }
    }

    pub fn key(&self) -> TokenKey {
        TokenKey::new(self.seq_id.clone(), self.position)
    }
}

/// One row per masked response token, in corpus order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenScoreTable {
    pub rows: Vec<TokenScore>,
}

impl TokenScoreTable {
    pub fn new(rows: Vec<TokenScore>) -> Self {
        TokenScoreTable { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.rows.iter().all(|r| r.ground_truth_noise.is_some())
    }
}

/// Scores every masked token of `corpus` under `theta` (base) and `theta_ref`.
///
/// Both models see the same corpus-order batches of `batch_size` rows; batches
/// are spread over `LETHE_THREADS` workers and reassembled in order.
pub fn score_tokens<F: Scalar>(
    theta: &Parameters<F>,
    theta_ref: &Parameters<F>,
    corpus: &Corpus,
    batch_size: usize,
) -> Result<TokenScoreTable> {
    if theta.config() != theta_ref.config() {
        return Err(Error::contract("base and reference models have different configurations"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let with_truth = corpus.has_noise_masks();
    let tc = TokenizedCorpus::new(corpus, theta.config().max_context);
    let order: Vec<usize> = (0..tc.len()).collect();
    let batches: Vec<_> = tc.batches(&order, batch_size).collect();
    let scored = map_ordered(&batches, threads(), |batch| -> Result<Vec<TokenScore>> {
        let base = per_token_loss(theta, &batch.tokens)?;
        let reference = per_token_loss(theta_ref, &batch.tokens)?;
        let mut rows = Vec::new();
        for m in batch.masked_tokens() {
            let (lb, lr) = (base.data()[m.flat].as_f64(), reference.data()[m.flat].as_f64());
            if !lb.is_finite() || !lr.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss for {}:{} ({lb}, {lr})",
                    m.sample.id, m.position
                )));
            }
            let mut row = TokenScore::from_losses(m.sample.id.clone(), m.position, m.token_id, lb, lr);
            if with_truth {
                row.ground_truth_noise = Some(m.sample.pair.noise[m.position as usize]);
            }
            rows.push(row);
        }
        Ok(rows)
    })?;
    let rows = scored.concat();
    Ok(TokenScoreTable { rows })
}

pub fn write_score_table(table: &TokenScoreTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_score_csv(table, file)
}

pub fn write_score_csv<W: std::io::Write>(table: &TokenScoreTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_COLUMNS)?;
    for r in &table.rows {
        let truth = match r.ground_truth_noise {
            None => String::new(),
            Some(b) => u8::from(b).to_string(),
        };
        w.write_record([
            r.seq_id.clone(),
            r.position.to_string(),
            r.token_id.to_string(),
            r.loss_base.to_string(),
            r.loss_ref.to_string(),
            r.influence.to_string(),
            r.quality.to_string(),
            truth,
        ])?;
    }
    w.flush().map_err(|e| Error::Format(format!("score table flush: {e}")))
}

pub fn read_score_table(path: impl AsRef<Path>) -> Result<TokenScoreTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_score_csv(file)
}

pub fn read_score_csv<R: std::io::Read>(input: R) -> Result<TokenScoreTable> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| Error::format(format!("score table header: {e}")))?.clone();
    if header.iter().ne(SCORE_COLUMNS) {
        return Err(Error::format(format!(
            "score table header {:?}, expected {:?}",
            header.iter().collect::<Vec<_>>(),
            SCORE_COLUMNS
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::format(format!("line {line}: {e}")))?;
        let num = |col: usize| -> Result<f64> {
            rec[col]
                .parse()
                .map_err(|_| Error::format(format!("line {line}: bad {} {:?}", SCORE_COLUMNS[col], &rec[col])))
        };
        let int = |col: usize| -> Result<u32> {
            rec[col]
                .parse()
                .map_err(|_| Error::format(format!("line {line}: bad {} {:?}", SCORE_COLUMNS[col], &rec[col])))
        };
        let ground_truth_noise = match &rec[7] {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(Error::format(format!("line {line}: bad ground_truth_noise {other:?}"))),
        };
        rows.push(TokenScore {
            seq_id: rec[0].to_string(),
            position: int(1)?,
            token_id: int(2)?,
            loss_base: num(3)?,
            loss_ref: num(4)?,
            influence: num(5)?,
            quality: num(6)?,
            ground_truth_noise,
        });
    }
    Ok(TokenScoreTable { rows })
}
