use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{ceil_count, Label, Partition, TokenKey, TokenScoreTable};

/// The two means of the dual objective and their λ-weighted combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    /// Mean loss over positive tokens in the batch (0 when there are none).
    pub positive: f64,
    /// Mean loss over forget-set tokens in the batch (0 when there are none).
    pub negative: f64,
    pub lambda: f64,
    /// `positive − lambda·negative`.
    pub combined: f64,
    pub n_positive: usize,
    pub n_negative: usize,
}

/// Per-token weights whose weighted sum of losses is the dual objective:
/// `1/|P_b|` on positive tokens, `−λ/|N_b|` on negative ones, 0 on discarded.
///
/// `None` when the batch has no positive or negative tokens (nothing to train on).
pub fn objective_weights(labels: &[Label], lambda: f64) -> Option<Vec<f64>> {
    let n_pos = labels.iter().filter(|&&l| l == Label::Positive).count();
    let n_neg = labels.iter().filter(|&&l| l == Label::Negative).count();
    if n_pos + n_neg == 0 {
        return None;
    }
    Some(
        labels
            .iter()
            .map(|l| match l {
                Label::Positive => 1.0 / n_pos as f64,
                Label::Negative => -lambda / n_neg as f64,
                Label::Discarded => 0.0,
            })
            .collect(),
    )
}

/// Batch objective `mean_P(loss) − λ·mean_N(loss)` from per-token losses.
///
/// Discarded tokens are ignored; `None` signals a batch with no labeled tokens.
pub fn forgetting_loss(losses: &[f64], labels: &[Label], lambda: f64) -> Result<Option<LossComponents>> {
    if losses.len() != labels.len() {
        return Err(Error::contract(format!("{} losses for {} labels", losses.len(), labels.len())));
    }
    let (mut sp, mut np, mut sn, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for (&l, &label) in losses.iter().zip(labels) {
        match label {
            Label::Positive => {
                sp += l;
                np += 1;
            }
            Label::Negative => {
                sn += l;
                nn += 1;
            }
            Label::Discarded => {}
        }
    }
    if np + nn == 0 {
        return Ok(None);
    }
    let positive = if np == 0 { 0.0 } else { sp / np as f64 };
    let negative = if nn == 0 { 0.0 } else { sn / nn as f64 };
    Ok(Some(LossComponents {
        positive,
        negative,
        lambda,
        combined: positive - lambda * negative,
        n_positive: np,
        n_negative: nn,
    }))
}

/// Keeps only the lowest-quality `ceil(forget_rate·|I|)` negative tokens in
/// the forget set; the other negatives become discarded.
pub fn apply_forget_rate(partition: &Partition, table: &TokenScoreTable, forget_rate: f64) -> Result<Partition> {
    if !(0.0..=1.0 - partition.rho + 1e-12).contains(&forget_rate) {
        return Err(Error::config(format!(
            "forget_rate {forget_rate} outside [0, 1 - rho = {}]",
            1.0 - partition.rho
        )));
    }
    partition.check_covers(table)?;
    let negatives: std::collections::HashSet<&TokenKey> =
        partition.negative.iter().chain(&partition.discarded).collect();
    let mut ranked: Vec<_> = table.rows.iter().filter(|r| negatives.contains(&r.key())).collect();
    // same total order as the quantile cut, lowest quality last
    ranked.sort_by(|a, b| {
        b.quality
            .total_cmp(&a.quality)
            .then_with(|| a.seq_id.cmp(&b.seq_id))
            .then_with(|| a.position.cmp(&b.position))
    });
    let keep = ceil_count(forget_rate, table.len()).min(ranked.len());
    let split = ranked.len() - keep;
    let mut discarded: Vec<TokenKey> = ranked[..split].iter().map(|r| r.key()).collect();
    let mut negative: Vec<TokenKey> = ranked[split..].iter().map(|r| r.key()).collect();
    discarded.sort();
    negative.sort();
    Ok(Partition {
        negative,
        discarded,
        ..partition.clone()
    })
}
