use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TokenKey, TokenScoreTable};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Token,
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Top `ceil(ρ·|I|)` by quality are positive.
    Quantile,
    /// Strictly positive quality is positive.
    Zero,
}

/// Training role of one token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    /// Negative but outside the forget set: contributes no loss.
    Discarded,
}

/// Disjoint positive/negative (and optionally discarded) key sets covering all scored tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub rho: f64,
    pub level: Level,
    pub threshold_mode: ThresholdMode,
    pub positive: Vec<TokenKey>,
    pub negative: Vec<TokenKey>,
    #[serde(default)]
    pub discarded: Vec<TokenKey>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len() + self.discarded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> HashMap<TokenKey, Label> {
        let mut map = HashMap::with_capacity(self.len());
        for (keys, label) in [
            (&self.positive, Label::Positive),
            (&self.negative, Label::Negative),
            (&self.discarded, Label::Discarded),
        ] {
            map.extend(keys.iter().map(|k| (k.clone(), label)));
        }
        map
    }

    /// Checks disjointness and that the keys cover exactly the rows of `table`.
    pub fn check_covers(&self, table: &TokenScoreTable) -> Result<()> {
        let labels = self.labels();
        if labels.len() != self.len() {
            return Err(Error::contract("partition sets overlap"));
        }
        if labels.len() != table.len() || table.rows.iter().any(|r| !labels.contains_key(&r.key())) {
            return Err(Error::contract("partition does not cover the scored token set"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `ceil(fraction·n)`, immune to the last-ulp error of the product
/// (0.7·10 evaluates to 7.000000000000001).
pub fn ceil_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let c = (x * (1.0 - 1e-12)).ceil();
    (c.max(0.0) as usize).min(n)
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("rho {rho} outside (0, 1)")))
    }
}

fn split_sorted(mut positive: Vec<TokenKey>, mut negative: Vec<TokenKey>) -> (Vec<TokenKey>, Vec<TokenKey>) {
    positive.sort();
    negative.sort();
    (positive, negative)
}

/// Splits scored tokens into positive and negative sets.
///
/// Quantile ranks by quality descending, breaking ties by `(seq_id, position)`
/// ascending. `rho` is validated and recorded in both modes.
pub fn partition_tokens(table: &TokenScoreTable, rho: f64, mode: ThresholdMode) -> Result<Partition> {
    check_rho(rho)?;
    if table.is_empty() {
        return Err(Error::contract("cannot partition an empty score table"));
    }
    let (positive, negative): (Vec<TokenKey>, Vec<TokenKey>) = match mode {
        ThresholdMode::Quantile => {
            let mut idx: Vec<usize> = (0..table.len()).collect();
            idx.sort_by(|&a, &b| {
                let (ra, rb) = (&table.rows[a], &table.rows[b]);
                rb.quality
                    .total_cmp(&ra.quality)
                    .then_with(|| ra.seq_id.cmp(&rb.seq_id))
                    .then_with(|| ra.position.cmp(&rb.position))
            });
            let k = ceil_count(rho, table.len());
            let keys: Vec<TokenKey> = idx.iter().map(|&i| table.rows[i].key()).collect();
            let (p, n) = keys.split_at(k);
            (p.to_vec(), n.to_vec())
        }
        ThresholdMode::Zero => {
            let (p, n): (Vec<_>, Vec<_>) = table.rows.iter().partition(|r| r.quality > 0.0);
            (p.iter().map(|r| r.key()).collect(), n.iter().map(|r| r.key()).collect())
        }
    };
    let (positive, negative) = split_sorted(positive, negative);
    Ok(Partition {
        rho,
        level: Level::Token,
        threshold_mode: mode,
        positive,
        negative,
        discarded: Vec::new(),
    })
}

/// Mean token quality of every sequence, keyed by sequence id.
pub fn sequence_qualities(table: &TokenScoreTable) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in &table.rows {
        let e = acc.entry(&r.seq_id).or_insert((0.0, 0));
        e.0 += r.quality;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k.to_string(), s / n as f64)).collect()
}

/// Sequence-level partition: the top `ceil(ρ·N_seq)` sequences by mean quality
/// are positive and every token inherits its sequence's label.
pub fn score_and_partition_sequences(table: &TokenScoreTable, rho: f64) -> Result<Partition> {
    check_rho(rho)?;
    if table.is_empty() {
        return Err(Error::contract("cannot partition an empty score table"));
    }
    let mut seqs: Vec<(String, f64)> = sequence_qualities(table).into_iter().collect();
    seqs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let k = ceil_count(rho, seqs.len());
    let winners: std::collections::HashSet<&str> = seqs[..k].iter().map(|(s, _)| s.as_str()).collect();
    let (p, n): (Vec<_>, Vec<_>) = table.rows.iter().partition(|r| winners.contains(r.seq_id.as_str()));
    let (positive, negative) = split_sorted(p.iter().map(|r| r.key()).collect(), n.iter().map(|r| r.key()).collect());
    Ok(Partition {
        rho,
        level: Level::Sequence,
        threshold_mode: ThresholdMode::Quantile,
        positive,
        negative,
        discarded: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionMetrics {
    /// Area under the ROC curve of `−quality` as a noise detector.
    pub auc: f64,
    /// Fraction of the negative set (at the ρ cut) that is true noise.
    pub precision_at_rho: f64,
    /// Fraction of true noise that lands in the negative set.
    pub recall_at_rho: f64,
}

/// Rank-sum (Mann–Whitney) AUC with average ranks for tied scores.
/// `None` when either class is empty.
pub fn rank_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]].total_cmp(&scores[idx[i]]) == Ordering::Equal {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Noise-detection quality of the scores against ground-truth masks, with the
/// negative set taken from the token-level quantile partition at `rho`.
pub fn partition_metrics(table: &TokenScoreTable, rho: f64) -> Result<PartitionMetrics> {
    if table.is_empty() || !table.has_ground_truth() {
        return Err(Error::contract("partition metrics need ground-truth noise on every row"));
    }
    let truth: Vec<bool> = table.rows.iter().map(|r| r.ground_truth_noise == Some(true)).collect();
    let scores: Vec<f64> = table.rows.iter().map(|r| -r.quality).collect();
    let auc = rank_auc(&scores, &truth)
        .ok_or_else(|| Error::contract("partition metrics need both noisy and clean tokens"))?;

    let partition = partition_tokens(table, rho, ThresholdMode::Quantile)?;
    let labels = partition.labels();
    let (mut hits, mut flagged) = (0usize, 0usize);
    for (r, &noisy) in table.rows.iter().zip(&truth) {
        if labels[&r.key()] == Label::Negative {
            flagged += 1;
            hits += usize::from(noisy);
        }
    }
    let noisy = truth.iter().filter(|&&t| t).count();
    Ok(PartitionMetrics {
        auc,
        precision_at_rho: if flagged == 0 { 0.0 } else { hits as f64 / flagged as f64 },
        recall_at_rho: hits as f64 / noisy as f64,
    })
}
