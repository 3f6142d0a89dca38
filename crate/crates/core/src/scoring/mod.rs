//! Cross-model token scoring and positive/negative partitioning.

mod partition;
mod table;

pub use partition::{
    ceil_count, partition_metrics, partition_tokens, rank_auc, score_and_partition_sequences, sequence_qualities,
    Label, Level, Partition, PartitionMetrics, ThresholdMode,
};
pub use table::{
    read_score_csv, read_score_table, score_tokens, write_score_csv, write_score_table, TokenKey, TokenScore,
    TokenScoreTable, SCORE_COLUMNS,
};

#[cfg(test)]
mod tests;
