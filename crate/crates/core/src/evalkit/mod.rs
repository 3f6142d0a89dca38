//! Synthetic tasks, held-out evaluation and report emission.

mod metrics;
mod report;
mod synth;

pub use metrics::{distinct_n, exact_match, exact_match_of, greedy_responses, masked_nll, perplexity};
pub use report::{
    config_fingerprint, emit_report, evaluate, read_eval_report, read_sweep_csv, write_sweep_csv, Diversity,
    EvalReport, SweepRow,
};
pub use synth::{generate_heldout, generate_pool, generate_synthetic, pool_of, synthetic_sample, GrammarSpec, Pool, TaskKind};

#[cfg(test)]
mod tests;
