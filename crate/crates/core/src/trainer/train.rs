use std::collections::{BTreeMap, HashMap};

use super::{
    adamw_step, clip_global_norm, forgetting_loss, lambda_at, lr_at, objective_weights, AdamW, OptimizerState,
    StepRecord, TrainConfig, TrainMode, TrainReport, TrainSummary, ESTIMATOR,
};
use crate::data::{Corpus, TokenizedCorpus};
use crate::engine::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{token_losses, BoundParams, Parameters, TokenBatch};
use crate::scoring::{Label, Partition, TokenKey};

/// Weighted sum of per-token losses at flat positions `targets`, and its
/// gradient with respect to every parameter. Returns the per-token losses.
pub fn batch_gradients<F: Scalar>(
    params: &Parameters<F>,
    batch: &TokenBatch,
    targets: &[usize],
    weights: &[f64],
) -> Result<(Vec<f64>, BTreeMap<String, Tensor<F>>)> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, true);
    let losses = token_losses(&mut tape, &bound, params, batch, targets)?;
    let w: Vec<F> = weights.iter().map(|&x| F::from_f64(x)).collect();
    let root = tape.weighted_sum(losses, &w)?;
    let values = tape.value(losses).data().iter().map(|l| l.as_f64()).collect();
    let mut grads = tape.backward(root)?;
    let by_name = bound
        .iter()
        .map(|(name, var)| {
            let g = grads.take(var).unwrap_or_else(|| Tensor::zeros(params.get(name).shape()));
            (name.to_string(), g)
        })
        .collect();
    Ok((values, by_name))
}

fn label_counts(labels: &HashMap<TokenKey, Label>, tc: &TokenizedCorpus) -> Result<[usize; 3]> {
    let mut counts = [0usize; 3];
    for s in tc.samples() {
        for j in 0..s.pair.response_len() {
            let key = TokenKey::new(s.id.clone(), j as u32);
            let label = labels
                .get(&key)
                .ok_or_else(|| Error::contract(format!("partition has no label for token {}:{j}", s.id)))?;
            counts[*label as usize] += 1;
        }
    }
    Ok(counts)
}

fn run<F: Scalar>(
    theta: &Parameters<F>,
    corpus: &Corpus,
    labels: Option<&HashMap<TokenKey, Label>>,
    mode: TrainMode,
    config: &TrainConfig,
) -> Result<(Parameters<F>, TrainReport)> {
    config.validate()?;
    let tc = TokenizedCorpus::new(corpus, theta.config().max_context);
    if tc.is_empty() {
        return Err(Error::config("training corpus has no usable samples"));
    }
    let cfg = config.resolved(tc.len());
    let total = cfg.steps_for(tc.len());
    let counts = match labels {
        Some(l) => label_counts(l, &tc)?,
        None => [tc.samples().iter().map(|s| s.pair.response_len()).sum(), 0, 0],
    };
    let hp = AdamW {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
        weight_decay: cfg.weight_decay,
    };

    let mut params = theta.clone();
    let mut state = OptimizerState::new(&params);
    let mut rows = Vec::with_capacity(total);
    let mut skipped = 0;
    let mut step = 0;
    let mut epoch = 0u64;
    while step < total {
        let order = tc.epoch_order(cfg.train_seed, epoch);
        for batch in tc.batches(&order, cfg.batch_size) {
            if step >= total {
                break;
            }
            let lambda = match mode {
                TrainMode::Forget => lambda_at(step, &cfg)?,
                TrainMode::Ignore | TrainMode::FullSft => 0.0,
            };
            let (targets, kept): (Vec<usize>, Vec<Label>) = batch
                .masked_tokens()
                .into_iter()
                .map(|m| {
                    let label = match labels {
                        None => Label::Positive,
                        Some(l) => l[&TokenKey::new(m.sample.id.clone(), m.position)],
                    };
                    (m.flat, label)
                })
                .filter(|&(_, l)| l != Label::Discarded)
                .unzip();
            let Some(weights) = objective_weights(&kept, lambda) else {
                skipped += 1;
                step += 1;
                continue;
            };
            let (losses, mut grads) = batch_gradients(&params, &batch.tokens, &targets, &weights)?;
            let parts = forgetting_loss(&losses, &kept, lambda)?.expect("batch has labeled tokens");
            if !parts.combined.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {step}")));
            }
            if let Some(c) = cfg.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            let lr = lr_at(step, &cfg)?;
            adamw_step(&mut params, &grads, &mut state, lr, &hp)?;
            rows.push(StepRecord {
                step,
                lr,
                lambda,
                positive_loss: parts.positive,
                negative_loss: parts.negative,
                combined_loss: parts.combined,
            });
            step += 1;
        }
        epoch += 1;
    }

    let summary = TrainSummary {
        total_steps: total,
        updates: rows.len(),
        skipped_steps: skipped,
        positive_tokens: counts[Label::Positive as usize],
        negative_tokens: counts[Label::Negative as usize],
        discarded_tokens: counts[Label::Discarded as usize],
        final_combined_loss: rows.last().map(|r| r.combined_loss),
        estimator: ESTIMATOR.to_string(),
        checkpoint: None,
    };
    Ok((params, TrainReport { rows, summary }))
}

/// Full-token fine-tuning of the base model on the reference split.
/// `total_steps = Some(0)` returns the base parameters untouched.
pub fn train_reference<F: Scalar>(
    theta: &Parameters<F>,
    d_ref: &Corpus,
    config: &TrainConfig,
) -> Result<(Parameters<F>, TrainReport)> {
    if d_ref.is_empty() {
        return Err(Error::config("reference corpus is empty"));
    }
    if config.total_steps == Some(0) {
        let summary = TrainSummary {
            total_steps: 0,
            updates: 0,
            skipped_steps: 0,
            positive_tokens: 0,
            negative_tokens: 0,
            discarded_tokens: 0,
            final_combined_loss: None,
            estimator: ESTIMATOR.to_string(),
            checkpoint: None,
        };
        return Ok((theta.clone(), TrainReport { rows: Vec::new(), summary }));
    }
    run(theta, d_ref, None, TrainMode::FullSft, config)
}

/// Fine-tunes `theta` on `d_train` under `config.mode`.
///
/// `ignore` and `forget` read token labels from `partition` (its negative set
/// is the forget set); `full_sft` ignores it.
pub fn train<F: Scalar>(
    theta: &Parameters<F>,
    d_train: &Corpus,
    partition: Option<&Partition>,
    config: &TrainConfig,
) -> Result<(Parameters<F>, TrainReport)> {
    match config.mode {
        TrainMode::FullSft => run(theta, d_train, None, TrainMode::FullSft, config),
        mode => {
            let partition =
                partition.ok_or_else(|| Error::contract(format!("mode {mode} needs a token partition")))?;
            if partition.level != config.level {
                return Err(Error::contract(format!(
                    "partition level {:?} does not match configured level {:?}",
                    partition.level, config.level
                )));
            }
            let labels = partition.labels();
            if labels.len() != partition.len() {
                return Err(Error::contract("partition sets overlap"));
            }
            run(theta, d_train, Some(&labels), mode, config)
        }
    }
}
