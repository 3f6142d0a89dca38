use std::collections::HashSet;

use crate::data::{Corpus, TokenizedCorpus};
use crate::engine::Scalar;
use crate::error::{Error, Result};
use crate::model::{generate, per_token_loss, Parameters};
use crate::parallel::{map_ordered, threads};

const EVAL_BATCH: usize = 32;

/// Summed masked NLL and masked-token count, accumulated in f64 in corpus order.
pub fn masked_nll<F: Scalar>(params: &Parameters<F>, corpus: &Corpus) -> Result<(f64, usize)> {
    let tc = TokenizedCorpus::new(corpus, params.config().max_context);
    let order: Vec<usize> = (0..tc.len()).collect();
    let batches: Vec<_> = tc.batches(&order, EVAL_BATCH).collect();
    let per_batch = map_ordered(&batches, threads(), |b| -> Result<Vec<f64>> {
        let losses = per_token_loss(params, &b.tokens)?;
        Ok(b.masked_tokens().iter().map(|m| losses.data()[m.flat].as_f64()).collect())
    })?;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for l in per_batch.iter().flatten() {
        total += l;
        count += 1;
    }
    Ok((total, count))
}

/// `exp(total masked NLL / masked token count)`.
pub fn perplexity<F: Scalar>(params: &Parameters<F>, corpus: &Corpus) -> Result<f64> {
    let (total, count) = masked_nll(params, corpus)?;
    if count == 0 {
        return Err(Error::contract("perplexity of an empty corpus"));
    }
    Ok((total / count as f64).exp())
}

/// Greedy continuation of every prompt, allowed one token beyond the
/// reference length so an over-long answer is visible. Prompts that fill the
/// context yield an empty response.
pub fn greedy_responses<F: Scalar>(params: &Parameters<F>, corpus: &Corpus) -> Result<Vec<Vec<u32>>> {
    let ctx = params.config().max_context;
    map_ordered(corpus.samples(), threads(), |s| {
        let prompt: Vec<u32> = std::iter::once(crate::data::BOS)
            .chain(crate::data::encode_bytes(s.prompt.as_bytes()))
            .collect();
        if prompt.len() >= ctx {
            return Ok(Vec::new());
        }
        generate(params, &prompt, s.response.len() + 1, 0.0, 0)
    })
}

/// Fraction of `responses` equal to the corpus reference byte-for-byte.
pub fn exact_match_of(responses: &[Vec<u32>], corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::contract("exact match over an empty corpus"));
    }
    let hits = responses
        .iter()
        .zip(corpus.samples())
        .filter(|(r, s)| crate::data::decode_bytes(r) == s.response.as_bytes())
        .count();
    Ok(hits as f64 / corpus.len() as f64)
}

/// Fraction of prompts whose greedy generation equals the reference response.
pub fn exact_match<F: Scalar>(params: &Parameters<F>, corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::contract("exact match over an empty corpus"));
    }
    exact_match_of(&greedy_responses(params, corpus)?, corpus)
}

/// Unique n-grams across all samples divided by the total n-gram count.
pub fn distinct_n(samples: &[Vec<u32>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::contract("distinct-n needs n >= 1"));
    }
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for s in samples {
        for w in s.windows(n) {
            unique.insert(w);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::contract(format!("no sample has {n} or more tokens")));
    }
    Ok(unique.len() as f64 / total as f64)
}
