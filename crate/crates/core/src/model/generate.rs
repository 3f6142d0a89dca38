use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{next_token_logits, Parameters};
use crate::data::EOS;
use crate::engine::Scalar;
use crate::error::{Error, Result};

/// Extends `prompt` by up to `max_new` tokens, stopping early at EOS (not
/// returned) or when the context window is full.
///
/// Temperature 0 is greedy with ties broken toward the lowest id; otherwise
/// tokens are drawn from the tempered softmax with a ChaCha stream seeded by `seed`.
pub fn generate<F: Scalar>(
    params: &Parameters<F>,
    prompt: &[u32],
    max_new: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(Error::contract("generation needs a nonempty prompt"));
    }
    if !(temperature >= 0.0) {
        return Err(Error::contract(format!("temperature {temperature} must be >= 0")));
    }
    let max_context = params.config().max_context;
    if prompt.len() > max_context {
        return Err(Error::Length {
            len: prompt.len(),
            max: max_context,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut context = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new && context.len() < max_context {
        let logits: Vec<f64> = next_token_logits(params, &context)?.into_iter().map(F::as_f64).collect();
        let next = if temperature == 0.0 {
            argmax_lowest(&logits)
        } else {
            sample(&logits, temperature, rng.random::<f64>())
        };
        if next == EOS {
            break;
        }
        out.push(next);
        context.push(next);
    }
    Ok(out)
}

fn argmax_lowest(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

fn sample(logits: &[f64], temperature: f64, u: f64) -> u32 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut threshold = u * total;
    for (i, w) in weights.iter().enumerate() {
        if threshold < *w {
            return i as u32;
        }
        threshold -= w;
    }
    (weights.len() - 1) as u32
}
