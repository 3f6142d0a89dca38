use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{tokenize_pair, Corpus, TokenizedPair, PAD};
use crate::model::TokenBatch;

/// A tokenized sample tagged with its corpus index and id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedSample {
    pub index: usize,
    pub id: String,
    pub pair: TokenizedPair,
}

/// Every tokenizable sample of a corpus, in corpus order.
#[derive(Clone, Debug)]
pub struct TokenizedCorpus {
    samples: Vec<TokenizedSample>,
    skipped: Vec<String>,
}

impl TokenizedCorpus {
    pub fn new(corpus: &Corpus, max_context: usize) -> Self {
        let mut samples = Vec::with_capacity(corpus.len());
        let mut skipped = Vec::new();
        for (index, s) in corpus.samples().iter().enumerate() {
            match tokenize_pair(s, max_context) {
                Some(pair) => samples.push(TokenizedSample {
                    index,
                    id: s.id.clone(),
                    pair,
                }),
                None => skipped.push(s.id.clone()),
            }
        }
        TokenizedCorpus { samples, skipped }
    }

    pub fn samples(&self) -> &[TokenizedSample] {
        &self.samples
    }

    /// Ids of samples whose prompt alone fills the context.
    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample order for one epoch: a seeded shuffle derived from `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        let mixed = seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mixed));
        order
    }

    /// Right-pads the samples at `order` into one batch.
    pub fn batch(&self, order: &[usize]) -> Batch<'_> {
        let cols = order
            .iter()
            .map(|&i| self.samples[i].pair.tokens.len())
            .max()
            .unwrap_or(0);
        let rows = order.len();
        let mut tokens = vec![PAD; rows * cols];
        let mut mask = vec![0u8; rows * cols];
        for (r, &i) in order.iter().enumerate() {
            let p = &self.samples[i].pair;
            tokens[r * cols..r * cols + p.tokens.len()].copy_from_slice(&p.tokens);
            mask[r * cols..r * cols + p.mask.len()].copy_from_slice(&p.mask);
        }
        Batch {
            tokens: TokenBatch { rows, cols, tokens, mask },
            members: order.iter().map(|&i| &self.samples[i]).collect(),
        }
    }

    /// Consecutive batches over `order`; the last one may be short.
    pub fn batches<'a>(&'a self, order: &'a [usize], batch_size: usize) -> impl Iterator<Item = Batch<'a>> + 'a {
        assert!(batch_size >= 1, "batch_size must be at least 1");
        order.chunks(batch_size).map(move |chunk| self.batch(chunk))
    }
}

/// A padded token batch plus the provenance of each row.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub tokens: TokenBatch,
    pub members: Vec<&'a TokenizedSample>,
}

/// A masked token in a batch, mapped back to its global `(sequence, position)` key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskedToken<'a> {
    /// Flat index `row*cols + t` in the batch.
    pub flat: usize,
    pub sample: &'a TokenizedSample,
    /// Response position (0-based, EOS included).
    pub position: u32,
    pub token_id: u32,
}

impl<'a> Batch<'a> {
    /// Masked tokens in row-major order.
    pub fn masked_tokens(&self) -> Vec<MaskedToken<'a>> {
        let cols = self.tokens.cols;
        let mut out = Vec::new();
        for (r, sample) in self.members.iter().enumerate() {
            let p = &sample.pair;
            for t in p.response_start..p.tokens.len() {
                out.push(MaskedToken {
                    flat: r * cols + t,
                    sample,
                    position: (t - p.response_start) as u32,
                    token_id: p.tokens[t],
                });
            }
        }
        out
    }
}

/// Seeded epoch of batches over a corpus, or corpus order when `shuffle_seed` is `None`.
pub fn batch_iterator(
    corpus: &Corpus,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    max_context: usize,
) -> Vec<TokenBatch> {
    let tc = TokenizedCorpus::new(corpus, max_context);
    let order = match shuffle_seed {
        Some(seed) => tc.epoch_order(seed, 0),
        None => (0..tc.len()).collect(),
    };
    tc.batches(&order, batch_size).map(|b| b.tokens).collect()
}
