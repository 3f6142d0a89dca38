//! Corpus ingestion, byte-level tokenization, reference/train splitting,
//! synthetic noise injection and batching.

mod batch;
mod corpus;
mod noise;
mod split;
mod tokenize;

pub use batch::{batch_iterator, Batch, MaskedToken, TokenizedCorpus, TokenizedSample};
pub use corpus::{ingest_jsonl, parse_jsonl, Corpus, SamplePair, TOKENIZER_TAG};
pub use noise::inject_noise;
pub use split::{ensure_disjoint, split_ref_train, SplitSpec};
pub use tokenize::{
    decode_bytes, detokenize, encode_bytes, tokenize_pair, TokenizedPair, BOS, BYTE_OFFSET, EOS, PAD, VOCAB_SIZE,
};
