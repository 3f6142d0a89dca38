//! Tiny pre-norm decoder-only transformer over the byte vocabulary.

mod checkpoint;
mod config;
mod forward;
mod generate;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use forward::{
    hidden_states, logits_for_rows, next_token_logits, per_token_loss, token_losses, BoundParams, TokenBatch,
};
pub use generate::generate;
pub use params::Parameters;
