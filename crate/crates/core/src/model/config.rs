use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and seed of the decoder-only transformer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub max_context: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::data::VOCAB_SIZE,
            d_model: 128,
            n_heads: 4,
            n_layers: 4,
            ffn_mult: 4,
            max_context: 256,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::config(format!("vocab_size {} < 4", self.vocab_size)));
        }
        if self.max_context < 2 {
            return Err(Error::config(format!("max_context {} < 2", self.max_context)));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.ffn_mult == 0 {
            return Err(Error::config("n_layers and ffn_mult must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_mult * self.d_model
    }

    /// Named tensor shapes in canonical order (also the initialization order).
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d_model, self.ffn_dim());
        let mut shapes = vec![
            ("tok_emb".to_string(), vec![self.vocab_size, d]),
            ("pos_emb".to_string(), vec![self.max_context, d]),
        ];
        for l in 0..self.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            shapes.extend([
                (p("ln1.gain"), vec![d]),
                (p("ln1.bias"), vec![d]),
                (p("attn.wq"), vec![d, d]),
                (p("attn.wk"), vec![d, d]),
                (p("attn.wv"), vec![d, d]),
                (p("attn.wo"), vec![d, d]),
                (p("ln2.gain"), vec![d]),
                (p("ln2.bias"), vec![d]),
                (p("ffn.w1"), vec![d, f]),
                (p("ffn.b1"), vec![f]),
                (p("ffn.w2"), vec![f, d]),
                (p("ffn.b2"), vec![d]),
            ]);
        }
        shapes.push(("ln_f.gain".to_string(), vec![d]));
        shapes.push(("ln_f.bias".to_string(), vec![d]));
        shapes
    }

    /// Closed-form parameter count. The output projection is tied to `tok_emb`.
    pub fn parameter_count(&self) -> usize {
        let (d, f) = (self.d_model, self.ffn_dim());
        let per_layer = 4 * d * d + 2 * d * f + f + d + 4 * d;
        self.vocab_size * d + self.max_context * d + self.n_layers * per_layer + 2 * d
    }
}
