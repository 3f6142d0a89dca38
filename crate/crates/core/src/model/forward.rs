use std::collections::BTreeMap;

use super::Parameters;
use crate::engine::{Scalar, Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};

/// Right-padded token matrix with a response-token loss mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub rows: usize,
    pub cols: usize,
    /// `rows × cols` token ids, row-major.
    pub tokens: Vec<u32>,
    /// `rows × cols` loss mask: 1 exactly on response tokens (and EOS).
    pub mask: Vec<u8>,
}

impl TokenBatch {
    pub fn validate(&self) -> Result<()> {
        let n = self.rows * self.cols;
        if self.tokens.len() != n || self.mask.len() != n {
            return Err(Error::Dimension {
                op: "token_batch",
                left: vec![self.rows, self.cols],
                right: vec![self.tokens.len(), self.mask.len()],
            });
        }
        for r in 0..self.rows {
            if self.mask[r * self.cols] != 0 {
                return Err(Error::contract("first column has no predecessor and cannot be masked"));
            }
        }
        if let Some(i) = (0..n).find(|&i| self.mask[i] != 0 && self.tokens[i] == crate::data::PAD) {
            return Err(Error::contract(format!("PAD token at flat index {i} carries mask 1")));
        }
        Ok(())
    }

    /// Flat indices `r*cols + t` of masked positions, in row-major order.
    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i] != 0).collect()
    }
}

/// Parameters placed on a tape, keyed by name.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Puts every tensor on `tape`, as a leaf when `trainable`, else as a constant.
    pub fn bind<F: Scalar>(tape: &mut Tape<F>, params: &Parameters<F>, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
                (name.to_string(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// Routes `name` to a different node, e.g. a leaf under test.
    pub fn replace(&mut self, name: &str, var: Var) {
        let slot = self
            .vars
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"));
        *slot = var;
    }

    pub fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Residual-stream output of the transformer stack for `rows × cols` input ids.
pub fn hidden_states<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    params: &Parameters<F>,
    tokens: &[u32],
    rows: usize,
    cols: usize,
) -> Result<Var> {
    let cfg = params.config();
    if cols > cfg.max_context {
        return Err(Error::Length {
            len: cols,
            max: cfg.max_context,
        });
    }
    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..rows).flat_map(|_| 0..cols).collect();
    let eps = F::from_f64(LAYER_NORM_EPS);

    let tok = tape.embedding(bound.var("tok_emb"), &ids)?;
    let pos = tape.embedding(bound.var("pos_emb"), &positions)?;
    let mut x = tape.add(tok, pos)?;

    for l in 0..cfg.n_layers {
        let p = |s: &str| bound.var(&format!("layers.{l}.{s}"));
        let h = tape.layer_norm(x, p("ln1.gain"), p("ln1.bias"), eps)?;
        let q = tape.matmul(h, p("attn.wq"))?;
        let k = tape.matmul(h, p("attn.wk"))?;
        let v = tape.matmul(h, p("attn.wv"))?;
        let a = tape.causal_attention(q, k, v, rows, cols, cfg.n_heads)?;
        let o = tape.matmul(a, p("attn.wo"))?;
        x = tape.add(x, o)?;

        let h = tape.layer_norm(x, p("ln2.gain"), p("ln2.bias"), eps)?;
        let u = tape.matmul(h, p("ffn.w1"))?;
        let u = tape.add_bias(u, p("ffn.b1"))?;
        let u = tape.gelu(u);
        let o = tape.matmul(u, p("ffn.w2"))?;
        let o = tape.add_bias(o, p("ffn.b2"))?;
        x = tape.add(x, o)?;
    }
    Ok(x)
}

/// Logits (tied output projection) for selected rows of the hidden state.
pub fn logits_for_rows<F: Scalar>(tape: &mut Tape<F>, bound: &BoundParams, hidden: Var, rows: &[usize]) -> Result<Var> {
    let picked = tape.embedding(hidden, rows)?;
    let eps = F::from_f64(LAYER_NORM_EPS);
    let h = tape.layer_norm(picked, bound.var("ln_f.gain"), bound.var("ln_f.bias"), eps)?;
    tape.matmul_bt(h, bound.var("tok_emb"))
}

/// Per-token losses for the flat batch positions `targets` (each `r*cols + t`, `t ≥ 1`).
///
/// Returns a `[targets.len()]` node; token `t` is predicted from tokens `< t` only.
pub fn token_losses<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    params: &Parameters<F>,
    batch: &TokenBatch,
    targets: &[usize],
) -> Result<Var> {
    batch.validate()?;
    let (rows, cols) = (batch.rows, batch.cols);
    if cols > params.config().max_context {
        return Err(Error::Length {
            len: cols,
            max: params.config().max_context,
        });
    }
    if cols < 2 {
        return Err(Error::contract("batch needs at least two columns"));
    }
    let inputs: Vec<u32> = (0..rows)
        .flat_map(|r| batch.tokens[r * cols..(r + 1) * cols - 1].iter().copied())
        .collect();
    let hidden = hidden_states(tape, bound, params, &inputs, rows, cols - 1)?;
    let mut hidden_rows = Vec::with_capacity(targets.len());
    let mut target_ids = Vec::with_capacity(targets.len());
    for &flat in targets {
        let (r, t) = (flat / cols, flat % cols);
        if r >= rows || t == 0 {
            return Err(Error::Index(format!("position ({r}, {t}) has no predecessor in the batch")));
        }
        hidden_rows.push(r * (cols - 1) + t - 1);
        target_ids.push(batch.tokens[flat] as usize);
    }
    let logits = logits_for_rows(tape, bound, hidden, &hidden_rows)?;
    tape.cross_entropy_per_token(logits, &target_ids)
}

/// Loss of every token given its strict prefix, as a `[rows × cols]` tensor.
/// Column 0 has no predecessor and is 0; callers select positions through `batch.mask`.
pub fn per_token_loss<F: Scalar>(params: &Parameters<F>, batch: &TokenBatch) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let targets: Vec<usize> = (0..batch.rows)
        .flat_map(|r| (1..batch.cols).map(move |t| r * batch.cols + t))
        .collect();
    let losses = token_losses(&mut tape, &bound, params, batch, &targets)?;
    let mut out = Tensor::zeros(&[batch.rows, batch.cols]);
    for (&flat, &l) in targets.iter().zip(tape.value(losses).data()) {
        out.data_mut()[flat] = l;
    }
    Ok(out)
}

/// Logits for the token following `context`.
pub fn next_token_logits<F: Scalar>(params: &Parameters<F>, context: &[u32]) -> Result<Vec<F>> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let hidden = hidden_states(&mut tape, &bound, params, context, 1, context.len())?;
    let logits = logits_for_rows(&mut tape, &bound, hidden, &[context.len() - 1])?;
    Ok(tape.value(logits).data().to_vec())
}
