use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::model::Parameters;

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment estimates and the number of updates applied so far.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F> {
    pub m: BTreeMap<String, Tensor<F>>,
    pub v: BTreeMap<String, Tensor<F>>,
    pub step: u64,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(params: &Parameters<F>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape())))
                .collect()
        };
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// Global L2 norm over all gradient tensors, accumulated in f64.
pub fn global_norm<F: Scalar>(grads: &BTreeMap<String, Tensor<F>>) -> f64 {
    grads
        .values()
        .flat_map(|t| t.data())
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut BTreeMap<String, Tensor<F>>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = F::from_f64(max_norm / norm);
        grads.values_mut().flat_map(|t| t.data_mut()).for_each(|g| *g *= s);
    }
    norm
}

/// One AdamW update: decoupled decay `p ← p − lr·wd·p`, then the
/// bias-corrected Adam step.
pub fn adamw_step<F: Scalar>(
    params: &mut Parameters<F>,
    grads: &BTreeMap<String, Tensor<F>>,
    state: &mut OptimizerState<F>,
    lr: f64,
    hp: &AdamW,
) -> Result<()> {
    if grads.len() != params.iter().count() {
        return Err(Error::contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.iter().count()
        )));
    }
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::contract(format!("no gradient for {name}")))?;
        let m = state
            .m
            .get(name)
            .ok_or_else(|| Error::contract(format!("no optimizer state for {name}")))?;
        for other in [g.shape(), m.shape()] {
            if other != p.shape() {
                return Err(Error::Dimension {
                    op: "adamw_step",
                    left: p.shape().to_vec(),
                    right: other.to_vec(),
                });
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = F::from_f64(1.0 - hp.beta1.powi(t));
    let c2 = F::from_f64(1.0 - hp.beta2.powi(t));
    let (b1, b2) = (F::from_f64(hp.beta1), F::from_f64(hp.beta2));
    let (one, eps) = (F::one(), F::from_f64(hp.eps));
    let lr_f = F::from_f64(lr);
    let decay = F::from_f64(lr * hp.weight_decay);

    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).expect("checked above").data_mut();
        let v = state.v.get_mut(name).expect("checked above").data_mut();
        for (i, p) in p.data_mut().iter_mut().enumerate() {
            *p -= decay * *p;
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *p -= lr_f * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
