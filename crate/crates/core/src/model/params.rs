use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::engine::{Scalar, Tensor};
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

/// Named weights of one model instance (base, reference, or fine-tuned).
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<F> {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor<F>>,
}

fn is_residual_projection(name: &str) -> bool {
    name.ends_with("attn.wo") || name.ends_with("ffn.w2")
}

impl<F: Scalar> Parameters<F> {
    /// Seeded initialization: N(0, 0.02²) weights, residual output projections
    /// scaled by 1/√(2·n_layers), unit layer-norm gains, zero biases.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let residual_std = INIT_STD / ((2 * config.n_layers) as f64).sqrt();
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.tensor_shapes() {
            let tensor = if name.ends_with(".gain") {
                Tensor::full(&shape, F::one())
            } else if name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2") {
                Tensor::zeros(&shape)
            } else {
                let std = if is_residual_projection(&name) { residual_std } else { INIT_STD };
                let normal = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(&shape, |_| F::from_f64(normal.sample(&mut rng)))
            };
            tensors.insert(name, tensor);
        }
        Ok(Parameters {
            config: config.clone(),
            tensors,
        })
    }

    /// Assembles parameters from named tensors, checking every config-implied shape.
    pub fn from_tensors(config: ModelConfig, mut tensors: BTreeMap<String, Tensor<F>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.tensor_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::contract(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        let mut checked = BTreeMap::new();
        for (name, shape) in shapes {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::contract(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension {
                    op: "parameters",
                    left: t.shape().to_vec(),
                    right: shape,
                });
            }
            checked.insert(name, t);
        }
        Ok(Parameters {
            config,
            tensors: checked,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> &Tensor<F> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<F> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<G: Scalar>(&self) -> Parameters<G> {
        Parameters {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// True when both parameter sets hold bitwise-identical values.
    pub fn bitwise_eq(&self, other: &Parameters<F>) -> bool {
        self.config == other.config
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}
