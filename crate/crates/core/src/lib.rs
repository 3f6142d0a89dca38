//! Selective learn/forget fine-tuning for a tiny byte-level language model.
//!
//! Every response token is scored by how much a reference model, fine-tuned on
//! a disjoint slice of the data, changes its loss relative to the base model.
//! High-quality tokens are learned; the rest are either ignored or actively
//! forgotten by gradient ascent with a coefficient that grows over training.

pub mod data;
pub mod engine;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod scoring;
pub mod trainer;

pub use error::{Error, Result};
