use std::collections::HashSet;

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Corpus, SamplePair};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `"37+485="` → `"522"`.
    Addition,
    /// `"ab:qwer,cd:zxcv;cd="` → `"zxcv"`: recall a value listed in the prompt.
    KeyValue,
    /// Even indices addition, odd indices key-value.
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Train,
    Heldout,
}

impl Pool {
    fn tag(self) -> &'static str {
        match self {
            Pool::Train => "train",
            Pool::Heldout => "heldout",
        }
    }
}

/// Seeded template grammar for prompt → deterministic-answer pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarSpec {
    pub kind: TaskKind,
    pub samples: usize,
    /// Inclusive digit-count range of each addition operand.
    pub operand_digits: [usize; 2],
    /// Inclusive range of key:value pairs listed in a recall prompt.
    pub kv_pairs: [usize; 2],
    pub key_len: usize,
    pub value_len: usize,
    pub seed: u64,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        GrammarSpec {
            kind: TaskKind::Mixed,
            samples: 1000,
            operand_digits: [1, 3],
            kv_pairs: [2, 4],
            key_len: 2,
            value_len: 4,
            seed: 0,
        }
    }
}

impl GrammarSpec {
    pub fn validate(&self) -> Result<()> {
        let [dlo, dhi] = self.operand_digits;
        let [plo, phi] = self.kv_pairs;
        if dlo == 0 || dlo > dhi || dhi > 9 {
            return Err(Error::config(format!("operand_digits {:?} must satisfy 1 <= lo <= hi <= 9", self.operand_digits)));
        }
        if plo == 0 || plo > phi {
            return Err(Error::config(format!("kv_pairs {:?} must satisfy 1 <= lo <= hi", self.kv_pairs)));
        }
        if self.key_len == 0 || self.value_len == 0 {
            return Err(Error::config("key_len and value_len must be positive"));
        }
        if 26f64.powi(self.key_len as i32) < phi as f64 {
            return Err(Error::config("key_len too short for distinct keys"));
        }
        Ok(())
    }
}

/// Which pool a prompt belongs to: one eighth of the prompt space is held out.
pub fn pool_of(prompt: &str) -> Pool {
    if Sha256::digest(prompt.as_bytes())[0] % 8 == 0 {
        Pool::Heldout
    } else {
        Pool::Train
    }
}

fn operand(rng: &mut ChaCha8Rng, digits: [usize; 2]) -> u64 {
    let d = rng.random_range(digits[0]..=digits[1]) as u32;
    let lo = if d == 1 { 0 } else { 10u64.pow(d - 1) };
    rng.random_range(lo..10u64.pow(d))
}

fn letters(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect()
}

fn candidate(spec: &GrammarSpec, task: TaskKind, rng: &mut ChaCha8Rng) -> (String, String) {
    match task {
        TaskKind::Addition | TaskKind::Mixed => {
            let (a, b) = (operand(rng, spec.operand_digits), operand(rng, spec.operand_digits));
            (format!("{a}+{b}="), (a + b).to_string())
        }
        TaskKind::KeyValue => {
            let n = rng.random_range(spec.kv_pairs[0]..=spec.kv_pairs[1]);
            let mut keys: Vec<String> = Vec::with_capacity(n);
            while keys.len() < n {
                let k = letters(rng, spec.key_len);
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
            let values: Vec<String> = (0..n).map(|_| letters(rng, spec.value_len)).collect();
            let q = (0..n).choose(rng).expect("at least one pair");
            let listing: Vec<String> = keys.iter().zip(&values).map(|(k, v)| format!("{k}:{v}")).collect();
            (format!("{};{}=", listing.join(","), keys[q]), values[q].clone())
        }
    }
}

/// Sample `index` of `pool`: a pure function of `(spec, pool, index)`.
pub fn synthetic_sample(spec: &GrammarSpec, pool: Pool, index: usize) -> SamplePair {
    let task = match spec.kind {
        TaskKind::Mixed if index % 2 == 1 => TaskKind::KeyValue,
        TaskKind::Mixed => TaskKind::Addition,
        k => k,
    };
    let stream = (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (pool as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ stream);
    loop {
        let (prompt, response) = candidate(spec, task, &mut rng);
        if pool_of(&prompt) == pool {
            return SamplePair::new(format!("{}-{index:06}", pool.tag()), prompt, response);
        }
    }
}

/// `spec.samples` distinct pairs from `pool`; indices whose pair repeats an
/// earlier one are skipped (ids keep the index, so gaps can appear).
pub fn generate_pool(spec: &GrammarSpec, pool: Pool, samples: usize) -> Result<Corpus> {
    spec.validate()?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(samples);
    let mut index = 0;
    while out.len() < samples {
        if index >= samples.saturating_mul(20) + 1000 {
            return Err(Error::config(format!(
                "grammar cannot produce {samples} distinct {} samples",
                pool.tag()
            )));
        }
        let s = synthetic_sample(spec, pool, index);
        if seen.insert((s.prompt.clone(), s.response.clone())) {
            out.push(s);
        }
        index += 1;
    }
    Corpus::new(out)
}

/// The training pool of `spec.samples` pairs.
pub fn generate_synthetic(spec: &GrammarSpec) -> Result<Corpus> {
    generate_pool(spec, Pool::Train, spec.samples)
}

/// `samples` held-out pairs, disjoint in prompt (and id) from every training pair.
pub fn generate_heldout(spec: &GrammarSpec, samples: usize) -> Result<Corpus> {
    generate_pool(spec, Pool::Heldout, samples)
}
