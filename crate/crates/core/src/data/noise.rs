use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, SamplePair};
use crate::error::{Error, Result};

const PRINTABLE_LO: u8 = 0x20;
const PRINTABLE_HI: u8 = 0x7e;

/// Corrupts exactly `round(rate·n)` response bytes per sample, `n` being the
/// response byte length, and records the corrupted positions in `noise_mask`.
///
/// Positions are drawn without replacement among ASCII bytes (so the text
/// stays valid UTF-8) and each is replaced by a uniformly drawn printable
/// ASCII byte different from the original. Prompts are untouched.
pub fn inject_noise(corpus: &Corpus, rate: f64, seed: u64) -> Result<Corpus> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("noise rate {rate} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = corpus
        .samples()
        .iter()
        .map(|s| corrupt(s, rate, &mut rng))
        .collect();
    Corpus::new(samples)
}

fn corrupt(sample: &SamplePair, rate: f64, rng: &mut ChaCha8Rng) -> SamplePair {
    let mut bytes = sample.response.as_bytes().to_vec();
    let eligible: Vec<usize> = (0..bytes.len()).filter(|&j| bytes[j].is_ascii()).collect();
    let count = ((rate * bytes.len() as f64).round() as usize).min(eligible.len());
    let mut chosen: Vec<usize> = index::sample(rng, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    chosen.sort_unstable();
    for &j in &chosen {
        let original = bytes[j];
        let span = (PRINTABLE_HI - PRINTABLE_LO + 1) as u32;
        let replacement = loop {
            let b = PRINTABLE_LO + rng.random_range(0..span) as u8;
            if b != original {
                break b;
            }
        };
        bytes[j] = replacement;
    }
    let mut mask = sample.noise_mask.clone().unwrap_or_default();
    mask.extend_from_slice(&chosen);
    mask.sort_unstable();
    mask.dedup();
    SamplePair {
        id: sample.id.clone(),
        prompt: sample.prompt.clone(),
        response: String::from_utf8(bytes).expect("ASCII-for-ASCII substitution keeps UTF-8 valid"),
        noise_mask: Some(mask),
    }
}
