use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};

/// How a corpus is divided into the reference slice and the training slice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ref_fraction: f64,
    pub split_seed: u64,
}

/// Seeded shuffle, then the first `round(ref_fraction·N)` samples go to the
/// reference slice. Both slices keep the corpus's original order.
pub fn split_ref_train(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    if !(spec.ref_fraction > 0.0 && spec.ref_fraction < 1.0) {
        return Err(Error::Split(format!(
            "ref_fraction {} outside (0, 1)",
            spec.ref_fraction
        )));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::Split(format!("corpus of {n} samples is too small to split")));
    }
    let n_ref = (spec.ref_fraction * n as f64).round() as usize;
    if n_ref == 0 || n_ref == n {
        return Err(Error::Split(format!(
            "ref_fraction {} of {n} samples leaves an empty slice",
            spec.ref_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.split_seed));
    let mut in_ref = vec![false; n];
    for &i in &order[..n_ref] {
        in_ref[i] = true;
    }
    let (mut reference, mut train) = (Vec::with_capacity(n_ref), Vec::with_capacity(n - n_ref));
    for (s, r) in corpus.samples().iter().zip(in_ref) {
        if r {
            reference.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((Corpus::new(reference)?, Corpus::new(train)?))
}

/// Fails unless the two corpora share no sample id.
pub fn ensure_disjoint(a: &Corpus, b: &Corpus) -> Result<()> {
    let ids: std::collections::HashSet<&str> = a.samples().iter().map(|s| s.id.as_str()).collect();
    match b.samples().iter().find(|s| ids.contains(s.id.as_str())) {
        Some(s) => Err(Error::contract(format!(
            "reference and training data share sample id {}",
            s.id
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::SamplePair;

    fn corpus(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| SamplePair::new(format!("s{i:04}"), format!("p{i}"), format!("r{i}")))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn ten_samples_at_twenty_percent() {
        let spec = SplitSpec { ref_fraction: 0.2, split_seed: 3 };
        let (r, t) = split_ref_train(&corpus(10), &spec).unwrap();
        assert_eq!((r.len(), t.len()), (2, 8));
        ensure_disjoint(&r, &t).unwrap();
    }

    #[test]
    fn same_seed_same_split() {
        let spec = SplitSpec { ref_fraction: 0.3, split_seed: 11 };
        assert_eq!(split_ref_train(&corpus(50), &spec).unwrap(), split_ref_train(&corpus(50), &spec).unwrap());
    }

    #[test]
    fn too_small_or_bad_fraction_is_an_error() {
        let spec = SplitSpec { ref_fraction: 0.5, split_seed: 0 };
        assert!(matches!(split_ref_train(&corpus(1), &spec), Err(Error::Split(_))));
        let spec = SplitSpec { ref_fraction: 1.0, split_seed: 0 };
        assert!(matches!(split_ref_train(&corpus(10), &spec), Err(Error::Split(_))));
    }

    proptest! {
        #[test]
        fn splits_partition_the_corpus(n in 2usize..80, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let c = corpus(n);
            let spec = SplitSpec { ref_fraction: frac, split_seed: seed };
            match split_ref_train(&c, &spec) {
                Ok((r, t)) => {
                    prop_assert_eq!(r.len(), (frac * n as f64).round() as usize);
                    ensure_disjoint(&r, &t).unwrap();
                    let mut all: Vec<_> = r.samples().iter().chain(t.samples()).cloned().collect();
                    all.sort_by(|a, b| a.id.cmp(&b.id));
                    prop_assert_eq!(all.as_slice(), c.samples());
                }
                Err(Error::Split(_)) => {
                    let k = (frac * n as f64).round() as usize;
                    prop_assert!(k == 0 || k == n);
                }
                Err(e) => panic!("{e}"),
            }
        }
    }
}
