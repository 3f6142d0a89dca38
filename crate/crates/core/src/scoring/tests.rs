use std::collections::HashSet;

use proptest::prelude::*;

use super::*;
use crate::data::{Corpus, SamplePair, VOCAB_SIZE};
use crate::error::Error;
use crate::model::{ModelConfig, Parameters};

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: VOCAB_SIZE,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        ffn_mult: 2,
        max_context: 32,
        init_seed: seed,
    }
}

fn tiny_corpus() -> Corpus {
    let samples = (0..7)
        .map(|i| {
            let mut s = SamplePair::new(format!("s{i}"), format!("{i}+{i}="), (2 * i).to_string() + "x".repeat(i % 3).as_str());
            s.noise_mask = Some(if i % 2 == 0 { vec![0] } else { vec![] });
            s
        })
        .collect();
    Corpus::new(samples).unwrap()
}

/// A second model sharing `tiny_config(1)` but with independent weights.
fn sibling() -> Parameters<f32> {
    let other = Parameters::<f32>::init(&tiny_config(2)).unwrap();
    let tensors = other.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    Parameters::from_tensors(tiny_config(1), tensors).unwrap()
}

fn table_of(qualities: &[f64]) -> TokenScoreTable {
    TokenScoreTable::new(
        qualities
            .iter()
            .enumerate()
            .map(|(i, &q)| TokenScore::from_losses(format!("q{:03}", i / 4), (i % 4) as u32, 10, q, 0.0))
            .collect(),
    )
}

fn labelled(rows: &[(&str, u32, f64, bool)]) -> TokenScoreTable {
    TokenScoreTable::new(
        rows.iter()
            .map(|&(s, p, q, noisy)| {
                let mut r = TokenScore::from_losses(s, p, 10, q, 0.0);
                r.ground_truth_noise = Some(noisy);
                r
            })
            .collect(),
    )
}

#[test]
fn identical_models_score_zero() {
    let p = Parameters::<f32>::init(&tiny_config(1)).unwrap();
    let t = score_tokens(&p, &p, &tiny_corpus(), 3).unwrap();
    assert!(!t.is_empty());
    assert!(t.rows.iter().all(|r| r.influence == 0.0 && r.quality == 0.0));
}

#[test]
fn loss_arithmetic() {
    let r = TokenScore::from_losses("a", 0, 5, 1.2, 0.5);
    assert!((r.influence + 0.7).abs() < 1e-15);
    assert_eq!(r.quality, -r.influence);
    assert!((r.quality - 0.7).abs() < 1e-15);
}

#[test]
fn swapping_models_negates_influence() {
    let a = Parameters::<f32>::init(&tiny_config(1)).unwrap();
    let b = sibling();
    let ab = score_tokens(&a, &b, &tiny_corpus(), 3).unwrap();
    let ba = score_tokens(&b, &a, &tiny_corpus(), 3).unwrap();
    for (x, y) in ab.rows.iter().zip(&ba.rows) {
        assert_eq!(x.influence, -y.influence);
        assert_eq!(x.quality, -x.influence);
        assert_eq!(x.influence, x.loss_ref - x.loss_base);
    }
}

#[test]
fn scoring_covers_every_masked_token_with_ground_truth() {
    let a = Parameters::<f32>::init(&tiny_config(1)).unwrap();
    let b = sibling();
    let c = tiny_corpus();
    let t = score_tokens(&a, &b, &c, 4).unwrap();
    let expected: usize = c.samples().iter().map(|s| s.response.len() + 1).sum();
    assert_eq!(t.len(), expected);
    let noisy: Vec<_> = t.rows.iter().filter(|r| r.ground_truth_noise == Some(true)).map(|r| r.key()).collect();
    assert_eq!(noisy, ["s0", "s2", "s4", "s6"].map(|s| TokenKey::new(s, 0)).to_vec());
    // batching does not change which tokens are scored
    let keys: Vec<_> = score_tokens(&a, &b, &c, 1).unwrap().rows.iter().map(TokenScore::key).collect();
    assert_eq!(keys, t.rows.iter().map(TokenScore::key).collect::<Vec<_>>());
}

#[test]
fn mismatched_configs_are_rejected() {
    let a = Parameters::<f32>::init(&tiny_config(1)).unwrap();
    let mut cfg = tiny_config(1);
    cfg.d_model = 8;
    let b = Parameters::<f32>::init(&cfg).unwrap();
    assert!(matches!(score_tokens(&a, &b, &tiny_corpus(), 3), Err(Error::Contract(_))));
}

#[test]
fn quantile_counts() {
    let t = table_of(&[0.3, -1.0, 2.0, 0.0, 0.5, 0.1, -0.2, 0.9, 1.1, -0.4]);
    let p = partition_tokens(&t, 0.7, ThresholdMode::Quantile).unwrap();
    assert_eq!((p.positive.len(), p.negative.len()), (7, 3));
    let neg: HashSet<_> = p.negative.iter().cloned().collect();
    assert_eq!(neg, [1, 3, 6, 9].iter().filter(|&&i| i != 3).map(|&i| t.rows[i].key()).collect());
}

#[test]
fn ties_break_by_sequence_then_position() {
    let t = table_of(&[0.0; 8]);
    let p = partition_tokens(&t, 0.5, ThresholdMode::Quantile).unwrap();
    let expected: Vec<TokenKey> = (0..4).map(|j| TokenKey::new("q000", j)).collect();
    assert_eq!(p.positive, expected);
    assert_eq!(p, partition_tokens(&t, 0.5, ThresholdMode::Quantile).unwrap());
}

#[test]
fn zero_threshold_counts_positive_quality() {
    let t = table_of(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.0, -0.1, -0.2, -0.3]);
    let p = partition_tokens(&t, 0.5, ThresholdMode::Zero).unwrap();
    assert_eq!(p.positive.len(), 6);
    assert_eq!(p.threshold_mode, ThresholdMode::Zero);
}

#[test]
fn rho_outside_unit_interval_is_config_error() {
    let t = table_of(&[1.0, 2.0]);
    for rho in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
        assert!(matches!(partition_tokens(&t, rho, ThresholdMode::Quantile), Err(Error::Config(_))));
        assert!(matches!(score_and_partition_sequences(&t, rho), Err(Error::Config(_))));
    }
    assert!(matches!(
        partition_tokens(&TokenScoreTable::default(), 0.5, ThresholdMode::Quantile),
        Err(Error::Contract(_))
    ));
}

#[test]
fn sequences_inherit_mean_labels() {
    let t = labelled(&[("a", 0, 0.9, false), ("a", 1, 0.9, false), ("b", 0, -0.1, false), ("b", 1, -0.1, false)]);
    let p = score_and_partition_sequences(&t, 0.5).unwrap();
    assert_eq!(p.positive, vec![TokenKey::new("a", 0), TokenKey::new("a", 1)]);
    assert_eq!(p.negative, vec![TokenKey::new("b", 0), TokenKey::new("b", 1)]);
    assert_eq!(p.level, Level::Sequence);

    let t = labelled(&[("a", 0, 1.0, false), ("a", 1, -1.0, false), ("b", 0, 0.2, false)]);
    let q = sequence_qualities(&t);
    assert_eq!(q["a"], 0.0);
    let p = score_and_partition_sequences(&t, 0.5).unwrap();
    assert_eq!(p.positive, vec![TokenKey::new("b", 0)]);
}

/// Sequence `a` has a positive mean but carries a noisy token; the token-level
/// cut isolates it while the sequence-level cut keeps all of `a` positive.
#[test]
fn token_level_recall_beats_sequence_level_on_mixed_noise() {
    let t = labelled(&[
        ("a", 0, 1.0, false),
        ("a", 1, 1.0, false),
        ("a", 2, 1.0, false),
        ("a", 3, -2.0, true),
        ("b", 0, 0.1, false),
        ("b", 1, 0.1, false),
        ("c", 0, -1.0, true),
        ("c", 1, -1.0, true),
    ]);
    let recall = |p: &Partition| {
        let neg: HashSet<_> = p.negative.iter().collect();
        let noisy: Vec<_> = t.rows.iter().filter(|r| r.ground_truth_noise == Some(true)).map(|r| r.key()).collect();
        noisy.iter().filter(|k| neg.contains(k)).count() as f64 / noisy.len() as f64
    };
    let token = partition_tokens(&t, 0.5, ThresholdMode::Quantile).unwrap();
    let seq = score_and_partition_sequences(&t, 0.5).unwrap();
    assert_ne!(token, seq);
    assert_eq!(recall(&token), 1.0);
    assert!((recall(&seq) - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn perfect_separation_has_unit_auc() {
    let t = labelled(&[("a", 0, 3.0, false), ("a", 1, 2.0, false), ("a", 2, 1.0, true), ("a", 3, 0.0, true)]);
    let m = partition_metrics(&t, 0.5).unwrap();
    assert_eq!(m.auc, 1.0);
    assert_eq!(m.recall_at_rho, 1.0);
    assert_eq!(m.precision_at_rho, 1.0);
}

#[test]
fn metrics_need_ground_truth() {
    assert!(matches!(partition_metrics(&table_of(&[1.0, 0.0]), 0.5), Err(Error::Contract(_))));
}

#[test]
fn unrelated_scores_average_half_auc() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut total = 0.0;
    for _ in 0..200 {
        let scores: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..200).map(|_| rng.random_bool(0.3)).collect();
        total += rank_auc(&scores, &labels).unwrap();
    }
    assert!((total / 200.0 - 0.5).abs() < 0.02);
}

#[test]
fn csv_round_trip() {
    let mut t = labelled(&[("a,b", 0, 0.1 + 0.2, true), ("c", 3, -1e-300, false)]);
    t.rows[1].loss_base = 5.551115123125783e-17;
    let mut buf = Vec::new();
    write_score_csv(&t, &mut buf).unwrap();
    assert_eq!(read_score_csv(buf.as_slice()).unwrap(), t);

    let plain = table_of(&[1.5, -2.25]);
    let mut buf = Vec::new();
    write_score_csv(&plain, &mut buf).unwrap();
    assert_eq!(read_score_csv(buf.as_slice()).unwrap(), plain);
}

#[test]
fn csv_empty_table_is_header_only() {
    let mut buf = Vec::new();
    write_score_csv(&TokenScoreTable::default(), &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap(), SCORE_COLUMNS.join(",") + "\n");
    assert!(read_score_csv(buf.as_slice()).unwrap().is_empty());
}

#[test]
fn csv_extra_column_is_format_error() {
    let text = format!("{},extra\na,0,5,1,1,0,0,,9\n", SCORE_COLUMNS.join(","));
    assert!(matches!(read_score_csv(text.as_bytes()), Err(Error::Format(_))));
    let text = format!("{}\na,0,5,1,1,0,0,,9\n", SCORE_COLUMNS.join(","));
    assert!(matches!(read_score_csv(text.as_bytes()), Err(Error::Format(_))));
}

#[test]
fn partition_json_round_trip() {
    let t = table_of(&[0.3, -1.0, 2.0, 0.0, 0.5]);
    let p = partition_tokens(&t, 0.6, ThresholdMode::Quantile).unwrap();
    let json = p.to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["level"], "token");
    assert_eq!(v["threshold_mode"], "quantile");
    assert_eq!(serde_json::from_str::<Partition>(&json).unwrap(), p);
    p.check_covers(&t).unwrap();
}

#[test]
fn ceil_count_ignores_product_rounding() {
    assert_eq!(ceil_count(0.7, 10), 7);
    assert_eq!(ceil_count(0.3, 10), 3);
    assert_eq!(ceil_count(0.71, 10), 8);
    assert_eq!(ceil_count(0.5, 7), 4);
}

/// Independent AUC: fraction of (noisy, clean) pairs ranked correctly, ties count half.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn qualities() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![(-4i32..4).prop_map(f64::from), -5.0f64..5.0], 1..60)
}

proptest! {
    #[test]
    fn quantile_sizes_and_cover(q in qualities(), k in 1u32..1000) {
        let rho = f64::from(k) / 1000.0;
        let t = table_of(&q);
        let p = partition_tokens(&t, rho, ThresholdMode::Quantile).unwrap();
        let expected = (k as usize * q.len()).div_ceil(1000);
        prop_assert_eq!(p.positive.len(), expected);
        prop_assert_eq!(p.negative.len(), q.len() - expected);
        p.check_covers(&t).unwrap();
    }

    #[test]
    fn raising_quality_keeps_token_positive(q in qualities(), k in 1u32..1000, pick in any::<prop::sample::Index>(), bump in 0.0f64..10.0) {
        let rho = f64::from(k) / 1000.0;
        let t = table_of(&q);
        let p = partition_tokens(&t, rho, ThresholdMode::Quantile).unwrap();
        let i = pick.index(q.len());
        let key = t.rows[i].key();
        let mut raised = t.clone();
        raised.rows[i].quality += bump;
        let p2 = partition_tokens(&raised, rho, ThresholdMode::Quantile).unwrap();
        if p.positive.contains(&key) {
            prop_assert!(p2.positive.contains(&key));
        }
    }

    #[test]
    fn affine_rescaling_preserves_partition(q in qualities(), k in 1u32..1000, a in 0.01f64..100.0, b in -10.0f64..10.0) {
        let rho = f64::from(k) / 1000.0;
        let t = table_of(&q);
        // integer-valued scales keep ties exact
        let a = a.round().max(1.0);
        let b = b.round();
        let mut scaled = t.clone();
        scaled.rows.iter_mut().for_each(|r| r.quality = a * r.quality + b);
        prop_assert_eq!(
            partition_tokens(&t, rho, ThresholdMode::Quantile).unwrap(),
            partition_tokens(&scaled, rho, ThresholdMode::Quantile).unwrap()
        );
    }

    #[test]
    fn rank_auc_matches_pairwise(q in qualities(), flips in prop::collection::vec(any::<bool>(), 60)) {
        let labels: Vec<bool> = flips[..q.len()].to_vec();
        if let Some(auc) = rank_auc(&q, &labels) {
            prop_assert!((auc - pairwise_auc(&q, &labels)).abs() < 1e-12);
        } else {
            prop_assert!(labels.iter().all(|&l| l) || labels.iter().all(|&l| !l));
        }
    }

    #[test]
    fn sequence_partition_is_label_uniform(q in qualities(), k in 1u32..1000) {
        let t = table_of(&q);
        let p = score_and_partition_sequences(&t, f64::from(k) / 1000.0).unwrap();
        p.check_covers(&t).unwrap();
        let pos: HashSet<_> = p.positive.iter().map(|k| k.seq_id.clone()).collect();
        prop_assert!(p.negative.iter().all(|k| !pos.contains(&k.seq_id)));
    }
}
