use std::collections::HashSet;

use super::*;
use crate::data::{parse_jsonl, Corpus, SamplePair, TokenizedCorpus, VOCAB_SIZE};
use crate::error::Error;
use crate::model::{per_token_loss, ModelConfig, Parameters};
use crate::scoring::PartitionMetrics;
use crate::trainer::{train, TrainConfig, TrainMode};

fn small_model(seed: u64) -> Parameters<f32> {
    Parameters::init(&ModelConfig {
        vocab_size: VOCAB_SIZE,
        d_model: 32,
        n_heads: 2,
        n_layers: 2,
        ffn_mult: 2,
        max_context: 40,
        init_seed: seed,
    })
    .unwrap()
}

#[test]
fn samples_are_pure_functions_of_spec_and_index() {
    let spec = GrammarSpec { kind: TaskKind::Addition, seed: 7, ..GrammarSpec::default() };
    let a = synthetic_sample(&spec, Pool::Train, 0);
    assert_eq!(a, synthetic_sample(&spec, Pool::Train, 0));
    let (x, y) = a.prompt.trim_end_matches('=').split_once('+').unwrap();
    assert_eq!(x.parse::<u64>().unwrap() + y.parse::<u64>().unwrap(), a.response.parse::<u64>().unwrap());
    let other = GrammarSpec { seed: 8, ..spec.clone() };
    assert_ne!(
        (0..5).map(|i| synthetic_sample(&spec, Pool::Train, i)).collect::<Vec<_>>(),
        (0..5).map(|i| synthetic_sample(&other, Pool::Train, i)).collect::<Vec<_>>()
    );
}

#[test]
fn key_value_answers_are_listed_in_the_prompt() {
    let spec = GrammarSpec { kind: TaskKind::KeyValue, ..GrammarSpec::default() };
    for i in 0..50 {
        let s = synthetic_sample(&spec, Pool::Train, i);
        let (listing, query) = s.prompt.trim_end_matches('=').split_once(';').unwrap();
        let value = listing
            .split(',')
            .find_map(|kv| kv.split_once(':').filter(|(k, _)| *k == query).map(|(_, v)| v))
            .unwrap();
        assert_eq!(value, s.response);
    }
}

#[test]
fn pools_are_disjoint() {
    let spec = GrammarSpec { samples: 1000, ..GrammarSpec::default() };
    let train = generate_synthetic(&spec).unwrap();
    let held = generate_heldout(&spec, 300).unwrap();
    assert_eq!(train.len(), 1000);
    assert_eq!(held.len(), 300);
    let ids: HashSet<&str> = train.samples().iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids.len(), 1000);
    let prompts: HashSet<&str> = train.samples().iter().map(|s| s.prompt.as_str()).collect();
    for s in held.samples() {
        assert!(!ids.contains(s.id.as_str()));
        assert!(!prompts.contains(s.prompt.as_str()));
    }
    assert!(train.samples().iter().all(|s| pool_of(&s.prompt) == Pool::Train));
}

#[test]
fn generated_corpora_survive_ingest() {
    let spec = GrammarSpec { samples: 400, operand_digits: [1, 1], ..GrammarSpec::default() };
    let c = generate_synthetic(&spec).unwrap();
    assert_eq!(parse_jsonl(&c.to_jsonl().unwrap()).unwrap(), c);
}

#[test]
fn impossible_grammars_are_config_errors() {
    let spec = GrammarSpec { kind: TaskKind::Addition, operand_digits: [1, 1], samples: 200, ..GrammarSpec::default() };
    assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
    let spec = GrammarSpec { operand_digits: [0, 2], ..GrammarSpec::default() };
    assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
}

#[test]
fn uniform_model_perplexity_is_vocab_size() {
    let mut p = small_model(1);
    p.get_mut("ln_f.gain").data_mut().fill(0.0);
    let c = generate_heldout(&GrammarSpec::default(), 20).unwrap();
    let ppl = perplexity(&p, &c).unwrap();
    assert!((ppl - 259.0).abs() < 0.01, "{ppl}");
}

#[test]
fn perplexity_matches_per_sample_recomputation() {
    let p = small_model(2).cast::<f64>();
    let c = generate_heldout(&GrammarSpec::default(), 45).unwrap();
    let tc = TokenizedCorpus::new(&c, 40);
    let mut losses = Vec::new();
    for i in 0..tc.len() {
        let b = tc.batch(&[i]);
        let l = per_token_loss(&p, &b.tokens).unwrap();
        losses.extend(b.tokens.masked_positions().iter().map(|&f| l.data()[f]));
    }
    let oracle = (losses.iter().sum::<f64>() / losses.len() as f64).exp();
    let ppl = perplexity(&p, &c).unwrap();
    assert!((ppl - oracle).abs() / oracle < 1e-6);
    assert!(ppl >= 1.0);
}

#[test]
fn empty_corpus_is_a_contract_error() {
    let p = small_model(1);
    let empty = Corpus::new(vec![]).unwrap();
    assert!(matches!(perplexity(&p, &empty), Err(Error::Contract(_))));
    assert!(matches!(exact_match(&p, &empty), Err(Error::Contract(_))));
}

#[test]
fn untrained_model_rarely_matches() {
    let p = small_model(3);
    let c = generate_heldout(&GrammarSpec::default(), 30).unwrap();
    let rate = exact_match(&p, &c).unwrap();
    assert!(rate < 0.1);
    assert_eq!(rate, exact_match(&p, &c).unwrap());
}

#[test]
fn memorized_pairs_match_exactly() {
    let p = small_model(4);
    let c = Corpus::new((0..10).map(|i| SamplePair::new(format!("m{i}"), format!("{i}+{i}="), (3 * i + 1).to_string())).collect()).unwrap();
    let before = perplexity(&p, &c).unwrap();
    let cfg = TrainConfig {
        mode: TrainMode::FullSft,
        peak_lr: 1e-2,
        batch_size: 10,
        total_steps: Some(150),
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let (q, _) = train(&p, &c, None, &cfg).unwrap();
    let after = perplexity(&q, &c).unwrap();
    assert!(after < 1.05 && after < before, "{before} -> {after}");
    assert_eq!(exact_match(&q, &c).unwrap(), 1.0);
}

#[test]
fn distinct_n_examples() {
    assert_eq!(distinct_n(&[vec![5, 5, 5, 5]], 1).unwrap(), 0.25);
    assert_eq!(distinct_n(&[vec![1, 2, 3, 4]], 2).unwrap(), 1.0);
    assert_eq!(distinct_n(&[vec![1, 2, 3, 4], vec![1, 2, 3, 4]], 2).unwrap(), 0.5);
    assert!(matches!(distinct_n(&[vec![1]], 2), Err(Error::Contract(_))));
    assert!(matches!(distinct_n(&[vec![1, 2]], 0), Err(Error::Contract(_))));
}

#[test]
fn report_round_trip_and_fingerprint() {
    let fp = config_fingerprint(&TrainConfig::default()).unwrap();
    assert_eq!(fp.len(), 64);
    assert_eq!(fp, config_fingerprint(&TrainConfig::default()).unwrap());
    assert_ne!(fp, config_fingerprint(&TrainConfig { rho: 0.8, ..TrainConfig::default() }).unwrap());

    let p = small_model(5);
    let c = generate_heldout(&GrammarSpec::default(), 10).unwrap();
    let metrics = PartitionMetrics { auc: 0.8, precision_at_rho: 0.5, recall_at_rho: 0.25 };
    let report = evaluate(&p, &c, Some(&c), Some(metrics), &fp).unwrap();
    assert_eq!(report.config_fingerprint, fp);
    assert_eq!(report.noisy_heldout_perplexity, Some(report.clean_heldout_perplexity));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.json");
    emit_report(&report, &path).unwrap();
    assert_eq!(read_eval_report(&path).unwrap(), report);
    assert!(emit_report(&report, dir.path().join("missing/eval.json")).is_err());

    let rows: Vec<SweepRow> = [0.5, 0.7, 0.9].iter().map(|&rho| SweepRow::new("forget", rho, 1.0 - rho, 1e-4, 0.25, &report)).collect();
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("mode,rho,forget_rate,t_min,t_max,"));
    assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), rows);
}
