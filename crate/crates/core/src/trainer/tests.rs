use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::data::{Corpus, SamplePair, VOCAB_SIZE};
use crate::engine::Tensor;
use crate::error::Error;
use crate::model::{encode_checkpoint, ModelConfig, Parameters};
use crate::scoring::{partition_tokens, score_and_partition_sequences, Label, Level, Partition, ThresholdMode, TokenScore, TokenScoreTable};

fn resolved(total: usize) -> TrainConfig {
    TrainConfig {
        total_steps: Some(total),
        ..TrainConfig::default()
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: VOCAB_SIZE,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        ffn_mult: 2,
        max_context: 24,
        init_seed: 3,
    }
}

fn addition_corpus(n: usize) -> Corpus {
    Corpus::new(
        (0..n)
            .map(|i| {
                let (a, b) = (i % 10, (i * 7) % 10);
                SamplePair::new(format!("t{i:03}"), format!("{a}+{b}="), (a + b).to_string())
            })
            .collect(),
    )
    .unwrap()
}

fn fast(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        peak_lr: 3e-3,
        batch_size: 4,
        epochs: 2,
        train_seed: 5,
        ..TrainConfig::default()
    }
}

fn base_table(params: &Parameters<f32>, corpus: &Corpus) -> TokenScoreTable {
    // a deterministic but uneven score table from a second model
    let other = Parameters::<f32>::init(&ModelConfig { init_seed: 9, ..tiny_config() }).unwrap();
    let other = Parameters::from_tensors(tiny_config(), other.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()).unwrap();
    crate::scoring::score_tokens(params, &other, corpus, 8).unwrap()
}

#[test]
fn literal_schedule_endpoints() {
    let cfg = resolved(1000);
    assert_eq!(lambda_at(0, &cfg).unwrap(), 0.0);
    assert_eq!(lambda_at(1000, &cfg).unwrap(), cfg.t_max - cfg.t_min);
    assert_eq!(lambda_at(1000, &cfg).unwrap(), 0.2499);
    assert_eq!(lambda_at(500, &cfg).unwrap(), 0.2499 / 2.0);
}

#[test]
fn affine_and_constant_schedules() {
    let cfg = TrainConfig {
        schedule_mode: ScheduleMode::Affine,
        ..resolved(10)
    };
    assert_eq!(lambda_at(0, &cfg).unwrap(), 1e-4);
    assert_eq!(lambda_at(10, &cfg).unwrap(), 0.25);
    let cfg = TrainConfig {
        schedule_mode: ScheduleMode::Constant(0.0),
        ..resolved(10)
    };
    assert!((0..=10).all(|s| lambda_at(s, &cfg).unwrap() == 0.0));
}

#[test]
fn schedule_step_out_of_range() {
    assert!(matches!(lambda_at(11, &resolved(10)), Err(Error::Contract(_))));
    assert!(matches!(lr_at(11, &resolved(10)), Err(Error::Contract(_))));
    assert!(matches!(lambda_at(0, &TrainConfig::default()), Err(Error::Contract(_))));
}

#[test]
fn lr_warmup_and_decay_endpoints() {
    let cfg = resolved(100);
    assert_eq!(warmup_steps(&cfg).unwrap(), 3);
    assert_eq!(lr_at(0, &cfg).unwrap(), 0.0);
    assert_eq!(lr_at(3, &cfg).unwrap(), 1e-4);
    assert_eq!(lr_at(100, &cfg).unwrap(), 0.0);
    assert!((lr_at(1, &cfg).unwrap() - 1e-4 / 3.0).abs() < 1e-20);
    assert!((lr_at(51, &cfg).unwrap() - 1e-4 * 49.0 / 97.0).abs() < 1e-20);

    let short = resolved(10);
    assert_eq!(warmup_steps(&short).unwrap(), 0);
    assert_eq!(lr_at(0, &short).unwrap(), 1e-4);
    assert_eq!(lr_at(10, &short).unwrap(), 0.0);
}

#[test]
fn schedule_strings() {
    assert_eq!("paper_literal".parse::<ScheduleMode>().unwrap(), ScheduleMode::PaperLiteral);
    assert_eq!("paper-literal".parse::<ScheduleMode>().unwrap(), ScheduleMode::PaperLiteral);
    assert_eq!("affine".parse::<ScheduleMode>().unwrap(), ScheduleMode::Affine);
    assert_eq!("constant(0.5)".parse::<ScheduleMode>().unwrap(), ScheduleMode::Constant(0.5));
    assert_eq!("constant:0".parse::<ScheduleMode>().unwrap(), ScheduleMode::Constant(0.0));
    assert!("cosine".parse::<ScheduleMode>().is_err());
    assert_eq!(ScheduleMode::Constant(0.25).to_string(), "constant(0.25)");
}

#[test]
fn config_json_keys_and_defaults() {
    let cfg = TrainConfig::from_json(r#"{"mode":"ignore","rho":0.8,"schedule_mode":"constant(0)","total_steps":7}"#).unwrap();
    assert_eq!(cfg.mode, TrainMode::Ignore);
    assert_eq!(cfg.schedule_mode, ScheduleMode::Constant(0.0));
    assert_eq!((cfg.batch_size, cfg.peak_lr, cfg.warmup_ratio, cfg.weight_decay), (24, 1e-4, 0.03, 0.01));
    let round = TrainConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(round, cfg);
    assert!(TrainConfig::from_json(r#"{"learning_rate":1}"#).is_err());
    assert!(matches!(TrainConfig::from_json(r#"{"rho":1.0}"#), Err(Error::Config(_))));
    assert!(matches!(TrainConfig::from_json(r#"{"rho":0.7,"forget_rate":0.5}"#), Err(Error::Config(_))));
    assert!(matches!(TrainConfig::from_json(r#"{"t_min":1,"t_max":0.5}"#), Err(Error::Config(_))));
    assert!(matches!(TrainConfig::from_json(r#"{"total_steps":0}"#), Err(Error::Config(_))));
}

#[test]
fn dual_objective_arithmetic() {
    use Label::*;
    let c = forgetting_loss(&[1.0, 3.0, 2.0], &[Positive, Positive, Negative], 0.5).unwrap().unwrap();
    assert_eq!((c.positive, c.negative, c.combined), (2.0, 2.0, 1.0));

    let c = forgetting_loss(&[1.0, 3.0, 2.0], &[Positive, Positive, Negative], 0.0).unwrap().unwrap();
    assert_eq!(c.combined, 2.0);

    let c = forgetting_loss(&[1.0, 3.0], &[Positive, Positive], 0.7).unwrap().unwrap();
    assert_eq!((c.combined, c.negative), (2.0, 0.0));

    let c = forgetting_loss(&[4.0], &[Negative], 0.5).unwrap().unwrap();
    assert_eq!(c.combined, -2.0);

    assert_eq!(forgetting_loss(&[1.0], &[Discarded], 0.5).unwrap(), None);
    assert!(forgetting_loss(&[1.0], &[], 0.5).is_err());
}

#[test]
fn discarded_tokens_do_not_move_the_objective() {
    use Label::*;
    let a = forgetting_loss(&[1.0, 2.0, 5.0], &[Positive, Negative, Positive], 0.3).unwrap();
    let b = forgetting_loss(&[9.0, 1.0, 2.0, 7.0, 5.0], &[Discarded, Positive, Negative, Discarded, Positive], 0.3).unwrap();
    assert_eq!(a, b);
}

fn ten_token_table() -> TokenScoreTable {
    TokenScoreTable::new(
        (0..10)
            .map(|i| TokenScore::from_losses("s", i, 10, f64::from(i) * 0.1, 0.0))
            .collect(),
    )
}

#[test]
fn forget_rate_counts() {
    let t = ten_token_table();
    let p = partition_tokens(&t, 0.7, ThresholdMode::Quantile).unwrap();
    let q = apply_forget_rate(&p, &t, 0.2).unwrap();
    assert_eq!((q.positive.len(), q.negative.len(), q.discarded.len()), (7, 2, 1));
    // lowest qualities are the highest base losses here: positions 1 and 0 are lowest
    assert_eq!(q.negative.iter().map(|k| k.position).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(q.positive, p.positive);

    let full = apply_forget_rate(&p, &t, 1.0 - 0.7).unwrap();
    assert_eq!(full, p);

    let none = apply_forget_rate(&p, &t, 0.0).unwrap();
    assert!(none.negative.is_empty());
    assert_eq!(none.discarded.len(), 3);

    assert!(matches!(apply_forget_rate(&p, &t, 0.31), Err(Error::Config(_))));
}

#[test]
fn zero_gradient_decay_shrinks_parameters() {
    let cfg = tiny_config();
    let mut p = Parameters::<f64>::init(&cfg).unwrap();
    let before = p.clone();
    let grads: BTreeMap<String, Tensor<f64>> = p.iter().map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape()))).collect();
    let mut state = OptimizerState::new(&p);
    let hp = AdamW { weight_decay: 0.1, ..AdamW::default() };
    adamw_step(&mut p, &grads, &mut state, 0.01, &hp).unwrap();
    for ((_, a), (_, b)) in p.iter().zip(before.iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y * (1.0 - 0.01 * 0.1)).abs() <= 1e-15 * y.abs().max(1e-300));
        }
    }
    let mut q = before.clone();
    let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
    adamw_step(&mut q, &grads, &mut OptimizerState::new(&before), 0.01, &hp).unwrap();
    assert!(q.bitwise_eq(&before));
}

#[test]
fn scalar_adamw_matches_recurrence() {
    let cfg = ModelConfig { vocab_size: 4, d_model: 1, n_heads: 1, n_layers: 1, ffn_mult: 1, max_context: 2, init_seed: 0 };
    let mut p = Parameters::<f64>::init(&cfg).unwrap();
    let (g, lr, k) = (0.3, 0.05, 25);
    let hp = AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 };
    let grads: BTreeMap<String, Tensor<f64>> = p.iter().map(|(n, t)| (n.to_string(), Tensor::full(t.shape(), g))).collect();
    let mut state = OptimizerState::new(&p);
    let start = p.get("ln_f.gain").data()[0];
    for _ in 0..k {
        adamw_step(&mut p, &grads, &mut state, lr, &hp).unwrap();
    }
    // independently written recurrence
    let (mut x, mut m, mut v) = (start, 0.0f64, 0.0f64);
    for t in 1..=k {
        x *= 1.0 - lr * 0.01;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        x -= lr * mh / (vh.sqrt() + 1e-8);
    }
    assert!((p.get("ln_f.gain").data()[0] - x).abs() < 1e-12);
    assert_eq!(state.step, k as u64);
}

#[test]
fn adamw_rejects_mismatched_shapes() {
    let mut p = Parameters::<f64>::init(&tiny_config()).unwrap();
    let mut grads: BTreeMap<String, Tensor<f64>> = p.iter().map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape()))).collect();
    grads.insert("ln_f.bias".into(), Tensor::zeros(&[3]));
    let mut state = OptimizerState::new(&p);
    assert!(adamw_step(&mut p, &grads, &mut state, 0.1, &AdamW::default()).is_err());
    assert_eq!(state.step, 0);
}

#[test]
fn clipping_caps_global_norm() {
    let mut g: BTreeMap<String, Tensor<f64>> = BTreeMap::new();
    g.insert("a".into(), Tensor::new(vec![2], vec![3.0, 0.0]).unwrap());
    g.insert("b".into(), Tensor::new(vec![1], vec![4.0]).unwrap());
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((global_norm(&g) - 1.0).abs() < 1e-15);
    assert_eq!(clip_global_norm(&mut g, 2.0), global_norm(&g));
}

#[test]
fn zero_step_reference_is_identity() {
    let p = Parameters::<f32>::init(&tiny_config()).unwrap();
    let (q, report) = train_reference(&p, &addition_corpus(4), &resolved(0)).unwrap();
    assert!(q.bitwise_eq(&p));
    assert!(report.rows.is_empty());
    assert!(matches!(train_reference(&p, &Corpus::new(vec![]).unwrap(), &resolved(1)), Err(Error::Config(_))));
}

#[test]
fn reference_training_is_deterministic_and_learns() {
    let p = Parameters::<f32>::init(&tiny_config()).unwrap();
    let c = addition_corpus(40);
    let cfg = TrainConfig { epochs: 8, ..fast(TrainMode::FullSft) };
    let (a, ra) = train_reference(&p, &c, &cfg).unwrap();
    let (b, rb) = train_reference(&p, &c, &cfg).unwrap();
    assert_eq!(encode_checkpoint(&a).unwrap(), encode_checkpoint(&b).unwrap());
    assert_eq!(ra, rb);
    assert_eq!(ra.rows.len(), 80);
    let last = ra.rows.last().unwrap().combined_loss;
    assert!(last < (VOCAB_SIZE as f64).ln() - 1.0, "final loss {last}");
}

#[test]
fn single_sample_loss_decreases() {
    let p = Parameters::<f32>::init(&tiny_config()).unwrap();
    let c = addition_corpus(1);
    let cfg = TrainConfig { total_steps: Some(50), warmup_ratio: 0.0, ..fast(TrainMode::FullSft) };
    let (_, report) = train(&p, &c, None, &cfg).unwrap();
    let losses: Vec<f64> = report.rows.iter().map(|r| r.combined_loss).collect();
    assert_eq!(losses.len(), 50);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

fn noisy_setup() -> (Parameters<f32>, Corpus, Partition) {
    let p = Parameters::<f32>::init(&tiny_config()).unwrap();
    let c = addition_corpus(30);
    let t = base_table(&p, &c);
    let part = partition_tokens(&t, 0.6, ThresholdMode::Quantile).unwrap();
    (p, c, part)
}

#[test]
fn ignoring_equals_forgetting_with_zero_lambda() {
    let (p, c, part) = noisy_setup();
    let ignore = fast(TrainMode::Ignore);
    let forget = TrainConfig { schedule_mode: ScheduleMode::Constant(0.0), ..fast(TrainMode::Forget) };
    let (a, ra) = train(&p, &c, Some(&part), &ignore).unwrap();
    let (b, rb) = train(&p, &c, Some(&part), &forget).unwrap();
    assert_eq!(encode_checkpoint(&a).unwrap(), encode_checkpoint(&b).unwrap());
    let (mut x, mut y) = (Vec::new(), Vec::new());
    ra.write_csv(&mut x).unwrap();
    rb.write_csv(&mut y).unwrap();
    assert_eq!(x, y);
    assert_eq!(ra.summary, rb.summary);
}

#[test]
fn forgetting_changes_the_trajectory() {
    let (p, c, part) = noisy_setup();
    let (a, _) = train(&p, &c, Some(&part), &fast(TrainMode::Ignore)).unwrap();
    let forget = TrainConfig { t_max: 1.0, ..fast(TrainMode::Forget) };
    let (b, rb) = train(&p, &c, Some(&part), &forget).unwrap();
    assert!(!a.bitwise_eq(&b));
    for r in &rb.rows {
        assert_eq!(r.combined_loss, r.positive_loss - r.lambda * r.negative_loss);
        assert!(r.lambda >= 0.0 && r.lambda < 1.0 - 1e-4);
    }
    let lambdas: Vec<f64> = rb.rows.iter().map(|r| r.lambda).collect();
    assert!(lambdas.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn report_csv_round_trip() {
    let (p, c, part) = noisy_setup();
    let (_, r) = train(&p, &c, Some(&part), &fast(TrainMode::Forget)).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf.clone()).unwrap().starts_with("step,lr,lambda,positive_loss,negative_loss,combined_loss\n"));
    assert_eq!(read_report_csv(buf.as_slice()).unwrap(), r.rows);
}

#[test]
fn sequence_partitions_train_at_sequence_level() {
    let (p, c, _) = noisy_setup();
    let t = base_table(&p, &c);
    let seq = score_and_partition_sequences(&t, 0.6).unwrap();
    let token_cfg = fast(TrainMode::Forget);
    assert!(matches!(train(&p, &c, Some(&seq), &token_cfg), Err(Error::Contract(_))));
    let cfg = TrainConfig { level: Level::Sequence, ..token_cfg };
    train(&p, &c, Some(&seq), &cfg).unwrap();
}

#[test]
fn partition_must_cover_training_tokens() {
    let (p, c, mut part) = noisy_setup();
    part.positive.pop();
    assert!(matches!(train(&p, &c, Some(&part), &fast(TrainMode::Forget)), Err(Error::Contract(_))));
    assert!(matches!(train(&p, &c, None, &fast(TrainMode::Ignore)), Err(Error::Contract(_))));
}

#[test]
fn all_discarded_batches_are_skipped() {
    let (p, c, part) = noisy_setup();
    let mut all_discarded = part.clone();
    all_discarded.discarded = part.positive.iter().chain(&part.negative).cloned().collect();
    all_discarded.positive.clear();
    all_discarded.negative.clear();
    let (q, r) = train(&p, &c, Some(&all_discarded), &fast(TrainMode::Forget)).unwrap();
    assert!(r.rows.is_empty());
    assert_eq!(r.summary.skipped_steps, r.summary.total_steps);
    assert!(q.bitwise_eq(&p));
}

#[test]
fn objective_gradient_splits_into_components() {
    let p = Parameters::<f64>::init(&tiny_config()).unwrap();
    let c = addition_corpus(6);
    let tc = crate::data::TokenizedCorpus::new(&c, 24);
    let order: Vec<usize> = (0..tc.len()).collect();
    let batch = tc.batch(&order);
    let masked = batch.masked_tokens();
    let targets: Vec<usize> = masked.iter().map(|m| m.flat).collect();
    let labels: Vec<Label> = (0..targets.len())
        .map(|i| if i % 3 == 0 { Label::Negative } else { Label::Positive })
        .collect();
    let lambda = 0.37;
    let both = objective_weights(&labels, lambda).unwrap();
    let pos = objective_weights(&labels, 0.0).unwrap();
    let n_neg = labels.iter().filter(|&&l| l == Label::Negative).count() as f64;
    let neg: Vec<f64> = labels.iter().map(|&l| if l == Label::Negative { 1.0 / n_neg } else { 0.0 }).collect();
    let (_, g) = batch_gradients(&p, &batch.tokens, &targets, &both).unwrap();
    let (_, gp) = batch_gradients(&p, &batch.tokens, &targets, &pos).unwrap();
    let (_, gn) = batch_gradients(&p, &batch.tokens, &targets, &neg).unwrap();
    let mut worst = 0.0f64;
    for (name, t) in &g {
        for ((a, b), c) in t.data().iter().zip(gp[name].data()).zip(gn[name].data()) {
            let expected = b - lambda * c;
            worst = worst.max((a - expected).abs() / (expected.abs() + 1e-8));
        }
    }
    assert!(worst < 1e-5, "{worst}");
}

proptest! {
    #[test]
    fn lambda_is_nondecreasing(t_min in 0.0f64..1.0, span in 0.0f64..2.0, total in 1usize..500, affine in any::<bool>()) {
        let cfg = TrainConfig {
            t_min,
            t_max: t_min + span,
            schedule_mode: if affine { ScheduleMode::Affine } else { ScheduleMode::PaperLiteral },
            ..resolved(total)
        };
        let mut prev = f64::NEG_INFINITY;
        for s in 0..=total {
            let l = lambda_at(s, &cfg).unwrap();
            prop_assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn lr_stays_within_peak(total in 1usize..400, ratio in 0.0f64..0.5) {
        let cfg = TrainConfig { warmup_ratio: ratio, ..resolved(total) };
        let w = warmup_steps(&cfg).unwrap();
        prop_assert_eq!(lr_at(total, &cfg).unwrap(), if w == total { cfg.peak_lr } else { 0.0 });
        prop_assert_eq!(lr_at(w, &cfg).unwrap(), cfg.peak_lr);
        for s in 0..=total {
            let lr = lr_at(s, &cfg).unwrap();
            prop_assert!((0.0..=cfg.peak_lr).contains(&lr));
        }
    }
}
