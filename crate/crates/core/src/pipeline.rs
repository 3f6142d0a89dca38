//! Run directories: the effective run configuration, fixed artifact names,
//! one function per pipeline stage, and the hash-carrying manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ensure_disjoint, ingest_jsonl, inject_noise, split_ref_train, Corpus, SplitSpec, VOCAB_SIZE};
use crate::evalkit::{
    config_fingerprint, emit_report, evaluate, generate_heldout, generate_synthetic, read_eval_report,
    write_sweep_csv, EvalReport, GrammarSpec, SweepRow, TaskKind,
};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, Parameters};
use crate::scoring::{
    partition_metrics, partition_tokens, read_score_table, score_and_partition_sequences, score_tokens,
    write_score_table, Level, Partition, TokenScoreTable,
};
use crate::trainer::{apply_forget_rate, train, train_reference, TrainConfig, TrainMode, TrainReport};

pub const CORPUS: &str = "corpus.jsonl";
pub const HELDOUT: &str = "heldout.jsonl";
pub const NOISY: &str = "noisy.jsonl";
pub const NOISY_HELDOUT: &str = "heldout-noisy.jsonl";
pub const REF_SPLIT: &str = "ref.jsonl";
pub const TRAIN_SPLIT: &str = "train.jsonl";
pub const BASE_CKPT: &str = "base.ltc";
pub const REF_CKPT: &str = "ref.ltc";
pub const REF_REPORT: &str = "ref_report.csv";
pub const REF_SUMMARY: &str = "ref_summary.json";
pub const SCORES: &str = "scores.csv";
pub const PARTITION: &str = "partition.json";
pub const MANIFEST: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

pub fn checkpoint_name(mode: TrainMode) -> String {
    format!("{mode}.ltc")
}

pub fn report_name(mode: TrainMode) -> String {
    format!("{mode}_report.csv")
}

pub fn summary_name(mode: TrainMode) -> String {
    format!("{mode}_summary.json")
}

pub fn eval_name(mode: TrainMode) -> String {
    format!("eval-{mode}.json")
}

pub fn sweep_name(kind: SweepKind) -> String {
    format!("sweep-{kind}.csv")
}

/// Everything a run needs. Sub-config seeds are derived from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grammar: GrammarSpec,
    pub heldout_samples: usize,
    pub noise_rate: f64,
    pub ref_fraction: f64,
    pub model: ModelConfig,
    /// Reference-model training; `None` reuses `train` in full-token mode.
    pub reference: Option<TrainConfig>,
    pub train: TrainConfig,
    /// Score and evaluate in 64-bit (checkpoints stay 32-bit).
    pub f64: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            // single-pair recall: learnable by the small model within the
            // budget, so forgetting acts on a model that can tell noise apart
            grammar: GrammarSpec {
                kind: TaskKind::KeyValue,
                samples: 2000,
                kv_pairs: [1, 1],
                value_len: 5,
                ..GrammarSpec::default()
            },
            heldout_samples: 300,
            noise_rate: 0.3,
            ref_fraction: 0.2,
            model: ModelConfig {
                vocab_size: VOCAB_SIZE,
                d_model: 64,
                n_heads: 4,
                n_layers: 2,
                ffn_mult: 4,
                max_context: 48,
                init_seed: 0,
            },
            reference: None,
            train: TrainConfig {
                peak_lr: 3e-3,
                epochs: 15,
                // 0.25 drives the ascent term unbounded at this scale
                t_max: 0.03,
                ..TrainConfig::default()
            },
            f64: false,
        }
    }
}

/// Seeds derived from the master seed, one per random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub grammar: u64,
    pub init: u64,
    pub noise: u64,
    pub heldout_noise: u64,
    pub split: u64,
    pub train: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Seeds {
            grammar: seed,
            init: seed,
            noise: seed.wrapping_add(1),
            heldout_noise: seed.wrapping_add(2),
            split: seed.wrapping_add(3),
            train: seed.wrapping_add(4),
        }
    }
}

impl RunConfig {
    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    /// Copy with every sub-config seed overwritten from `seed`.
    pub fn seeded(&self) -> RunConfig {
        let s = self.seeds();
        let mut c = self.clone();
        c.grammar.seed = s.grammar;
        c.model.init_seed = s.init;
        c.train.train_seed = s.train;
        if let Some(r) = c.reference.as_mut() {
            r.train_seed = s.train;
        }
        c
    }

    pub fn reference_config(&self) -> TrainConfig {
        let mut r = self.reference.clone().unwrap_or_else(|| self.train.clone());
        r.mode = TrainMode::FullSft;
        r.train_seed = self.seeds().train;
        r
    }

    pub fn validate(&self) -> Result<()> {
        self.grammar.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.reference_config().validate()?;
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::config(format!("noise_rate {} outside [0, 1)", self.noise_rate)));
        }
        if !(self.ref_fraction > 0.0 && self.ref_fraction < 1.0) {
            return Err(Error::config(format!("ref_fraction {} outside (0, 1)", self.ref_fraction)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn fingerprint(&self) -> Result<String> {
        config_fingerprint(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed: bool,
    pub seeds: Seeds,
    /// Effective configuration the stage ran with.
    pub config: RunConfig,
    /// Artifact name (or path as given) → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub tool_version: String,
    pub config_files: Vec<String>,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// One output directory and its manifest. Paths recorded in the manifest are
/// relative artifact names, so identical runs in different directories
/// produce identical manifests.
pub struct RunDir {
    root: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let mpath = root.join(MANIFEST);
        let manifest = if mpath.exists() {
            let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
            serde_json::from_str(&text)?
        } else {
            Manifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                ..Manifest::default()
            }
        };
        Ok(RunDir { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn add_config_file(&mut self, path: &str) {
        if !self.manifest.config_files.iter().any(|p| p == path) {
            self.manifest.config_files.push(path.to_string());
        }
    }

    fn hashes(&self, names: &[Artifact]) -> Result<BTreeMap<String, String>> {
        names
            .iter()
            .map(|a| {
                let (key, path) = match a {
                    Artifact::Local(n) => (n.clone(), self.path(n)),
                    Artifact::External(p) => (p.display().to_string(), p.clone()),
                };
                Ok((key, sha256_file(&path)?))
            })
            .collect()
    }

    fn record(&mut self, stage: &str, cfg: &RunConfig, inputs: &[Artifact], outputs: &[Artifact]) -> Result<()> {
        if self.manifest.run_id.is_empty() {
            self.manifest.run_id = cfg.fingerprint()?[..16].to_string();
        }
        let record = StageRecord {
            completed: true,
            seeds: cfg.seeds(),
            config: cfg.clone(),
            inputs: self.hashes(inputs)?,
            outputs: self.hashes(outputs)?,
        };
        self.manifest.stages.insert(stage.to_string(), record);
        self.save()
    }

    pub fn save(&self) -> Result<()> {
        let path = self.path(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

enum Artifact {
    Local(String),
    External(PathBuf),
}

fn local(name: &str) -> Artifact {
    Artifact::Local(name.to_string())
}

fn source(dir: &RunDir, explicit: Option<&Path>, fallbacks: &[&str]) -> Result<Artifact> {
    if let Some(p) = explicit {
        return Ok(Artifact::External(p.to_path_buf()));
    }
    fallbacks
        .iter()
        .find(|n| dir.exists(n))
        .map(|n| local(n))
        .ok_or_else(|| Error::config(format!("no input corpus: expected one of {fallbacks:?} in {}", dir.root.display())))
}

fn read_corpus(dir: &RunDir, a: &Artifact) -> Result<Corpus> {
    match a {
        Artifact::Local(n) => ingest_jsonl(dir.path(n)),
        Artifact::External(p) => ingest_jsonl(p),
    }
}

fn need(dir: &RunDir, name: &str, stage: &str) -> Result<PathBuf> {
    let p = dir.path(name);
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::config(format!("{name} not found in {}; run `{stage}` first", dir.root.display())))
    }
}

/// Writes the synthetic training pool and the clean held-out pool.
pub fn stage_gen(dir: &mut RunDir, cfg: &RunConfig) -> Result<()> {
    let cfg = cfg.seeded();
    cfg.validate()?;
    generate_synthetic(&cfg.grammar)?.write_jsonl(dir.path(CORPUS))?;
    generate_heldout(&cfg.grammar, cfg.heldout_samples)?.write_jsonl(dir.path(HELDOUT))?;
    dir.record("gen", &cfg, &[], &[local(CORPUS), local(HELDOUT)])
}

/// Corrupts the training corpus (and the held-out pool, when present).
pub fn stage_inject_noise(dir: &mut RunDir, cfg: &RunConfig, corpus: Option<&Path>) -> Result<()> {
    let cfg = cfg.seeded();
    let s = cfg.seeds();
    let input = source(dir, corpus, &[CORPUS])?;
    let noisy = inject_noise(&read_corpus(dir, &input)?, cfg.noise_rate, s.noise)?;
    noisy.write_jsonl(dir.path(NOISY))?;
    let mut inputs = vec![input];
    let mut outputs = vec![local(NOISY)];
    if dir.exists(HELDOUT) {
        let held = ingest_jsonl(dir.path(HELDOUT))?;
        inject_noise(&held, cfg.noise_rate, s.heldout_noise)?.write_jsonl(dir.path(NOISY_HELDOUT))?;
        inputs.push(local(HELDOUT));
        outputs.push(local(NOISY_HELDOUT));
    }
    dir.record("inject-noise", &cfg, &inputs, &outputs)
}

/// Disjoint reference / training split of the (noisy, if present) corpus.
pub fn stage_split(dir: &mut RunDir, cfg: &RunConfig, corpus: Option<&Path>) -> Result<()> {
    let cfg = cfg.seeded();
    let input = source(dir, corpus, &[NOISY, CORPUS])?;
    let spec = SplitSpec {
        ref_fraction: cfg.ref_fraction,
        split_seed: cfg.seeds().split,
    };
    let (reference, training) = split_ref_train(&read_corpus(dir, &input)?, &spec)?;
    ensure_disjoint(&reference, &training)?;
    reference.write_jsonl(dir.path(REF_SPLIT))?;
    training.write_jsonl(dir.path(TRAIN_SPLIT))?;
    dir.record("split", &cfg, &[input], &[local(REF_SPLIT), local(TRAIN_SPLIT)])
}

fn save_report(dir: &RunDir, report: &mut TrainReport, ckpt: &str, csv: &str, summary: &str) -> Result<()> {
    report.summary.checkpoint = Some(ckpt.to_string());
    report.save(dir.path(csv), dir.path(summary))
}

/// Initializes the base model and fine-tunes the reference model on the reference split.
pub fn stage_train_ref(dir: &mut RunDir, cfg: &RunConfig) -> Result<()> {
    let cfg = cfg.seeded();
    cfg.validate()?;
    let d_ref = ingest_jsonl(need(dir, REF_SPLIT, "split")?)?;
    if dir.exists(TRAIN_SPLIT) {
        ensure_disjoint(&d_ref, &ingest_jsonl(dir.path(TRAIN_SPLIT))?)?;
    }
    let base = Parameters::<f32>::init(&cfg.model)?;
    save_checkpoint(&base, dir.path(BASE_CKPT))?;
    let (reference, mut report) = train_reference(&base, &d_ref, &cfg.reference_config())?;
    save_checkpoint(&reference, dir.path(REF_CKPT))?;
    save_report(dir, &mut report, REF_CKPT, REF_REPORT, REF_SUMMARY)?;
    dir.record(
        "train-ref",
        &cfg,
        &[local(REF_SPLIT)],
        &[local(BASE_CKPT), local(REF_CKPT), local(REF_REPORT), local(REF_SUMMARY)],
    )
}

fn score_with(cfg: &RunConfig, base: &Parameters<f32>, reference: &Parameters<f32>, corpus: &Corpus) -> Result<TokenScoreTable> {
    let batch = cfg.train.batch_size;
    if cfg.f64 {
        score_tokens(&base.cast::<f64>(), &reference.cast::<f64>(), corpus, batch)
    } else {
        score_tokens(base, reference, corpus, batch)
    }
}

/// Scores every response token of the training split.
pub fn stage_score(dir: &mut RunDir, cfg: &RunConfig) -> Result<()> {
    let cfg = cfg.seeded();
    let base = load_checkpoint(need(dir, BASE_CKPT, "train-ref")?)?;
    let reference = load_checkpoint(need(dir, REF_CKPT, "train-ref")?)?;
    let d_train = ingest_jsonl(need(dir, TRAIN_SPLIT, "split")?)?;
    let table = score_with(&cfg, &base, &reference, &d_train)?;
    write_score_table(&table, dir.path(SCORES))?;
    dir.record(
        "score",
        &cfg,
        &[local(BASE_CKPT), local(REF_CKPT), local(TRAIN_SPLIT)],
        &[local(SCORES)],
    )
}

/// Partition for `train` under `cfg`: token- or sequence-level, then the
/// forget rate (when set) trims the forget set.
pub fn build_partition(table: &TokenScoreTable, train: &TrainConfig) -> Result<Partition> {
    train.validate()?;
    let p = match train.level {
        Level::Token => partition_tokens(table, train.rho, train.threshold_mode)?,
        Level::Sequence => score_and_partition_sequences(table, train.rho)?,
    };
    match train.forget_rate {
        Some(fr) => apply_forget_rate(&p, table, fr),
        None => Ok(p),
    }
}

pub fn stage_partition(dir: &mut RunDir, cfg: &RunConfig) -> Result<()> {
    let cfg = cfg.seeded();
    let table = read_score_table(need(dir, SCORES, "score")?)?;
    build_partition(&table, &cfg.train)?.write_json(dir.path(PARTITION))?;
    dir.record("partition", &cfg, &[local(SCORES)], &[local(PARTITION)])
}

/// Fine-tunes the base model on the training split in `cfg.train.mode`.
pub fn stage_train(dir: &mut RunDir, cfg: &RunConfig) -> Result<()> {
    let cfg = cfg.seeded();
    cfg.validate()?;
    let mode = cfg.train.mode;
    let base = load_checkpoint(need(dir, BASE_CKPT, "train-ref")?)?;
    let d_train = ingest_jsonl(need(dir, TRAIN_SPLIT, "split")?)?;
    let mut inputs = vec![local(BASE_CKPT), local(TRAIN_SPLIT)];
    let partition = match mode {
        TrainMode::FullSft => None,
        _ => {
            inputs.push(local(PARTITION));
            Some(Partition::read_json(need(dir, PARTITION, "partition")?)?)
        }
    };
    let (params, mut report) = train(&base, &d_train, partition.as_ref(), &cfg.train)?;
    let (ckpt, csv, summary) = (checkpoint_name(mode), report_name(mode), summary_name(mode));
    save_checkpoint(&params, dir.path(&ckpt))?;
    save_report(dir, &mut report, &ckpt, &csv, &summary)?;
    dir.record(
        &format!("train:{mode}"),
        &cfg,
        &inputs,
        &[local(&ckpt), local(&csv), local(&summary)],
    )
}

fn evaluate_params(cfg: &RunConfig, params: &Parameters<f32>, heldout: &Corpus, noisy: Option<&Corpus>, table: Option<&TokenScoreTable>) -> Result<EvalReport> {
    let metrics = match table {
        Some(t) if !t.is_empty() && t.has_ground_truth() => partition_metrics(t, cfg.train.rho).ok(),
        _ => None,
    };
    let fp = cfg.fingerprint()?;
    if cfg.f64 {
        evaluate(&params.cast::<f64>(), heldout, noisy, metrics, &fp)
    } else {
        evaluate(params, heldout, noisy, metrics, &fp)
    }
}

/// Evaluates the checkpoint of `cfg.train.mode` on the held-out pools.
pub fn stage_eval(dir: &mut RunDir, cfg: &RunConfig) -> Result<EvalReport> {
    let cfg = cfg.seeded();
    let mode = cfg.train.mode;
    let ckpt = checkpoint_name(mode);
    let params = load_checkpoint(need(dir, &ckpt, "train")?)?;
    let heldout = ingest_jsonl(need(dir, HELDOUT, "gen")?)?;
    let mut inputs = vec![local(&ckpt), local(HELDOUT)];
    let noisy = if dir.exists(NOISY_HELDOUT) {
        inputs.push(local(NOISY_HELDOUT));
        Some(ingest_jsonl(dir.path(NOISY_HELDOUT))?)
    } else {
        None
    };
    let table = if dir.exists(SCORES) {
        inputs.push(local(SCORES));
        Some(read_score_table(dir.path(SCORES))?)
    } else {
        None
    };
    let report = evaluate_params(&cfg, &params, &heldout, noisy.as_ref(), table.as_ref())?;
    let name = eval_name(mode);
    emit_report(&report, dir.path(&name))?;
    dir.record(&format!("eval:{mode}"), &cfg, &inputs, &[local(&name)])?;
    Ok(report)
}

/// Which hyperparameter an ablation sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Rho,
    ForgetRate,
    /// `(t_min, t_max)` pairs.
    TGrid,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "rho" => Ok(SweepKind::Rho),
            "forget-rate" => Ok(SweepKind::ForgetRate),
            "t-grid" | "t" => Ok(SweepKind::TGrid),
            _ => Err(Error::config(format!("unknown sweep {s:?}; expected rho, forget-rate or t-grid"))),
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepKind::Rho => "rho",
            SweepKind::ForgetRate => "forget-rate",
            SweepKind::TGrid => "t-grid",
        })
    }
}

impl SweepKind {
    pub fn default_grid(self) -> &'static str {
        match self {
            SweepKind::Rho => "0.5,0.6,0.7,0.8,0.9",
            SweepKind::ForgetRate => "0,0.1,0.2,0.3",
            SweepKind::TGrid => "0.0001:0.25,0.001:0.25,0.0001:0.5,0.001:0.5,0.01:1",
        }
    }

    /// One training config per grid point, derived from `base`.
    pub fn configs(self, base: &TrainConfig, grid: &str) -> Result<Vec<TrainConfig>> {
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::config(format!("bad grid value {s:?}")))
        };
        let out: Result<Vec<TrainConfig>> = grid
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|item| {
                let mut c = base.clone();
                match self {
                    SweepKind::Rho => {
                        c.rho = num(item)?;
                        c.forget_rate = None;
                    }
                    SweepKind::ForgetRate => c.forget_rate = Some(num(item)?),
                    SweepKind::TGrid => {
                        let (lo, hi) = item
                            .split_once(':')
                            .ok_or_else(|| Error::config(format!("t-grid point {item:?} is not t_min:t_max")))?;
                        c.t_min = num(lo)?;
                        c.t_max = num(hi)?;
                    }
                }
                c.validate()?;
                Ok(c)
            })
            .collect();
        let out = out?;
        if out.is_empty() {
            return Err(Error::config("empty sweep grid"));
        }
        Ok(out)
    }
}

/// Partitions, trains and evaluates once per grid point; checkpoints are not kept.
pub fn stage_sweep(dir: &mut RunDir, cfg: &RunConfig, kind: SweepKind, grid: Option<&str>) -> Result<Vec<SweepRow>> {
    let cfg = cfg.seeded();
    let points = kind.configs(&cfg.train, grid.unwrap_or(kind.default_grid()))?;
    let base = load_checkpoint(need(dir, BASE_CKPT, "train-ref")?)?;
    let d_train = ingest_jsonl(need(dir, TRAIN_SPLIT, "split")?)?;
    let table = read_score_table(need(dir, SCORES, "score")?)?;
    let heldout = ingest_jsonl(need(dir, HELDOUT, "gen")?)?;
    let noisy = if dir.exists(NOISY_HELDOUT) {
        Some(ingest_jsonl(dir.path(NOISY_HELDOUT))?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(points.len());
    for train_cfg in points {
        let point = RunConfig {
            train: train_cfg.clone(),
            ..cfg.clone()
        };
        let partition = match train_cfg.mode {
            TrainMode::FullSft => None,
            _ => Some(build_partition(&table, &train_cfg)?),
        };
        let (params, _) = train(&base, &d_train, partition.as_ref(), &train_cfg)?;
        let report = evaluate_params(&point, &params, &heldout, noisy.as_ref(), Some(&table))?;
        rows.push(SweepRow::new(
            train_cfg.mode.as_str(),
            train_cfg.rho,
            train_cfg.effective_forget_rate(),
            train_cfg.t_min,
            train_cfg.t_max,
            &report,
        ));
    }
    let name = sweep_name(kind);
    let path = dir.path(&name);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_sweep_csv(&rows, file)?;
    let mut inputs = vec![local(BASE_CKPT), local(TRAIN_SPLIT), local(SCORES), local(HELDOUT)];
    if noisy.is_some() {
        inputs.push(local(NOISY_HELDOUT));
    }
    dir.record(&format!("sweep:{kind}"), &cfg, &inputs, &[local(&name)])?;
    Ok(rows)
}

/// Collects every `eval-<mode>.json` into `report.json` and `report.csv`.
pub fn stage_report(dir: &mut RunDir, cfg: &RunConfig) -> Result<BTreeMap<String, EvalReport>> {
    let cfg = cfg.seeded();
    let mut reports = BTreeMap::new();
    let mut rows = Vec::new();
    let mut inputs = Vec::new();
    for mode in [TrainMode::FullSft, TrainMode::Ignore, TrainMode::Forget] {
        let name = eval_name(mode);
        if !dir.exists(&name) {
            continue;
        }
        let report = read_eval_report(dir.path(&name))?;
        let train_cfg = dir
            .manifest
            .stages
            .get(&format!("eval:{mode}"))
            .map(|s| s.config.train.clone())
            .unwrap_or_else(|| cfg.train.clone());
        rows.push(SweepRow::new(
            mode.as_str(),
            train_cfg.rho,
            train_cfg.effective_forget_rate(),
            train_cfg.t_min,
            train_cfg.t_max,
            &report,
        ));
        reports.insert(mode.to_string(), report);
        inputs.push(local(&name));
    }
    if reports.is_empty() {
        return Err(Error::config(format!("no eval-*.json in {}; run `eval` first", dir.root.display())));
    }
    let json_path = dir.path(REPORT_JSON);
    std::fs::write(&json_path, serde_json::to_string_pretty(&reports)?).map_err(|e| Error::io(&json_path, e))?;
    let csv_path = dir.path(REPORT_CSV);
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_sweep_csv(&rows, file)?;
    dir.record("report", &cfg, &inputs, &[local(REPORT_JSON), local(REPORT_CSV)])?;
    Ok(reports)
}

/// gen → inject-noise → split → train-ref → score → partition →
/// train/eval for full_sft, ignore and forget → report.
pub fn run_all(dir: &mut RunDir, cfg: &RunConfig) -> Result<BTreeMap<String, EvalReport>> {
    stage_gen(dir, cfg)?;
    stage_inject_noise(dir, cfg, None)?;
    stage_split(dir, cfg, None)?;
    stage_train_ref(dir, cfg)?;
    stage_score(dir, cfg)?;
    stage_partition(dir, cfg)?;
    for mode in [TrainMode::FullSft, TrainMode::Ignore, TrainMode::Forget] {
        let mut c = cfg.clone();
        c.train.mode = mode;
        stage_train(dir, &c)?;
        stage_eval(dir, &c)?;
    }
    stage_report(dir, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_derive_from_master() {
        let s = Seeds::from_master(10);
        assert_eq!((s.grammar, s.init, s.noise, s.heldout_noise, s.split, s.train), (10, 10, 11, 12, 13, 14));
        let c = RunConfig { seed: 10, ..RunConfig::default() }.seeded();
        assert_eq!((c.grammar.seed, c.model.init_seed, c.train.train_seed), (10, 10, 14));
        assert_eq!(c.reference_config().mode, TrainMode::FullSft);
    }

    #[test]
    fn run_config_json_round_trip_and_partial_files() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial = RunConfig::from_json(r#"{"seed": 3, "noise_rate": 0.1}"#).unwrap();
        assert_eq!((partial.seed, partial.noise_rate), (3, 0.1));
        assert_eq!(partial.model, cfg.model);
        assert!(RunConfig::from_json(r#"{"sede": 3}"#).is_err());
    }

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
        let bad = RunConfig { ref_fraction: 1.0, ..RunConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_grids() {
        let base = TrainConfig::default();
        let kind: SweepKind = "forget_rate".parse().unwrap();
        let pts = kind.configs(&base, "0, 0.1,0.3").unwrap();
        assert_eq!(pts.iter().map(|c| c.forget_rate).collect::<Vec<_>>(), [Some(0.0), Some(0.1), Some(0.3)]);
        let pts = SweepKind::TGrid.configs(&base, "0.001:0.5").unwrap();
        assert_eq!((pts[0].t_min, pts[0].t_max), (0.001, 0.5));
        assert!(SweepKind::TGrid.configs(&base, "0.5").is_err());
        assert!(SweepKind::Rho.configs(&base, "1.2").is_err());
        assert!(SweepKind::Rho.configs(&base, "").is_err());
        for kind in [SweepKind::Rho, SweepKind::ForgetRate, SweepKind::TGrid] {
            assert_eq!(kind.to_string().parse::<SweepKind>().unwrap(), kind);
            kind.configs(&base, kind.default_grid()).unwrap();
        }
    }

    #[test]
    fn stages_report_missing_inputs() {
        let tmp = tempfile::tempdir().unwrap();
        let mut dir = RunDir::open(tmp.path()).unwrap();
        let cfg = RunConfig::default();
        for err in [
            stage_score(&mut dir, &cfg).unwrap_err(),
            stage_partition(&mut dir, &cfg).unwrap_err(),
            stage_report(&mut dir, &cfg).unwrap_err(),
        ] {
            assert!(matches!(err, Error::Config(_)), "{err}");
        }
        assert!(dir.manifest().stages.is_empty());
    }
}
