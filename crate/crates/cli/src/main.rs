use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lethe::pipeline::{self, RunConfig, RunDir, SweepKind};
use lethe::scoring::{Level, ThresholdMode};
use lethe::trainer::{ScheduleMode, TrainMode};

#[derive(Parser, Debug)]
#[command(name = "lethe", version, about = "Selective learn/forget fine-tuning of a tiny byte-level language model")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate the synthetic training pool and the clean held-out pool.
    Gen,
    /// Corrupt response bytes and record ground-truth noise masks.
    InjectNoise,
    /// Split the corpus into disjoint reference and training slices.
    Split,
    /// Initialize the base model and fine-tune the reference model.
    TrainRef,
    /// Score every training token by its loss change under the reference model.
    Score,
    /// Cut the scored tokens into learn / forget sets.
    Partition,
    /// Fine-tune the base model in the selected mode.
    Train,
    /// Evaluate the checkpoint of the selected mode.
    Eval,
    /// Retrain and evaluate over a grid of rho, forget rates or (t_min, t_max).
    Sweep,
    /// Collect the per-mode evaluations into report.json / report.csv.
    Report,
    /// Every stage, all three modes, then the report.
    Run,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    FullSft,
    Ignore,
    Forget,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LevelArg {
    Token,
    Seq,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ThresholdArg {
    Quantile,
    Zero,
}

#[derive(clap::Args, Debug)]
struct Opts {
    /// Run configuration (JSON); flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// External JSONL corpus for inject-noise / split.
    #[arg(long, global = true, value_name = "PATH")]
    corpus: Option<PathBuf>,
    #[arg(long, global = true, value_name = "F")]
    ref_fraction: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    noise_rate: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    rho: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    forget_rate: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    t_min: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    t_max: Option<f64>,
    /// paper-literal | affine | constant:V
    #[arg(long, global = true, value_name = "SCHEDULE", value_parser = parse_schedule)]
    schedule: Option<ScheduleMode>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum)]
    level: Option<LevelArg>,
    #[arg(long, global = true, value_enum)]
    threshold: Option<ThresholdArg>,
    /// Total optimizer steps (default: epochs over the data).
    #[arg(long, global = true, value_name = "N")]
    steps: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long, global = true, value_name = "F")]
    lr: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR", default_value = "lethe-run")]
    out: PathBuf,
    /// Score and evaluate in 64-bit.
    #[arg(long, global = true)]
    f64: bool,
    /// Synthetic training-pool size.
    #[arg(long, global = true, value_name = "N")]
    samples: Option<usize>,
    /// Synthetic held-out pool size.
    #[arg(long, global = true, value_name = "N")]
    heldout: Option<usize>,
    /// Sweep axis.
    #[arg(long, global = true, value_name = "rho|forget-rate|t-grid", value_parser = parse_sweep, default_value = "rho")]
    sweep: SweepKind,
    /// Comma-separated grid points; t-grid points are t_min:t_max.
    #[arg(long, global = true, value_name = "LIST")]
    grid: Option<String>,
}

fn parse_schedule(s: &str) -> Result<ScheduleMode, String> {
    s.parse().map_err(|e: lethe::Error| e.to_string())
}

fn parse_sweep(s: &str) -> Result<SweepKind, String> {
    s.parse().map_err(|e: lethe::Error| e.to_string())
}

impl Opts {
    fn run_config(&self) -> lethe::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        let t = &mut cfg.train;
        macro_rules! set {
            ($flag:expr, $slot:expr) => {
                if let Some(v) = $flag {
                    $slot = v;
                }
            };
        }
        set!(self.rho, t.rho);
        set!(self.t_min, t.t_min);
        set!(self.t_max, t.t_max);
        set!(self.schedule, t.schedule_mode);
        set!(self.batch_size, t.batch_size);
        set!(self.lr, t.peak_lr);
        if let Some(fr) = self.forget_rate {
            t.forget_rate = Some(fr);
        }
        if let Some(n) = self.steps {
            t.total_steps = Some(n);
        }
        if let Some(m) = self.mode {
            t.mode = match m {
                ModeArg::FullSft => TrainMode::FullSft,
                ModeArg::Ignore => TrainMode::Ignore,
                ModeArg::Forget => TrainMode::Forget,
            };
        }
        if let Some(l) = self.level {
            t.level = match l {
                LevelArg::Token => Level::Token,
                LevelArg::Seq => Level::Sequence,
            };
        }
        if let Some(th) = self.threshold {
            t.threshold_mode = match th {
                ThresholdArg::Quantile => ThresholdMode::Quantile,
                ThresholdArg::Zero => ThresholdMode::Zero,
            };
        }
        set!(self.ref_fraction, cfg.ref_fraction);
        set!(self.noise_rate, cfg.noise_rate);
        set!(self.seed, cfg.seed);
        set!(self.samples, cfg.grammar.samples);
        set!(self.heldout, cfg.heldout_samples);
        if self.f64 {
            cfg.f64 = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(command: Command, opts: &Opts) -> lethe::Result<()> {
    let cfg = opts.run_config()?;
    let mut dir = RunDir::open(&opts.out)?;
    if let Some(p) = &opts.config {
        dir.add_config_file(&p.display().to_string());
    }
    let corpus = opts.corpus.as_deref();
    match command {
        Command::Gen => pipeline::stage_gen(&mut dir, &cfg)?,
        Command::InjectNoise => pipeline::stage_inject_noise(&mut dir, &cfg, corpus)?,
        Command::Split => pipeline::stage_split(&mut dir, &cfg, corpus)?,
        Command::TrainRef => pipeline::stage_train_ref(&mut dir, &cfg)?,
        Command::Score => pipeline::stage_score(&mut dir, &cfg)?,
        Command::Partition => pipeline::stage_partition(&mut dir, &cfg)?,
        Command::Train => pipeline::stage_train(&mut dir, &cfg)?,
        Command::Eval => {
            let r = pipeline::stage_eval(&mut dir, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Sweep => {
            let rows = pipeline::stage_sweep(&mut dir, &cfg, opts.sweep, opts.grid.as_deref())?;
            eprintln!("{} grid points -> {}", rows.len(), dir.path(&pipeline::sweep_name(opts.sweep)).display());
        }
        Command::Report => {
            pipeline::stage_report(&mut dir, &cfg)?;
            print!("{}", std::fs::read_to_string(dir.path(pipeline::REPORT_CSV)).unwrap_or_default());
        }
        Command::Run => {
            pipeline::run_all(&mut dir, &cfg)?;
            print!("{}", std::fs::read_to_string(dir.path(pipeline::REPORT_CSV)).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match dispatch(cli.command, &cli.opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lethe: {e}");
            ExitCode::from(1)
        }
    }
}
