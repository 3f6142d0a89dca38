use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scoring::{Level, ThresholdMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Every response token is learned.
    FullSft,
    /// Positive tokens are learned, the rest contribute nothing.
    Ignore,
    /// Positive tokens are learned, forget-set tokens are unlearned with weight λ.
    Forget,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::FullSft => "full_sft",
            TrainMode::Ignore => "ignore",
            TrainMode::Forget => "forget",
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "full_sft" | "full" => Ok(TrainMode::FullSft),
            "ignore" => Ok(TrainMode::Ignore),
            "forget" => Ok(TrainMode::Forget),
            _ => Err(Error::config(format!("unknown mode {s:?}"))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the forgetting weight λ evolves over training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleMode {
    /// `(t_max − t_min)·step/total`.
    PaperLiteral,
    /// `t_min + (t_max − t_min)·step/total`.
    Affine,
    Constant(f64),
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        match norm.as_str() {
            "paper_literal" | "literal" => return Ok(ScheduleMode::PaperLiteral),
            "affine" => return Ok(ScheduleMode::Affine),
            _ => {}
        }
        let value = norm
            .strip_prefix("constant(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| norm.strip_prefix("constant:"))
            .or_else(|| norm.strip_prefix("constant="))
            .ok_or_else(|| Error::config(format!("unknown schedule {s:?}")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("bad constant schedule value {value:?}")))?;
        if !v.is_finite() {
            return Err(Error::config(format!("constant schedule value {v} is not finite")));
        }
        Ok(ScheduleMode::Constant(v))
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleMode::PaperLiteral => f.write_str("paper_literal"),
            ScheduleMode::Affine => f.write_str("affine"),
            ScheduleMode::Constant(v) => write!(f, "constant({v})"),
        }
    }
}

impl Serialize for ScheduleMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScheduleMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything that shapes a training run. Missing JSON keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub level: Level,
    pub threshold_mode: ThresholdMode,
    pub rho: f64,
    /// Fraction of all tokens actively forgotten; `None` forgets every negative token.
    pub forget_rate: Option<f64>,
    pub t_min: f64,
    pub t_max: f64,
    pub schedule_mode: ScheduleMode,
    /// Optimizer steps; `None` derives `epochs · ceil(samples / batch_size)`.
    pub total_steps: Option<usize>,
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub batch_size: usize,
    pub train_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Forget,
            level: Level::Token,
            threshold_mode: ThresholdMode::Quantile,
            rho: 0.7,
            forget_rate: None,
            t_min: 1e-4,
            t_max: 0.25,
            schedule_mode: ScheduleMode::PaperLiteral,
            total_steps: None,
            epochs: 1,
            peak_lr: 1e-4,
            warmup_ratio: 0.03,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: Some(1.0),
            batch_size: 24,
            train_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho {} outside (0, 1)", self.rho));
        }
        if let Some(fr) = self.forget_rate {
            if !(0.0..=1.0 - self.rho + 1e-12).contains(&fr) {
                return bad(format!("forget_rate {fr} outside [0, 1 - rho = {}]", 1.0 - self.rho));
            }
        }
        if !(self.t_min <= self.t_max) {
            return bad(format!("t_min {} exceeds t_max {}", self.t_min, self.t_max));
        }
        if self.total_steps == Some(0) {
            return bad("total_steps must be at least 1".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.peak_lr >= 0.0 && self.weight_decay >= 0.0 && self.eps > 0.0) {
            return bad("peak_lr and weight_decay must be non-negative, eps positive".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio {} outside [0, 1]", self.warmup_ratio));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must lie in [0, 1)".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip {c} must be positive"));
            }
        }
        Ok(())
    }

    /// Effective forget rate: the configured one, or `1 − ρ`.
    pub fn effective_forget_rate(&self) -> f64 {
        self.forget_rate.unwrap_or(1.0 - self.rho)
    }

    /// Steps for a corpus of `samples` trainable examples.
    pub fn steps_for(&self, samples: usize) -> usize {
        self.total_steps
            .unwrap_or_else(|| self.epochs * samples.div_ceil(self.batch_size))
    }

    /// Copy with `total_steps` fixed for a corpus of `samples` examples.
    pub fn resolved(&self, samples: usize) -> TrainConfig {
        TrainConfig {
            total_steps: Some(self.steps_for(samples)),
            ..self.clone()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
