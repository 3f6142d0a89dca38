use super::{ScheduleMode, TrainConfig};
use crate::error::{Error, Result};

fn check_step(step: usize, config: &TrainConfig) -> Result<usize> {
    let total = config
        .total_steps
        .ok_or_else(|| Error::contract("schedule needs a resolved total_steps"))?;
    if step > total {
        return Err(Error::contract(format!("step {step} beyond total_steps {total}")));
    }
    Ok(total)
}

/// Forgetting weight λ at `step` of `total_steps`.
pub fn lambda_at(step: usize, config: &TrainConfig) -> Result<f64> {
    let total = check_step(step, config)?;
    let progress = step as f64 / total as f64;
    let span = config.t_max - config.t_min;
    Ok(match config.schedule_mode {
        ScheduleMode::PaperLiteral => span * progress,
        ScheduleMode::Affine => config.t_min + span * progress,
        ScheduleMode::Constant(v) => v,
    })
}

/// Steps of linear warmup: `round(warmup_ratio · total_steps)`.
pub fn warmup_steps(config: &TrainConfig) -> Result<usize> {
    let total = check_step(0, config)?;
    Ok(((config.warmup_ratio * total as f64).round() as usize).min(total))
}

/// Linear warmup from 0 to `peak_lr`, then linear decay to 0 at `total_steps`.
pub fn lr_at(step: usize, config: &TrainConfig) -> Result<f64> {
    let total = check_step(step, config)?;
    let warmup = warmup_steps(config)?;
    let peak = config.peak_lr;
    Ok(if step < warmup {
        peak * (step as f64 / warmup as f64)
    } else if warmup == total {
        peak
    } else {
        peak * ((total - step) as f64 / (total - warmup) as f64)
    })
}
