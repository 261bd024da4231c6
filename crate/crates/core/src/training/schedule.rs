use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::TrainError;

/// Linear warmup from `warmup_lr` to `init_lr` over `warmup_steps`, then
/// cosine decay to `min_lr` at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64, TrainError> {
    let w = cfg.warmup_steps;
    if total_steps <= w {
        return Err(TrainError::Schedule(format!(
            "total steps {total_steps} must exceed warmup steps {w}; lower warmup_steps or train longer"
        )));
    }
    if step > total_steps {
        return Err(TrainError::Schedule(format!(
            "step {step} beyond total steps {total_steps}"
        )));
    }
    if step < w {
        return Ok(cfg.warmup_lr + (cfg.init_lr - cfg.warmup_lr) * step as f64 / w as f64);
    }
    if cfg.init_lr == cfg.min_lr {
        return Ok(cfg.init_lr);
    }
    let progress = (step - w) as f64 / (total_steps - w) as f64;
    // Written as a blend so both ends are exact: init_lr at step W and
    // min_lr at the last step.
    let b = 0.5 * (1.0 + (PI * progress).cos());
    Ok(cfg.init_lr * b + cfg.min_lr * (1.0 - b))
}
